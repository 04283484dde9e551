#pragma once

// Mini-batch SGD over  lambda * recon + (1 - lambda) * neighbor,  plus the
// checkpoint container.
//
// SSVH-CKPT layout (little-endian):
//   "SSVH-CKPT" | u32 version=1
//   | config: u64 D, M, l, H1, L, H2, G | u32 activation
//             | f64 lambda, eta, lr, lr_decay, clip_norm
//             | u64 batch, epochs, seed, k1, k2
//   | u64 epoch | str rng_state | u64 records, each u64 epoch, f64 recon, neighbor, total
//   | u64 tensors, each str name, u64 count, count f64   (visit_tensors order)
//   | u64 norm steps, each L f64 running_mean, L f64 running_var, f64 momentum, f64 epsilon
// where str is u64 length followed by raw bytes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ssvh/autoencoder.hpp"
#include "ssvh/datagen.hpp"
#include "ssvh/io.hpp"
#include "ssvh/neighborhood.hpp"

namespace ssvh {

inline constexpr std::string_view kCheckpointMagic = "SSVH-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string activation_name(Binarizer b) {
  switch (b) {
    case Binarizer::kHardSte:
      return "hard_sgn_ste";
    case Binarizer::kTanh:
      return "tanh_relax";
    case Binarizer::kSurrogate:
      return "surrogate";
  }
  return "hard_sgn_ste";
}

inline Binarizer parse_activation(const std::string& s) {
  if (s == "hard_sgn_ste") return Binarizer::kHardSte;
  if (s == "tanh_relax") return Binarizer::kTanh;
  if (s == "surrogate") return Binarizer::kSurrogate;
  throw Error(ErrorKind::kUsage, "unknown activation '" + s + "' (hard_sgn_ste | tanh_relax)");
}

struct TrainConfig {
  AutoencoderConfig model;
  double lambda = 0.001;
  double eta = 0.2;
  double learning_rate = 0.01;
  double lr_decay = 0.1;  // applied every ceil(epochs / 3) epochs
  double clip_norm = 5.0;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  std::uint64_t seed = 42;
  std::size_t k1 = 20;  // graph provenance only
  std::size_t k2 = 10;

  void validate() const {
    model.validate();
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::kUsage, "lambda must lie in [0, 1]");
    require(eta >= 0.0, ErrorKind::kUsage, "eta must be non-negative");
    require(learning_rate > 0.0, ErrorKind::kUsage, "learning rate must be positive");
    require(batch_size >= 2, ErrorKind::kUsage, "batch size must be at least 2");
  }

  double lr_at(std::size_t epoch) const {
    const std::size_t period = std::max<std::size_t>(1, (epochs + 2) / 3);
    return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / period));
  }
};

struct LossRecord {
  std::size_t epoch = 0;
  double recon = 0.0;
  double neighbor = 0.0;
  double total = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct Checkpoint {
  TrainConfig config;
  Model model;
  std::size_t epoch = 0;
  std::string rng_state;
  std::vector<LossRecord> history;
};

inline double total_loss(double recon, double neighbor, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::kUsage,
          "total_loss: lambda " + std::to_string(lambda) + " outside [0, 1]");
  return lambda * recon + (1.0 - lambda) * neighbor;
}

inline std::vector<std::span<double>> tensor_spans(Model& m) {
  std::vector<std::span<double>> out;
  visit_tensors(m, [&](const std::string&, std::span<double> xs) { out.push_back(xs); });
  return out;
}

inline std::vector<std::span<const double>> tensor_spans(const Model& m) {
  std::vector<std::span<const double>> out;
  visit_tensors(m, [&](const std::string&, std::span<const double> xs) { out.push_back(xs); });
  return out;
}

inline void sgd_step(Model& params, const Model& grads, double lr) {
  auto p = tensor_spans(params);
  auto g = tensor_spans(grads);
  require(p.size() == g.size(), ErrorKind::kShape, "sgd_step: parameter/gradient structure mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) {
    require(p[t].size() == g[t].size(), ErrorKind::kShape, "sgd_step: tensor size mismatch");
    for (std::size_t k = 0; k < p[t].size(); ++k) p[t][k] -= lr * g[t][k];
  }
}

inline double global_norm(const Model& grads) {
  double s = 0.0;
  for (auto t : tensor_spans(grads))
    for (double v : t) s += v * v;
  return std::sqrt(s);
}

// Rescales so the global gradient norm is at most max_norm; returns the
// norm before clipping.
inline double clip_global_norm(Model& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto t : tensor_spans(grads))
      for (double& v : t) v *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Mini-batch objective

struct BatchObjective {
  double recon = 0.0;     // mean per-video reconstruction loss
  double neighbor = 0.0;  // mean over all in-batch pairs
  double total = 0.0;
  std::size_t pairs = 0;
  Model grads;
  std::vector<BatchNormState> norms;  // running statistics after the forward pass
  Matrix h;
  Matrix code;
};

inline BatchObjective batch_objective(const Model& model, const Dataset& ds,
                                      std::span<const std::size_t> members,
                                      const NeighborGraph& graph, double lambda, double eta,
                                      bool with_grads) {
  const std::size_t batch = members.size();
  require(batch >= 2, ErrorKind::kUsage, "batch objective needs at least two videos");
  std::vector<const Matrix*> videos;
  for (std::size_t i : members) {
    require(i < ds.size() && i < graph.size(), ErrorKind::kData,
            "batch member " + std::to_string(i) + " outside dataset or graph");
    videos.push_back(&ds.videos[i]);
  }
  const SequenceBatch frames = to_time_major(videos);
  ForwardPass fp = run_autoencoder(model, frames, Mode::kTrain);
  ReconLoss rl = recon_loss(frames, fp.forward.frames, fp.backward.frames, fp.global.video);

  BatchObjective obj;
  obj.recon = rl.sum / static_cast<double>(batch);
  const Matrix& h = fp.encoded.h;
  const Matrix& code = fp.encoded.code;
  const std::size_t len = h.cols();
  obj.pairs = batch * (batch - 1) / 2;
  Matrix d_h(batch, len);
  const double pair_scale = (1.0 - lambda) / static_cast<double>(obj.pairs);
  for (std::size_t a = 0; a < batch; ++a)
    for (std::size_t b = a + 1; b < batch; ++b) {
      NeighborLoss nl = neighbor_loss(h.row(a), h.row(b), graph.sign(members[a], members[b]),
                                      code.row(a), code.row(b), eta);
      obj.neighbor += nl.loss;
      for (std::size_t k = 0; k < len; ++k) {
        d_h(a, k) += pair_scale * nl.grad_i[k];
        d_h(b, k) += pair_scale * nl.grad_j[k];
      }
    }
  obj.neighbor /= static_cast<double>(obj.pairs);
  obj.total = total_loss(obj.recon, obj.neighbor, lambda);
  obj.norms = fp.encoded.norms;
  obj.h = h;
  obj.code = code;
  if (!with_grads) return obj;

  obj.grads = zeros_like(model);
  const double recon_scale = lambda / static_cast<double>(batch);
  auto scaled = [&](std::vector<Matrix> ms) {
    for (Matrix& m : ms)
      for (double& v : m.values()) v *= recon_scale;
    return ms;
  };
  Matrix d_glob = rl.d_global;
  for (double& v : d_glob.values()) v *= recon_scale;
  autoencoder_backward(model, fp, scaled(std::move(rl.d_forward)), scaled(std::move(rl.d_backward)),
                       d_glob, d_h, obj.grads);
  return obj;
}

// Shuffled mini-batches; a trailing singleton joins the previous batch since
// batch normalization needs two rows.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, lo + batch_size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  require(!is.fail(), ErrorKind::kData, "checkpoint: corrupt rng state");
  return rng;
}

inline bool same_architecture(const AutoencoderConfig& a, const AutoencoderConfig& b) {
  return a.input_dim == b.input_dim && a.frames == b.frames && a.stride == b.stride &&
         a.encoder_hidden == b.encoder_hidden && a.code_len == b.code_len &&
         a.decoder_hidden == b.decoder_hidden && a.global_steps == b.global_steps &&
         a.binarizer == b.binarizer;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
};

// Trains from scratch, or continues `resume` up to cfg.epochs total epochs.
inline TrainResult train(const Dataset& ds, const NeighborGraph& graph, const TrainConfig& cfg,
                         const Checkpoint* resume = nullptr,
                         const std::function<void(const LossRecord&)>& on_epoch = {}) {
  cfg.validate();
  require(ds.size() == graph.size(), ErrorKind::kData,
          "train: dataset has " + std::to_string(ds.size()) + " videos but graph has " +
              std::to_string(graph.size()));
  require(ds.size() >= 2, ErrorKind::kUsage, "train: need at least two videos");
  require(ds.dim == cfg.model.input_dim && ds.frames == cfg.model.frames, ErrorKind::kShape,
          "train: dataset is " + std::to_string(ds.frames) + "x" + std::to_string(ds.dim) +
              " per video but the model expects " + std::to_string(cfg.model.frames) + "x" +
              std::to_string(cfg.model.input_dim));

  Checkpoint ck;
  Rng rng;
  if (resume) {
    require(same_architecture(resume->config.model, cfg.model), ErrorKind::kUsage,
            "train: checkpoint architecture (code_len " +
                std::to_string(resume->config.model.code_len) +
                ") does not match the requested configuration (code_len " +
                std::to_string(cfg.model.code_len) + ")");
    ck = *resume;
    ck.config = cfg;
    rng = rng_from_state(ck.rng_state);
  } else {
    rng.seed(cfg.seed);
    ck.config = cfg;
    ck.model = Model::random(cfg.model, rng);
  }

  const std::size_t batch_size = std::min(cfg.batch_size, ds.size());
  TrainResult result;
  for (std::size_t epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double recon_sum = 0.0, neighbor_sum = 0.0;
    std::size_t videos = 0, pairs = 0;
    const auto batches = make_batches(ds.size(), batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      BatchObjective obj =
          batch_objective(ck.model, ds, batches[b], graph, cfg.lambda, cfg.eta, true);
      if (!std::isfinite(obj.recon) || !std::isfinite(obj.neighbor))
        throw Error(ErrorKind::kNumeric,
                    "train: non-finite " +
                        std::string(std::isfinite(obj.recon) ? "neighbor" : "reconstruction") +
                        " loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                        std::to_string(b));
      clip_global_norm(obj.grads, cfg.clip_norm);
      sgd_step(ck.model, obj.grads, lr);
      ck.model.encoder.layer2.norm.resize(obj.norms.size());
      for (std::size_t s = 0; s < obj.norms.size(); ++s) {
        ck.model.encoder.layer2.norm[s].running_mean = obj.norms[s].running_mean;
        ck.model.encoder.layer2.norm[s].running_var = obj.norms[s].running_var;
      }
      recon_sum += obj.recon * static_cast<double>(batches[b].size());
      neighbor_sum += obj.neighbor * static_cast<double>(obj.pairs);
      videos += batches[b].size();
      pairs += obj.pairs;
    }
    LossRecord rec{epoch + 1, recon_sum / static_cast<double>(videos),
                   neighbor_sum / static_cast<double>(pairs), 0.0};
    rec.total = total_loss(rec.recon, rec.neighbor, cfg.lambda);
    ck.history.push_back(rec);
    result.history.push_back(rec);
    ck.epoch = epoch + 1;
    if (on_epoch) on_epoch(rec);
  }
  ck.rng_state = rng_state(rng);
  result.checkpoint = std::move(ck);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence

inline std::string encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const TrainConfig& c = ck.config;
  for (std::size_t v : {c.model.input_dim, c.model.frames, c.model.stride, c.model.encoder_hidden,
                        c.model.code_len, c.model.decoder_hidden, c.model.global_steps})
    w.u64(v);
  w.u32(static_cast<std::uint32_t>(c.model.binarizer));
  for (double v : {c.lambda, c.eta, c.learning_rate, c.lr_decay, c.clip_norm}) w.f64(v);
  for (std::uint64_t v : {std::uint64_t(c.batch_size), std::uint64_t(c.epochs), c.seed,
                          std::uint64_t(c.k1), std::uint64_t(c.k2)})
    w.u64(v);
  w.u64(ck.epoch);
  w.str(ck.rng_state);
  w.u64(ck.history.size());
  for (const LossRecord& r : ck.history) {
    w.u64(r.epoch);
    w.f64(r.recon);
    w.f64(r.neighbor);
    w.f64(r.total);
  }
  std::size_t count = 0;
  visit_tensors(ck.model, [&](const std::string&, std::span<const double>) { ++count; });
  w.u64(count);
  visit_tensors(ck.model, [&](const std::string& name, std::span<const double> xs) {
    w.str(name);
    w.u64(xs.size());
    for (double v : xs) w.f64(v);
  });
  const auto& norms = ck.model.encoder.layer2.norm;
  w.u64(norms.size());
  for (const BatchNormState& s : norms) {
    for (double v : s.running_mean) w.f64(v);
    for (double v : s.running_var) w.f64(v);
    w.f64(s.momentum);
    w.f64(s.epsilon);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::kData,
          what + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  TrainConfig& c = ck.config;
  c.model.input_dim = r.u64();
  c.model.frames = r.u64();
  c.model.stride = r.u64();
  c.model.encoder_hidden = r.u64();
  c.model.code_len = r.u64();
  c.model.decoder_hidden = r.u64();
  c.model.global_steps = r.u64();
  const std::uint32_t act = r.u32();
  require(act <= static_cast<std::uint32_t>(Binarizer::kTanh), ErrorKind::kData,
          what + ": unknown activation tag");
  c.model.binarizer = static_cast<Binarizer>(act);
  c.lambda = r.f64();
  c.eta = r.f64();
  c.learning_rate = r.f64();
  c.lr_decay = r.f64();
  c.clip_norm = r.f64();
  c.batch_size = r.u64();
  c.epochs = r.u64();
  c.seed = r.u64();
  c.k1 = r.u64();
  c.k2 = r.u64();
  try {
    c.model.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kData, what + ": corrupt config block (" + e.what() + ")");
  }
  // Refuse absurd sizes before allocating.
  r.need(io::checked_mul(c.model.code_len, 8, what));
  ck.epoch = r.u64();
  ck.rng_state = r.str();
  const std::uint64_t records = r.u64();
  r.need(io::checked_mul(records, 32, what));
  ck.history.resize(records);
  for (LossRecord& rec : ck.history) {
    rec.epoch = r.u64();
    rec.recon = r.f64();
    rec.neighbor = r.f64();
    rec.total = r.f64();
  }
  ck.model = Model::zeros(c.model);
  std::size_t expected = 0;
  visit_tensors(ck.model, [&](const std::string&, std::span<double>) { ++expected; });
  require(r.u64() == expected, ErrorKind::kData, what + ": tensor count mismatch");
  visit_tensors(ck.model, [&](const std::string& name, std::span<double> xs) {
    require(r.str() == name, ErrorKind::kData, what + ": expected tensor " + name);
    require(r.u64() == xs.size(), ErrorKind::kData, what + ": wrong size for tensor " + name);
    for (double& v : xs) v = r.f64();
  });
  auto& norms = ck.model.encoder.layer2.norm;
  require(r.u64() == norms.size(), ErrorKind::kData, what + ": normalization step count mismatch");
  for (BatchNormState& s : norms) {
    for (double& v : s.running_mean) v = r.f64();
    for (double& v : s.running_var) v = r.f64();
    s.momentum = r.f64();
    s.epsilon = r.f64();
  }
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path), path);
}

}  // namespace ssvh
