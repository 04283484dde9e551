#pragma once

// Hierarchical binary auto-encoder: a strided two-layer encoder that emits a
// binary code, and forward / backward / global decoders that reconstruct the
// frame sequence and its mean from that code.
//
// Batches are time-major: a SequenceBatch holds one (batch x D) matrix per
// frame.

#include <cstddef>
#include <string>
#include <vector>

#include "ssvh/numerics.hpp"
#include "ssvh/recurrent.hpp"

namespace ssvh {

using SequenceBatch = std::vector<Matrix>;

struct AutoencoderConfig {
  std::size_t input_dim = 0;         // D
  std::size_t frames = 24;           // M
  std::size_t stride = 2;            // l
  std::size_t encoder_hidden = 256;  // H1
  std::size_t code_len = 256;        // L
  std::size_t decoder_hidden = 256;  // H2
  std::size_t global_steps = 1;      // G
  Binarizer binarizer = Binarizer::kHardSte;

  std::size_t coarse_steps() const { return frames / stride; }

  void validate() const {
    require(input_dim > 0 && frames > 0 && stride > 0 && encoder_hidden > 0 && code_len > 0 &&
                decoder_hidden > 0 && global_steps > 0,
            ErrorKind::kUsage, "autoencoder config: all sizes must be positive");
    require(frames % stride == 0, ErrorKind::kUsage,
            "autoencoder config: frames " + std::to_string(frames) +
                " not divisible by stride " + std::to_string(stride));
  }
};

struct EncoderParams {
  LstmParams layer1;   // D -> H1, runs every frame
  BlstmParams layer2;  // H1 -> L, runs every stride-th frame
  std::size_t stride = 1;
};

// A two-layer decoder: a recurrent-only layer seeded with the code, then a
// frame-rate layer projected back to feature space.
struct DecoderStackParams {
  LstmParams layer1;  // 0 -> L
  LstmParams layer2;  // L -> H2
  Matrix head_w;      // H2 x D
  Vector head_b;      // D
};

struct DecoderParams {
  DecoderStackParams forward;
  DecoderStackParams backward;
  DecoderStackParams global;
  std::size_t global_steps = 1;
};

struct Model {
  AutoencoderConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  static Model zeros(const AutoencoderConfig& cfg) {
    cfg.validate();
    auto stack = [&] {
      return DecoderStackParams{LstmParams::zeros(0, cfg.code_len),
                                LstmParams::zeros(cfg.code_len, cfg.decoder_hidden),
                                Matrix(cfg.decoder_hidden, cfg.input_dim),
                                Vector(cfg.input_dim, 0.0)};
    };
    return Model{cfg,
                 {LstmParams::zeros(cfg.input_dim, cfg.encoder_hidden),
                  BlstmParams::zeros(cfg.encoder_hidden, cfg.code_len, cfg.coarse_steps()),
                  cfg.stride},
                 {stack(), stack(), stack(), cfg.global_steps}};
  }

  static Model random(const AutoencoderConfig& cfg, Rng& rng) {
    cfg.validate();
    auto stack = [&] {
      DecoderStackParams s{LstmParams::random(0, cfg.code_len, rng),
                           LstmParams::random(cfg.code_len, cfg.decoder_hidden, rng),
                           Matrix(cfg.decoder_hidden, cfg.input_dim), Vector(cfg.input_dim, 0.0)};
      fill_uniform(s.head_w.values(), 1.0 / std::sqrt(double(cfg.decoder_hidden)), rng);
      return s;
    };
    Model m{cfg,
            {LstmParams::random(cfg.input_dim, cfg.encoder_hidden, rng),
             BlstmParams::random(cfg.encoder_hidden, cfg.code_len, cfg.coarse_steps(), rng),
             cfg.stride},
            {}};
    m.decoder.forward = stack();
    m.decoder.backward = stack();
    m.decoder.global = stack();
    m.decoder.global_steps = cfg.global_steps;
    return m;
  }
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, DecoderStackParams>
void visit_tensors(P& p, const std::string& prefix, F&& f) {
  visit_tensors(p.layer1, prefix + ".layer1", f);
  visit_tensors(p.layer2, prefix + ".layer2", f);
  f(prefix + ".head_w", p.head_w.values());
  f(prefix + ".head_b", std::span(p.head_b));
}

// Every learnable tensor of the model in a fixed order. Batch-norm running
// statistics are not learnable and are not visited.
template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, Model>
void visit_tensors(P& m, F&& f) {
  visit_tensors(m.encoder.layer1, "encoder.layer1", f);
  visit_tensors(m.encoder.layer2, "encoder.layer2", f);
  visit_tensors(m.decoder.forward, "decoder.forward", f);
  visit_tensors(m.decoder.backward, "decoder.backward", f);
  visit_tensors(m.decoder.global, "decoder.global", f);
}

// Same shapes as `m`, every learnable tensor zeroed.
inline Model zeros_like(const Model& m) {
  Model g = m;
  visit_tensors(g, [](const std::string&, std::span<double> xs) {
    std::fill(xs.begin(), xs.end(), 0.0);
  });
  return g;
}

inline SequenceBatch to_time_major(const std::vector<const Matrix*>& videos) {
  require(!videos.empty(), ErrorKind::kUsage, "empty batch");
  const std::size_t frames = videos.front()->rows();
  const std::size_t dim = videos.front()->cols();
  SequenceBatch batch(frames, Matrix(videos.size(), dim));
  for (std::size_t r = 0; r < videos.size(); ++r) {
    require(videos[r]->rows() == frames && videos[r]->cols() == dim, ErrorKind::kShape,
            "batch member " + std::to_string(r) + " has shape " + shape_str(*videos[r]) +
                ", expected (" + std::to_string(frames) + "x" + std::to_string(dim) + ")");
    for (std::size_t t = 0; t < frames; ++t) {
      auto src = videos[r]->row(t);
      std::copy(src.begin(), src.end(), batch[t].row(r).begin());
    }
  }
  return batch;
}

// Frame-order matrix (M x D) of batch member r.
inline Matrix batch_member(const SequenceBatch& seq, std::size_t r) {
  Matrix out(seq.size(), seq.empty() ? 0 : seq.front().cols());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    auto src = seq[t].row(r);
    std::copy(src.begin(), src.end(), out.row(t).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncodeResult {
  Matrix h;     // final pre-binarization hidden state (B x L)
  Matrix code;  // sgn(h)
  Matrix feed;  // binarizer(h), what the decoders consume
  std::vector<LstmTape> layer1;
  std::vector<BlstmTape> layer2;
  std::vector<BatchNormState> norms;  // running statistics after this pass
  std::size_t layer1_steps = 0;
  std::size_t layer2_steps = 0;
};

inline EncodeResult encode(const EncoderParams& p, const SequenceBatch& frames, Mode mode,
                           Binarizer binarizer) {
  const std::size_t m = frames.size();
  require(m > 0, ErrorKind::kUsage, "encode: empty sequence");
  require(m % p.stride == 0, ErrorKind::kUsage,
          "encode: " + std::to_string(m) + " frames not divisible by stride " +
              std::to_string(p.stride));
  require(m / p.stride == p.layer2.norm.size(), ErrorKind::kShape,
          "encode: " + std::to_string(m) + " frames at stride " + std::to_string(p.stride) +
              " but the binary layer is sized for " + std::to_string(p.layer2.norm.size()) +
              " steps");
  const std::size_t batch = frames.front().rows();
  for (const Matrix& f : frames)
    require(all_finite(f.values()), ErrorKind::kData, "encode: non-finite frame features");

  const bool keep = mode == Mode::kTrain;
  EncodeResult res;
  res.norms.reserve(p.layer2.norm.size());
  Matrix z(batch, p.layer1.hidden_dim), c1(batch, p.layer1.hidden_dim);
  Matrix feed(batch, p.layer2.code_len, -1.0), c2(batch, p.layer2.code_len);
  for (std::size_t t = 0; t < m; ++t) {
    LstmStep s1 = lstm_step(p.layer1, frames[t], z, c1);
    ++res.layer1_steps;
    z = std::move(s1.h);
    c1 = std::move(s1.c);
    if (keep) res.layer1.push_back(std::move(s1.tape));
    if ((t + 1) % p.stride != 0) continue;

    const std::size_t coarse = (t + 1) / p.stride - 1;
    BlstmStep s2 = blstm_step(p.layer2, coarse, z, feed, c2, mode, binarizer);
    ++res.layer2_steps;
    feed = std::move(s2.feed);
    c2 = std::move(s2.c);
    res.norms.push_back(std::move(s2.norm_state));
    res.h = std::move(s2.h);
    res.code = std::move(s2.code);
    if (keep) res.layer2.push_back(std::move(s2.tape));
  }
  res.feed = std::move(feed);
  return res;
}

// Backpropagates through the encoder. `d_h` lands directly on the final
// hidden state; `d_feed` lands on the final binarized output and passes the
// binarizer gate first.
inline void encoder_backward(const EncoderParams& p, const EncodeResult& enc, const Matrix& d_h,
                             const Matrix& d_feed, EncoderParams& grads) {
  require(!enc.layer2.empty() && enc.layer1.size() == enc.layer2.size() * p.stride,
          ErrorKind::kUsage, "encoder_backward: missing train-mode tapes");
  const std::size_t batch = enc.h.rows();
  const std::size_t len = p.layer2.code_len;
  const std::size_t coarse = enc.layer2.size();

  std::vector<Matrix> dz(coarse);
  Matrix zero_l(batch, len);
  Matrix dfeed = d_feed, dc(batch, len);
  for (std::size_t k = coarse; k-- > 0;) {
    const Matrix& dh = k + 1 == coarse ? d_h : zero_l;
    BlstmStepGrads g = blstm_step_backward(p.layer2, enc.layer2[k], dh, dfeed, dc, grads.layer2);
    dfeed = std::move(g.feed_prev);
    dc = std::move(g.c_prev);
    dz[k] = std::move(g.z);
  }

  Matrix dh1(batch, p.layer1.hidden_dim), dc1(batch, p.layer1.hidden_dim);
  for (std::size_t t = enc.layer1.size(); t-- > 0;) {
    if ((t + 1) % p.stride == 0) add_into(dh1, dz[(t + 1) / p.stride - 1]);
    LstmStepGrads g = lstm_step_backward(p.layer1, enc.layer1[t], dh1, dc1, grads.layer1);
    dh1 = std::move(g.h_prev);
    dc1 = std::move(g.c_prev);
  }
}

// ---------------------------------------------------------------------------
// Sequence decoders

struct SequenceDecodeResult {
  std::vector<Matrix> frames;  // frame order: frames[t] reconstructs frame t
  std::vector<LstmTape> layer1;
  std::vector<LstmTape> layer2;  // in execution order
  std::vector<Matrix> layer2_h;  // in execution order
  std::vector<std::size_t> injected_steps;  // 1-based frame index j receiving a layer-1 output
  bool reverse = false;
  std::size_t stride = 1;
  std::size_t layer1_steps = 0;
  std::size_t layer2_steps = 0;
};

// Layer 1 runs M/l recurrent-only steps from hidden state `code`. Layer 2 runs
// M steps; its input is the next layer-1 output every l-th step and zero
// otherwise. In reverse mode layer 2 walks frames M..1.
inline SequenceDecodeResult decode_sequence(const DecoderStackParams& p, const Matrix& code,
                                            std::size_t frames, std::size_t stride,
                                            bool reverse) {
  require(stride > 0 && frames % stride == 0, ErrorKind::kUsage,
          "decode: " + std::to_string(frames) + " frames not divisible by stride " +
              std::to_string(stride));
  require(code.cols() == p.layer1.hidden_dim, ErrorKind::kShape,
          "decode: code length " + std::to_string(code.cols()) + " != decoder seed width " +
              std::to_string(p.layer1.hidden_dim));
  const std::size_t batch = code.rows();
  SequenceDecodeResult res;
  res.reverse = reverse;
  res.stride = stride;

  std::vector<Matrix> coarse;
  Matrix empty_in(batch, 0);
  Matrix h = code, c(batch, p.layer1.hidden_dim);
  for (std::size_t i = 0; i < frames / stride; ++i) {
    LstmStep s = lstm_step(p.layer1, empty_in, h, c);
    ++res.layer1_steps;
    h = s.h;
    c = std::move(s.c);
    coarse.push_back(std::move(s.h));
    res.layer1.push_back(std::move(s.tape));
  }

  res.frames.assign(frames, Matrix());
  Matrix zero_in(batch, p.layer2.input_dim);
  Matrix h2(batch, p.layer2.hidden_dim), c2(batch, p.layer2.hidden_dim);
  for (std::size_t s = 0; s < frames; ++s) {
    const std::size_t j = reverse ? frames - s : s + 1;  // 1-based frame index
    const bool inject = s % stride == 0;
    if (inject) res.injected_steps.push_back(j);
    LstmStep st = lstm_step(p.layer2, inject ? coarse[s / stride] : zero_in, h2, c2);
    ++res.layer2_steps;
    h2 = st.h;
    c2 = std::move(st.c);
    res.frames[j - 1] = affine(st.h, p.head_w, p.head_b);
    res.layer2_h.push_back(std::move(st.h));
    res.layer2.push_back(std::move(st.tape));
  }
  return res;
}

inline SequenceDecodeResult decode_forward(const DecoderStackParams& p, const Matrix& code,
                                           std::size_t frames, std::size_t stride) {
  return decode_sequence(p, code, frames, stride, false);
}

inline SequenceDecodeResult decode_backward(const DecoderStackParams& p, const Matrix& code,
                                            std::size_t frames, std::size_t stride) {
  return decode_sequence(p, code, frames, stride, true);
}

// Returns the gradient on the seeding code.
inline Matrix decode_sequence_backward(const DecoderStackParams& p, const SequenceDecodeResult& r,
                                       const std::vector<Matrix>& d_frames,
                                       DecoderStackParams& grads) {
  const std::size_t frames = r.frames.size();
  require(d_frames.size() == frames && r.layer2.size() == frames, ErrorKind::kShape,
          "decode backward: gradient/tape length mismatch");
  const std::size_t batch = r.layer2_h.front().rows();

  std::vector<Matrix> dcoarse(r.layer1.size(), Matrix(batch, p.layer1.hidden_dim));
  Matrix dh2(batch, p.layer2.hidden_dim), dc2(batch, p.layer2.hidden_dim);
  for (std::size_t s = frames; s-- > 0;) {
    const std::size_t j = r.reverse ? frames - s : s + 1;
    const Matrix& dy = d_frames[j - 1];
    matmul_tn_acc(r.layer2_h[s], dy, grads.head_w);
    add_column_sums(dy, grads.head_b);
    matmul_nt_acc(dy, p.head_w, dh2);
    LstmStepGrads g = lstm_step_backward(p.layer2, r.layer2[s], dh2, dc2, grads.layer2);
    if (s % r.stride == 0) add_into(dcoarse[s / r.stride], g.x);
    dh2 = std::move(g.h_prev);
    dc2 = std::move(g.c_prev);
  }

  Matrix dh1(batch, p.layer1.hidden_dim), dc1(batch, p.layer1.hidden_dim);
  for (std::size_t i = r.layer1.size(); i-- > 0;) {
    add_into(dh1, dcoarse[i]);
    LstmStepGrads g = lstm_step_backward(p.layer1, r.layer1[i], dh1, dc1, grads.layer1);
    dh1 = std::move(g.h_prev);
    dc1 = std::move(g.c_prev);
  }
  return dh1;
}

struct GlobalDecodeResult {
  Matrix video;  // B x D
  std::vector<LstmTape> layer1;
  std::vector<LstmTape> layer2;
  Matrix last_h;
  std::size_t layer1_steps = 0;
  std::size_t layer2_steps = 0;
};

inline GlobalDecodeResult decode_global(const DecoderStackParams& p, const Matrix& code,
                                        std::size_t steps) {
  require(steps > 0, ErrorKind::kUsage, "decode_global: needs at least one step");
  require(code.cols() == p.layer1.hidden_dim, ErrorKind::kShape,
          "decode_global: code length " + std::to_string(code.cols()) +
              " != decoder seed width " + std::to_string(p.layer1.hidden_dim));
  const std::size_t batch = code.rows();
  GlobalDecodeResult res;
  Matrix empty_in(batch, 0);
  Matrix h1 = code, c1(batch, p.layer1.hidden_dim);
  Matrix h2(batch, p.layer2.hidden_dim), c2(batch, p.layer2.hidden_dim);
  for (std::size_t g = 0; g < steps; ++g) {
    LstmStep s1 = lstm_step(p.layer1, empty_in, h1, c1);
    ++res.layer1_steps;
    h1 = std::move(s1.h);
    c1 = std::move(s1.c);
    res.layer1.push_back(std::move(s1.tape));
    LstmStep s2 = lstm_step(p.layer2, h1, h2, c2);
    ++res.layer2_steps;
    h2 = std::move(s2.h);
    c2 = std::move(s2.c);
    res.layer2.push_back(std::move(s2.tape));
  }
  res.video = affine(h2, p.head_w, p.head_b);
  res.last_h = std::move(h2);
  return res;
}

inline Matrix decode_global_backward(const DecoderStackParams& p, const GlobalDecodeResult& r,
                                     const Matrix& d_video, DecoderStackParams& grads) {
  require(d_video.same_shape(r.video), ErrorKind::kShape, "decode_global backward: shape mismatch");
  const std::size_t batch = d_video.rows();
  matmul_tn_acc(r.last_h, d_video, grads.head_w);
  add_column_sums(d_video, grads.head_b);
  Matrix dh2(batch, p.layer2.hidden_dim), dc2(batch, p.layer2.hidden_dim);
  matmul_nt_acc(d_video, p.head_w, dh2);
  Matrix dh1(batch, p.layer1.hidden_dim), dc1(batch, p.layer1.hidden_dim);
  for (std::size_t g = r.layer2.size(); g-- > 0;) {
    LstmStepGrads g2 = lstm_step_backward(p.layer2, r.layer2[g], dh2, dc2, grads.layer2);
    dh2 = std::move(g2.h_prev);
    dc2 = std::move(g2.c_prev);
    add_into(dh1, g2.x);
    LstmStepGrads g1 = lstm_step_backward(p.layer1, r.layer1[g], dh1, dc1, grads.layer1);
    dh1 = std::move(g1.h_prev);
    dc1 = std::move(g1.c_prev);
  }
  return dh1;
}

// ---------------------------------------------------------------------------
// Reconstruction loss

struct ReconLoss {
  Vector per_video;  // forward + backward + global squared error per batch member
  double sum = 0.0;
  std::vector<Matrix> d_forward;  // d sum / d reconstruction
  std::vector<Matrix> d_backward;
  Matrix d_global;
};

inline Matrix mean_frame(const SequenceBatch& frames) {
  Matrix mean(frames.front().rows(), frames.front().cols());
  for (const Matrix& f : frames) add_into(mean, f);
  for (double& v : mean.values()) v /= static_cast<double>(frames.size());
  return mean;
}

inline ReconLoss recon_loss(const SequenceBatch& frames, const std::vector<Matrix>& fwd,
                            const std::vector<Matrix>& bwd, const Matrix& glob) {
  require(!frames.empty() && fwd.size() == frames.size() && bwd.size() == frames.size(),
          ErrorKind::kShape, "recon_loss: sequence length mismatch");
  const std::size_t batch = frames.front().rows();
  ReconLoss res{Vector(batch, 0.0), 0.0, {}, {}, {}};
  auto accumulate = [&](const Matrix& target, const Matrix& rec) {
    require(rec.same_shape(target), ErrorKind::kShape,
            "recon_loss: reconstruction " + shape_str(rec) + " vs target " + shape_str(target));
    Matrix d(target.rows(), target.cols());
    for (std::size_t r = 0; r < target.rows(); ++r)
      for (std::size_t k = 0; k < target.cols(); ++k) {
        const double diff = rec(r, k) - target(r, k);
        res.per_video[r] += diff * diff;
        d(r, k) = 2.0 * diff;
      }
    return d;
  };
  for (std::size_t t = 0; t < frames.size(); ++t) res.d_forward.push_back(accumulate(frames[t], fwd[t]));
  for (std::size_t t = 0; t < frames.size(); ++t) res.d_backward.push_back(accumulate(frames[t], bwd[t]));
  res.d_global = accumulate(mean_frame(frames), glob);
  for (double v : res.per_video) res.sum += v;
  return res;
}

// ---------------------------------------------------------------------------
// Whole model

struct StepCounters {
  std::size_t encoder_layer1 = 0;
  std::size_t encoder_layer2 = 0;
  std::size_t forward_layer1 = 0;
  std::size_t forward_layer2 = 0;
  std::size_t backward_layer1 = 0;
  std::size_t backward_layer2 = 0;
  std::size_t global_layer1 = 0;
  std::size_t global_layer2 = 0;

  std::size_t total() const {
    return encoder_layer1 + encoder_layer2 + forward_layer1 + forward_layer2 + backward_layer1 +
           backward_layer2 + global_layer1 + global_layer2;
  }
};

struct ForwardPass {
  EncodeResult encoded;
  SequenceDecodeResult forward;
  SequenceDecodeResult backward;
  GlobalDecodeResult global;

  StepCounters counters() const {
    return {encoded.layer1_steps,  encoded.layer2_steps,  forward.layer1_steps,
            forward.layer2_steps,  backward.layer1_steps, backward.layer2_steps,
            global.layer1_steps,   global.layer2_steps};
  }
};

inline ForwardPass run_autoencoder(const Model& m, const SequenceBatch& frames, Mode mode) {
  require(!frames.empty() && frames.front().cols() == m.config.input_dim, ErrorKind::kShape,
          "autoencoder: frame dimension does not match model input " +
              std::to_string(m.config.input_dim));
  ForwardPass fp;
  fp.encoded = encode(m.encoder, frames, mode, m.config.binarizer);
  const Matrix& feed = fp.encoded.feed;
  fp.forward = decode_forward(m.decoder.forward, feed, frames.size(), m.encoder.stride);
  fp.backward = decode_backward(m.decoder.backward, feed, frames.size(), m.encoder.stride);
  fp.global = decode_global(m.decoder.global, feed, m.decoder.global_steps);
  return fp;
}

// Accumulates all parameter gradients into `grads`. Reconstruction gradients
// reach the encoder only through the binarizer gate; `d_h` (from the
// neighborhood term) lands on h directly. Returns the gradient that arrived
// at the code from the decoders.
inline Matrix autoencoder_backward(const Model& m, const ForwardPass& fp,
                                   const std::vector<Matrix>& d_forward,
                                   const std::vector<Matrix>& d_backward, const Matrix& d_global,
                                   const Matrix& d_h, Model& grads) {
  Matrix d_feed = decode_sequence_backward(m.decoder.forward, fp.forward, d_forward,
                                           grads.decoder.forward);
  add_into(d_feed, decode_sequence_backward(m.decoder.backward, fp.backward, d_backward,
                                            grads.decoder.backward));
  add_into(d_feed, decode_global_backward(m.decoder.global, fp.global, d_global,
                                          grads.decoder.global));
  encoder_backward(m.encoder, fp.encoded, d_h, d_feed, grads.encoder);
  return d_feed;
}

}  // namespace ssvh
