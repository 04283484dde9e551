#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ssvh/retrieval.hpp"
#include "ssvh/trainer.hpp"
#include "test_support.hpp"

namespace ssvh {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<Vector> pooled(const Dataset& ds) {
  std::vector<Vector> out;
  for (const Matrix& v : ds.videos) out.push_back(mean_pool(v));
  return out;
}

Dataset tiny_dataset(std::size_t n, std::size_t clusters, std::size_t frames, std::size_t dim,
                     std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_videos = n;
  spec.n_clusters = clusters;
  spec.frames = frames;
  spec.dim = dim;
  spec.cluster_separation = 3.0;
  spec.within_noise = 0.3;
  spec.temporal_drift = 0.2;
  spec.seed = seed;
  return generate(spec);
}

TrainConfig tiny_train_config(const Dataset& ds, std::size_t code_len = 4) {
  TrainConfig cfg;
  cfg.model.input_dim = ds.dim;
  cfg.model.frames = ds.frames;
  cfg.model.stride = 2;
  cfg.model.encoder_hidden = 4;
  cfg.model.code_len = code_len;
  cfg.model.decoder_hidden = 4;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  return cfg;
}

TEST(TotalLoss, Examples) {
  EXPECT_EQ(total_loss(5, 99, 1.0), 5.0);
  EXPECT_EQ(total_loss(5, 99, 0.0), 99.0);
  EXPECT_EQ(total_loss(2, 4, 0.5), 3.0);
  EXPECT_THROW(total_loss(1, 1, 1.5), Error);
  EXPECT_THROW(total_loss(1, 1, -0.1), Error);
}

TEST(SgdStep, Examples) {
  AutoencoderConfig cfg;
  cfg.input_dim = 2;
  cfg.frames = 2;
  cfg.encoder_hidden = cfg.code_len = cfg.decoder_hidden = 2;
  Model p = Model::zeros(cfg);
  Model g = zeros_like(p);
  p.decoder.global.head_b[0] = 1.0;
  g.decoder.global.head_b[0] = 0.5;
  Model q = p;
  sgd_step(q, g, 0.1);
  EXPECT_DOUBLE_EQ(q.decoder.global.head_b[0], 0.95);

  std::mt19937_64 rng(1);
  Model r = Model::random(cfg, rng), before = r;
  sgd_step(r, zeros_like(r), 0.1);
  EXPECT_EQ(tensor_spans(r).size(), tensor_spans(before).size());
  testing::randomize(g, 1.0, rng);
  Model s = before;
  sgd_step(s, g, 0.0);
  auto a = tensor_spans(static_cast<const Model&>(s));
  auto b = tensor_spans(static_cast<const Model&>(before));
  auto c = tensor_spans(static_cast<const Model&>(r));
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t k = 0; k < a[t].size(); ++k) {
      EXPECT_EQ(a[t][k], b[t][k]);
      EXPECT_EQ(c[t][k], b[t][k]);
    }
}

TEST(SgdStep, ShapeMismatchIsAnError) {
  AutoencoderConfig cfg;
  cfg.input_dim = 2;
  cfg.frames = 2;
  cfg.encoder_hidden = cfg.code_len = cfg.decoder_hidden = 2;
  AutoencoderConfig wider = cfg;
  wider.code_len = 3;
  Model p = Model::zeros(cfg);
  EXPECT_THROW(sgd_step(p, Model::zeros(wider), 0.1), Error);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  AutoencoderConfig cfg;
  cfg.input_dim = 2;
  cfg.frames = 2;
  cfg.encoder_hidden = cfg.code_len = cfg.decoder_hidden = 2;
  Model g = zeros_like(Model::zeros(cfg));
  g.decoder.global.head_b = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.decoder.global.head_b[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
}

TEST(MakeBatches, CoversEveryVideoOnceAndMergesSingletons) {
  Rng rng(3);
  auto batches = make_batches(9, 4, rng);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[1].size(), 5u);
  std::vector<int> seen(9, 0);
  for (const auto& b : batches)
    for (std::size_t i : b) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(LearningRate, DecaysEveryThirdOfTraining) {
  TrainConfig cfg;
  cfg.epochs = 30;
  EXPECT_DOUBLE_EQ(cfg.lr_at(0), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(9), 0.01);
  EXPECT_NEAR(cfg.lr_at(10), 0.001, 1e-18);
  EXPECT_NEAR(cfg.lr_at(29), 0.0001, 1e-18);
}

TEST(Train, IsBitReproducible) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 5);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainConfig cfg = tiny_train_config(ds);
  cfg.epochs = 1;
  TrainResult a = train(ds, g, cfg), b = train(ds, g, cfg);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
}

TEST(Train, LossDecompositionHoldsEveryEpoch) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 6);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainConfig cfg = tiny_train_config(ds);
  cfg.epochs = 5;
  cfg.lambda = 0.3;
  std::size_t callbacks = 0;
  TrainResult r = train(ds, g, cfg, nullptr, [&](const LossRecord&) { ++callbacks; });
  EXPECT_EQ(callbacks, 5u);
  for (const LossRecord& rec : r.history)
    EXPECT_NEAR(rec.total, 0.3 * rec.recon + 0.7 * rec.neighbor, 1e-12);
}

TEST(Train, RepeatedVideoReconstructionShrinks) {
  // One video copied four times, reconstruction only.
  std::mt19937_64 rng(8);
  Dataset ds;
  ds.frames = 4;
  ds.dim = 3;
  Matrix video = testing::random_matrix(4, 3, 1.0, rng);
  for (double& v : video.values()) v += 1.0;
  ds.videos.assign(4, video);
  NeighborGraph g;
  g.adjacency = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
  TrainConfig cfg = tiny_train_config(ds);
  cfg.lambda = 1.0;
  cfg.epochs = 200;
  cfg.learning_rate = 0.05;
  cfg.lr_decay = 1.0;
  TrainResult r = train(ds, g, cfg);
  ASSERT_EQ(r.history.size(), 200u);
  EXPECT_LT(r.history.back().recon, 0.1 * r.history.front().recon);
  std::size_t increases = 0;
  for (std::size_t e = 1; e < r.history.size(); ++e)
    increases += r.history[e].recon > r.history[e - 1].recon;
  EXPECT_LE(increases, r.history.size() / 20);
}

double mean_hamming(const RetrievalDB& db, bool same_label) {
  const auto& labels = *db.labels();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < db.size(); ++i)
    for (std::size_t j = i + 1; j < db.size(); ++j)
      if ((labels[i] == labels[j]) == same_label) {
        total += static_cast<double>(hamming_packed(db.packed(i), db.packed(j)));
        ++count;
      }
  return total / static_cast<double>(count);
}

TEST(Train, NeighborOnlyTrainingSeparatesTwoClusters) {
  SyntheticSpec spec;
  spec.n_videos = 24;
  spec.n_clusters = 2;
  spec.frames = 4;
  spec.dim = 8;
  spec.seed = 42;
  Dataset ds = generate(spec);
  NeighborGraph g = build_graph(pooled(ds), 5, 3);
  TrainConfig cfg = tiny_train_config(ds, 8);
  cfg.model.encoder_hidden = 8;
  cfg.lambda = 0.0;
  cfg.batch_size = 12;
  cfg.epochs = 30;
  cfg.learning_rate = 0.05;
  TrainResult r = train(ds, g, cfg);
  RetrievalDB db = hash_dataset(r.checkpoint.model, ds);
  EXPECT_LT(mean_hamming(db, true), mean_hamming(db, false));
}

TEST(Train, NonFiniteLossAborts) {
  Dataset ds = tiny_dataset(4, 2, 4, 3, 9);
  NeighborGraph g = build_graph(pooled(ds), 1, 0);
  TrainConfig cfg = tiny_train_config(ds);
  Checkpoint start;
  start.config = cfg;
  std::mt19937_64 rng(1);
  start.model = Model::random(cfg.model, rng);
  start.model.decoder.forward.head_b[0] = std::numeric_limits<double>::infinity();
  start.rng_state = rng_state(Rng(1));
  try {
    train(ds, g, cfg, &start);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("reconstruction"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST(Train, RejectsMismatchedInputs) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 10);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainConfig cfg = tiny_train_config(ds);
  NeighborGraph small = g;
  small.adjacency.pop_back();
  EXPECT_THROW(train(ds, small, cfg), Error);
  TrainConfig wrong_dim = cfg;
  wrong_dim.model.input_dim = 5;
  EXPECT_THROW(train(ds, g, wrong_dim), Error);
  TrainConfig bad_lambda = cfg;
  bad_lambda.lambda = 2.0;
  EXPECT_THROW(train(ds, g, bad_lambda), Error);
}

TEST(Train, ResumeContinuesTheSameRun) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 11);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainConfig cfg = tiny_train_config(ds);
  cfg.epochs = 4;
  cfg.lr_decay = 1.0;
  TrainResult full = train(ds, g, cfg);
  TrainConfig half = cfg;
  half.epochs = 2;
  TrainResult first = train(ds, g, half);
  // Resume at the same schedule length so the learning rate matches.
  first.checkpoint.config.epochs = 4;
  TrainResult second = train(ds, g, cfg, &first.checkpoint);
  EXPECT_EQ(second.checkpoint.history, full.history);
  EXPECT_EQ(encode_checkpoint(second.checkpoint), encode_checkpoint(full.checkpoint));
}

TEST(Checkpoint, RoundTripPreservesEncoding) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 12);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainConfig cfg = tiny_train_config(ds);
  TrainResult r = train(ds, g, cfg);
  const auto path = temp_path("ssvh_ckpt_rt.bin");
  save_checkpoint(r.checkpoint, path);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(r.checkpoint));
  EXPECT_EQ(back.history, r.checkpoint.history);
  EXPECT_EQ(back.rng_state, r.checkpoint.rng_state);
  EXPECT_EQ(encode_codes(hash_dataset(back.model, ds)),
            encode_codes(hash_dataset(r.checkpoint.model, ds)));
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 13);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainResult r = train(ds, g, tiny_train_config(ds));
  const std::string bytes = encode_checkpoint(r.checkpoint);
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{20}}) {
    try {
      decode_checkpoint(bytes.substr(0, cut));
      FAIL() << "expected an error at " << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kData);
    }
  }
  std::string version = bytes;
  version[9] = 7;
  EXPECT_THROW(decode_checkpoint(version), Error);
}

TEST(Checkpoint, DifferentCodeLengthIsRejectedOnResume) {
  Dataset ds = tiny_dataset(8, 2, 4, 3, 14);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  TrainResult r = train(ds, g, tiny_train_config(ds, 4));
  TrainConfig other = tiny_train_config(ds, 6);
  other.epochs = 3;
  try {
    train(ds, g, other, &r.checkpoint);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
    EXPECT_NE(std::string(e.what()).find("code_len"), std::string::npos);
  }
}

bool away_from_kinks(const Matrix& h) {
  for (double v : h.values())
    if (std::abs(std::abs(v) - 1.0) < 1e-3 || std::abs(v) < 1e-3) return false;
  return true;
}

TEST(BatchObjective, MicroModelGradientMatchesFiniteDifferences) {
  Dataset ds = tiny_dataset(6, 2, 4, 3, 15);
  NeighborGraph g = build_graph(pooled(ds), 2, 1);
  AutoencoderConfig cfg;
  cfg.input_dim = 3;
  cfg.frames = 4;
  cfg.stride = 2;
  cfg.encoder_hidden = cfg.code_len = cfg.decoder_hidden = 4;
  cfg.binarizer = Binarizer::kSurrogate;
  std::mt19937_64 rng(16);
  Model m = Model::random(cfg, rng);
  for (auto& n : m.encoder.layer2.norm)
    for (double& gm : n.gamma) gm = 0.4;
  const std::vector<std::size_t> members{0, 3, 4};
  const double lambda = 0.3, eta = 0.2;
  BatchObjective obj = batch_objective(m, ds, members, g, lambda, eta, true);
  ASSERT_TRUE(away_from_kinks(obj.h));
  auto errs = testing::check_model_gradients(m, obj.grads, [&](const Model& p) {
    return batch_objective(p, ds, members, g, lambda, eta, false).total;
  });
  for (const auto& e : errs) EXPECT_LE(e.rel_error, 1e-4) << e.name;
}

}  // namespace
}  // namespace ssvh
