#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssvh/recurrent.hpp"
#include "test_support.hpp"

namespace ssvh {
namespace {

using testing::check_blocks;
using testing::random_matrix;

double weighted_sum(const Matrix& m, const Matrix& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) s += m.values()[k] * w.values()[k];
  return s;
}

TEST(SgnSurrogate, PiecewiseValues) {
  EXPECT_EQ(sgn_surrogate(-2.0), -1.0);
  EXPECT_EQ(sgn_surrogate(0.5), 0.5);
  EXPECT_EQ(sgn_surrogate(3.0), 1.0);
  EXPECT_EQ(sgn_surrogate(-1.0), -1.0);
}

TEST(SgnSurrogate, GradientIsBoundaryInclusiveIndicator) {
  EXPECT_EQ(sgn_surrogate_grad(0.5), 1.0);
  EXPECT_EQ(sgn_surrogate_grad(2.0), 0.0);
  EXPECT_EQ(sgn_surrogate_grad(-1.0), 1.0);
  EXPECT_EQ(sgn_surrogate_grad(1.0), 1.0);
  EXPECT_EQ(sgn_surrogate_grad(-1.0000001), 0.0);
}

TEST(Sgn, ZeroMapsToPlusOne) {
  EXPECT_EQ(sgn(0.0), 1.0);
  EXPECT_EQ(sgn(-0.0), 1.0);
  EXPECT_EQ(sgn(-1e-300), -1.0);
}

TEST(LstmStep, ZeroParametersGiveZeroState) {
  LstmParams p = LstmParams::zeros(3, 4);
  std::mt19937_64 rng(1);
  LstmStep s = lstm_step(p, random_matrix(2, 3, 1.0, rng), Matrix(2, 4), Matrix(2, 4));
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmStep, BiasOnlyReducesToGateBiases) {
  LstmParams p = LstmParams::zeros(2, 3);
  const double bf = 0.3, bi = -0.7, bo = 1.1, bm = 0.4;
  for (std::size_t k = 0; k < 3; ++k) {
    p.bias[k] = bf;
    p.bias[3 + k] = bi;
    p.bias[6 + k] = bo;
    p.bias[9 + k] = bm;
  }
  LstmStep s = lstm_step(p, Matrix(1, 2), Matrix(1, 3), Matrix(1, 3));
  const double c = sigmoid(bi) * std::tanh(bm);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(s.tape.f(0, k), sigmoid(bf));
    EXPECT_DOUBLE_EQ(s.tape.i(0, k), sigmoid(bi));
    EXPECT_DOUBLE_EQ(s.tape.o(0, k), sigmoid(bo));
    EXPECT_DOUBLE_EQ(s.tape.m(0, k), std::tanh(bm));
    EXPECT_DOUBLE_EQ(s.c(0, k), c);
    EXPECT_DOUBLE_EQ(s.h(0, k), sigmoid(bo) * std::tanh(c));
  }
}

TEST(LstmStep, MatchesScalarReference) {
  std::mt19937_64 rng(11);
  LstmParams p = LstmParams::random(5, 4, rng);
  Matrix x = random_matrix(3, 5, 1.0, rng);
  Matrix h = random_matrix(3, 4, 0.5, rng);
  Matrix c = random_matrix(3, 4, 0.5, rng);
  LstmStep s = lstm_step(p, x, h, c);
  for (std::size_t r = 0; r < 3; ++r) {
    auto ref = testing::scalar_lstm_step(p, {x.row(r).begin(), x.row(r).end()},
                                         {h.row(r).begin(), h.row(r).end()},
                                         {c.row(r).begin(), c.row(r).end()});
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(s.h(r, k), ref.h[k], 1e-14);
      EXPECT_NEAR(s.c(r, k), ref.c[k], 1e-14);
    }
  }
}

TEST(LstmStep, RejectsShapeMismatch) {
  LstmParams p = LstmParams::zeros(3, 4);
  EXPECT_THROW(lstm_step(p, Matrix(1, 2), Matrix(1, 4), Matrix(1, 4)), Error);
  EXPECT_THROW(lstm_step(p, Matrix(1, 3), Matrix(2, 4), Matrix(2, 4)), Error);
}

TEST(LstmStepBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  LstmParams p = LstmParams::random(3, 3, rng);
  Matrix x = random_matrix(2, 3, 1.0, rng);
  Matrix h = random_matrix(2, 3, 0.5, rng);
  Matrix c = random_matrix(2, 3, 0.5, rng);
  const Matrix wh = random_matrix(2, 3, 1.0, rng);
  const Matrix wc = random_matrix(2, 3, 1.0, rng);
  auto loss = [&] {
    LstmStep s = lstm_step(p, x, h, c);
    return weighted_sum(s.h, wh) + weighted_sum(s.c, wc);
  };

  LstmStep s = lstm_step(p, x, h, c);
  LstmParams g = LstmParams::zeros(3, 3);
  LstmStepGrads dg = lstm_step_backward(p, s.tape, wh, wc, g);

  auto errs = check_blocks({p.w.values(), p.u.values(), p.bias, x.values(), h.values(), c.values()},
                           {g.w.values(), g.u.values(), g.bias, dg.x.values(), dg.h_prev.values(),
                            dg.c_prev.values()},
                           loss);
  for (double e : errs) EXPECT_LE(e, 1e-4);
}

TEST(LstmStepBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(3);
  LstmParams p = LstmParams::random(3, 2, rng);
  LstmStep s = lstm_step(p, random_matrix(2, 3, 1, rng), random_matrix(2, 2, 1, rng),
                         random_matrix(2, 2, 1, rng));
  LstmParams g = LstmParams::zeros(3, 2);
  LstmStepGrads dg = lstm_step_backward(p, s.tape, Matrix(2, 2), Matrix(2, 2), g);
  for (double v : g.w.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.u.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
  for (double v : dg.x.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmStepBackward, TwoStepGradientIsSumOfStepContributions) {
  std::mt19937_64 rng(5);
  LstmParams p = LstmParams::random(2, 3, rng);
  Matrix x1 = random_matrix(1, 2, 1, rng), x2 = random_matrix(1, 2, 1, rng);
  LstmStep s1 = lstm_step(p, x1, Matrix(1, 3), Matrix(1, 3));
  LstmStep s2 = lstm_step(p, x2, s1.h, s1.c);
  const Matrix w1 = random_matrix(1, 3, 1, rng), w2 = random_matrix(1, 3, 1, rng);

  // Loss = w1.h1 + w2.h2, backpropagated in one sweep.
  LstmParams joint = LstmParams::zeros(2, 3);
  LstmStepGrads g2 = lstm_step_backward(p, s2.tape, w2, Matrix(1, 3), joint);
  Matrix dh1 = w1;
  add_into(dh1, g2.h_prev);
  lstm_step_backward(p, s1.tape, dh1, g2.c_prev, joint);

  // Same loss as two separate terms.
  LstmParams a = LstmParams::zeros(2, 3), b = LstmParams::zeros(2, 3);
  lstm_step_backward(p, s1.tape, w1, Matrix(1, 3), a);
  LstmStepGrads gb = lstm_step_backward(p, s2.tape, w2, Matrix(1, 3), b);
  lstm_step_backward(p, s1.tape, gb.h_prev, gb.c_prev, b);

  for (std::size_t k = 0; k < joint.w.size(); ++k)
    EXPECT_NEAR(joint.w.values()[k], a.w.values()[k] + b.w.values()[k], 1e-14);
  for (std::size_t k = 0; k < joint.bias.size(); ++k)
    EXPECT_NEAR(joint.bias[k], a.bias[k] + b.bias[k], 1e-14);
}

// ---------------------------------------------------------------------------
// Binary LSTM

struct BlstmFixture {
  BlstmParams p;
  Matrix z, feed, c;
};

BlstmFixture make_blstm(std::uint64_t seed, std::size_t batch, std::size_t in, std::size_t len) {
  std::mt19937_64 rng(seed);
  BlstmFixture f{BlstmParams::random(in, len, 2, rng), random_matrix(batch, in, 1.0, rng),
                 Matrix(batch, len), random_matrix(batch, len, 0.8, rng)};
  for (double& v : f.feed.values()) v = rng() % 2 ? 1.0 : -1.0;
  for (auto& n : f.p.norm) {
    std::uniform_real_distribution<double> d(0.3, 0.9);
    for (double& g : n.gamma) g = d(rng);
    for (double& b : n.beta) b = d(rng) - 0.6;
  }
  return f;
}

// Scalar re-evaluation of the binary cell over a batch, normalization included.
Matrix scalar_blstm_h(const BlstmParams& p, std::size_t step, const Matrix& z, const Matrix& feed,
                      const Matrix& c_prev) {
  const std::size_t B = z.rows(), L = p.code_len;
  Matrix pre(B, L), o(B, L);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t k = 0; k < L; ++k) {
      double a[4];
      for (int g = 0; g < 4; ++g) {
        double s = p.bias[g * L + k];
        for (std::size_t d = 0; d < z.cols(); ++d) s += z(r, d) * p.w(d, g * L + k);
        for (std::size_t d = 0; d < L; ++d) s += feed(r, d) * p.u(d, g * L + k);
        if (g < 3) s += p.peep(g, k) * c_prev(r, k);
        a[g] = s;
      }
      const double f = 1 / (1 + std::exp(-a[0])), i = 1 / (1 + std::exp(-a[1]));
      o(r, k) = 1 / (1 + std::exp(-a[2]));
      pre(r, k) = f * c_prev(r, k) + i * std::tanh(a[3]);
    }
  Matrix h(B, L);
  const auto& bn = p.norm[step];
  for (std::size_t k = 0; k < L; ++k) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < B; ++r) mean += pre(r, k) / double(B);
    for (std::size_t r = 0; r < B; ++r) var += (pre(r, k) - mean) * (pre(r, k) - mean) / double(B);
    for (std::size_t r = 0; r < B; ++r) {
      const double c = bn.gamma[k] * (pre(r, k) - mean) / std::sqrt(var + bn.epsilon) + bn.beta[k];
      h(r, k) = o(r, k) * c;
    }
  }
  return h;
}

TEST(BlstmStep, MatchesScalarReference) {
  auto f = make_blstm(21, 4, 3, 5);
  BlstmStep s = blstm_step(f.p, 1, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte);
  Matrix ref = scalar_blstm_h(f.p, 1, f.z, f.feed, f.c);
  for (std::size_t k = 0; k < ref.size(); ++k) {
    EXPECT_NEAR(s.h.values()[k], ref.values()[k], 1e-12);
    EXPECT_EQ(s.code.values()[k], ref.values()[k] >= 0 ? 1.0 : -1.0);
  }
}

TEST(BlstmStep, ZeroParametersGivePlusOneCodes) {
  BlstmParams p = BlstmParams::zeros(3, 4, 1);
  Matrix feed(2, 4, -1.0);
  std::mt19937_64 rng(2);
  BlstmStep s = blstm_step(p, 0, random_matrix(2, 3, 1, rng), feed, Matrix(2, 4), Mode::kTrain,
                           Binarizer::kHardSte);
  for (double v : s.c.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.code.values()) EXPECT_EQ(v, 1.0);
}

TEST(BlstmStep, CodesAreAlwaysBinary) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto f = make_blstm(seed, 3, 4, 6);
    std::mt19937_64 rng(seed + 100);
    const double scale = std::pow(10.0, double(seed % 5) - 2.0);
    for (double& v : f.p.w.values()) v *= scale;
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
      BlstmStep s = blstm_step(f.p, 0, f.z, f.feed, f.c, mode, Binarizer::kHardSte);
      for (double v : s.code.values()) EXPECT_TRUE(v == 1.0 || v == -1.0);
      for (double v : s.feed.values()) EXPECT_TRUE(v == 1.0 || v == -1.0);
    }
  }
}

TEST(BlstmStep, RejectsNonBinaryPreviousCode) {
  auto f = make_blstm(1, 2, 3, 4);
  f.feed(0, 1) = 0.5;
  EXPECT_THROW(blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte), Error);
}

TEST(BlstmStep, TrainModeNeedsTwoRows) {
  auto f = make_blstm(1, 1, 3, 4);
  EXPECT_THROW(blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte), Error);
  EXPECT_NO_THROW(blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kInfer, Binarizer::kHardSte));
}

bool away_from_kinks(const Matrix& h) {
  for (double v : h.values())
    if (std::abs(std::abs(v) - 1.0) < 1e-3) return false;
  return true;
}

TEST(BlstmStepBackward, SurrogateModelMatchesFiniteDifferences) {
  auto f = make_blstm(7, 4, 3, 3);
  std::mt19937_64 rng(9);
  const Matrix wh = random_matrix(4, 3, 1.0, rng);
  const Matrix wf = random_matrix(4, 3, 1.0, rng);
  const Matrix wc = random_matrix(4, 3, 1.0, rng);
  for (double& v : f.feed.values()) v *= 0.7;  // relaxed inputs are not restricted to +-1
  auto run = [&] {
    return blstm_step(f.p, 1, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kSurrogate);
  };
  BlstmStep s = run();
  ASSERT_TRUE(away_from_kinks(s.h));
  auto loss = [&] {
    BlstmStep t = run();
    return weighted_sum(t.h, wh) + weighted_sum(t.feed, wf) + weighted_sum(t.c, wc);
  };
  BlstmParams g = BlstmParams::zeros(3, 3, 2);
  for (auto& n : g.norm) std::fill(n.gamma.begin(), n.gamma.end(), 0.0);
  BlstmStepGrads dg = blstm_step_backward(f.p, s.tape, wh, wf, wc, g);
  auto errs = check_blocks(
      {f.p.w.values(), f.p.u.values(), f.p.peep.values(), f.p.bias, f.p.norm[1].gamma,
       f.p.norm[1].beta, f.z.values(), f.feed.values(), f.c.values()},
      {g.w.values(), g.u.values(), g.peep.values(), g.bias, g.norm[1].gamma, g.norm[1].beta,
       dg.z.values(), dg.feed_prev.values(), dg.c_prev.values()},
      loss);
  for (double e : errs) EXPECT_LE(e, 1e-4);
}

TEST(BlstmStepBackward, ClosedGateBlocksCodeGradient) {
  auto f = make_blstm(4, 3, 3, 4);
  for (auto& n : f.p.norm) {
    std::fill(n.gamma.begin(), n.gamma.end(), 0.1);
    for (std::size_t k = 0; k < n.beta.size(); ++k) n.beta[k] = k % 2 ? 60.0 : -60.0;
  }
  BlstmStep s = blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte);
  for (double v : s.h.values()) ASSERT_GT(std::abs(v), 1.0);
  std::mt19937_64 rng(5);
  BlstmParams g = BlstmParams::zeros(3, 4, 2);
  for (auto& n : g.norm) std::fill(n.gamma.begin(), n.gamma.end(), 0.0);
  BlstmStepGrads dg = blstm_step_backward(f.p, s.tape, Matrix(3, 4), random_matrix(3, 4, 1, rng),
                                          Matrix(3, 4), g);
  visit_tensors(g, "g", [](const std::string& name, std::span<const double> xs) {
    for (double v : xs) EXPECT_EQ(v, 0.0) << name;
  });
  for (double v : dg.z.values()) EXPECT_EQ(v, 0.0);
  for (double v : dg.feed_prev.values()) EXPECT_EQ(v, 0.0);
}

TEST(BlstmStepBackward, ZeroUpstreamGivesZeroGradients) {
  auto f = make_blstm(6, 3, 3, 4);
  BlstmStep s = blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte);
  BlstmParams g = BlstmParams::zeros(3, 4, 2);
  for (auto& n : g.norm) std::fill(n.gamma.begin(), n.gamma.end(), 0.0);
  BlstmStepGrads dg = blstm_step_backward(f.p, s.tape, Matrix(3, 4), Matrix(3, 4), Matrix(3, 4), g);
  visit_tensors(g, "g", [](const std::string& name, std::span<const double> xs) {
    for (double v : xs) EXPECT_EQ(v, 0.0) << name;
  });
  for (double v : dg.c_prev.values()) EXPECT_EQ(v, 0.0);
}

TEST(BlstmStepBackward, TanhRelaxationMatchesFiniteDifferences) {
  auto f = make_blstm(12, 3, 2, 3);
  for (double& v : f.feed.values()) v = std::tanh(v * 0.3);
  std::mt19937_64 rng(13);
  const Matrix wf = random_matrix(3, 3, 1.0, rng);
  auto run = [&] { return blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kTanh); };
  BlstmStep s = run();
  BlstmParams g = BlstmParams::zeros(2, 3, 2);
  for (auto& n : g.norm) std::fill(n.gamma.begin(), n.gamma.end(), 0.0);
  blstm_step_backward(f.p, s.tape, Matrix(3, 3), wf, Matrix(3, 3), g);
  auto errs = check_blocks({f.p.w.values(), f.p.u.values(), f.p.peep.values(), f.p.bias},
                           {g.w.values(), g.u.values(), g.peep.values(), g.bias},
                           [&] { return weighted_sum(run().feed, wf); });
  for (double e : errs) EXPECT_LE(e, 1e-4);
}

TEST(BlstmStep, IdenticalInputsAreBitReproducible) {
  auto f = make_blstm(30, 4, 3, 5);
  BlstmStep a = blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte);
  BlstmStep b = blstm_step(f.p, 0, f.z, f.feed, f.c, Mode::kTrain, Binarizer::kHardSte);
  EXPECT_EQ(a.h, b.h);
  EXPECT_EQ(a.norm_state.running_mean, b.norm_state.running_mean);
}

}  // namespace
}  // namespace ssvh
