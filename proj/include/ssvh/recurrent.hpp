#pragma once

// Vanilla LSTM and binary LSTM cells with hand-derived backward passes.
//
// Every step operates on a batch: row r of each matrix belongs to sequence r.
// Gate blocks are laid out [forget | input | output | candidate] along the
// columns of the weight matrices and the bias vector.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "ssvh/numerics.hpp"

namespace ssvh {

enum class Gate : std::size_t { kForget = 0, kInput = 1, kOutput = 2, kCandidate = 3 };

inline std::size_t gate_offset(Gate g, std::size_t hidden) {
  return static_cast<std::size_t>(g) * hidden;
}

// How the real-valued hidden state h becomes the signal fed to the recurrence
// and the decoders.
enum class Binarizer {
  kHardSte,    // sgn forward, 1(|h|<=1) backward
  kSurrogate,  // p(h) forward and backward; a smooth stand-in for gradient checks
  kTanh,       // tanh forward and backward
};

inline double sgn(double h) { return h >= 0.0 ? 1.0 : -1.0; }

inline double sgn_surrogate(double h) { return h < -1.0 ? -1.0 : (h > 1.0 ? 1.0 : h); }

inline double sgn_surrogate_grad(double h) { return std::abs(h) <= 1.0 ? 1.0 : 0.0; }

inline double binarize_forward(Binarizer kind, double h) {
  switch (kind) {
    case Binarizer::kHardSte:
      return sgn(h);
    case Binarizer::kSurrogate:
      return sgn_surrogate(h);
    case Binarizer::kTanh:
      return std::tanh(h);
  }
  return sgn(h);
}

inline double binarize_grad(Binarizer kind, double h) {
  if (kind == Binarizer::kTanh) {
    const double t = std::tanh(h);
    return 1.0 - t * t;
  }
  return sgn_surrogate_grad(h);
}

using Rng = std::mt19937_64;

inline void fill_uniform(std::span<double> xs, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : xs) v = dist(rng);
}

// ---------------------------------------------------------------------------
// LSTM

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Matrix w;     // input_dim x 4H
  Matrix u;     // H x 4H
  Vector bias;  // 4H

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    return {input_dim, hidden_dim, Matrix(input_dim, 4 * hidden_dim),
            Matrix(hidden_dim, 4 * hidden_dim), Vector(4 * hidden_dim, 0.0)};
  }

  // Uniform in +-1/sqrt(fan_in) per matrix, forget-gate bias 1.
  static LstmParams random(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    LstmParams p = zeros(input_dim, hidden_dim);
    if (input_dim > 0) fill_uniform(p.w.values(), 1.0 / std::sqrt(double(input_dim)), rng);
    fill_uniform(p.u.values(), 1.0 / std::sqrt(double(hidden_dim)), rng);
    for (std::size_t k = 0; k < hidden_dim; ++k) p.bias[gate_offset(Gate::kForget, hidden_dim) + k] = 1.0;
    return p;
  }
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LstmParams>
void visit_tensors(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".w", p.w.values());
  f(prefix + ".u", p.u.values());
  f(prefix + ".bias", std::span(p.bias));
}

struct LstmTape {
  Matrix x, h_prev, c_prev;
  Matrix f, i, o, m;
  Matrix tanh_c;
};

struct LstmStep {
  Matrix h;
  Matrix c;
  LstmTape tape;
};

struct LstmStepGrads {
  Matrix x;
  Matrix h_prev;
  Matrix c_prev;
};

inline LstmStep lstm_step(const LstmParams& p, const Matrix& x, const Matrix& h_prev,
                          const Matrix& c_prev) {
  const std::size_t hid = p.hidden_dim;
  const std::size_t batch = x.rows();
  require(x.cols() == p.input_dim && h_prev.rows() == batch && h_prev.cols() == hid &&
              c_prev.same_shape(h_prev),
          ErrorKind::kShape,
          "lstm_step: x" + shape_str(x) + " h" + shape_str(h_prev) + " c" + shape_str(c_prev) +
              " for input_dim " + std::to_string(p.input_dim) + ", hidden " +
              std::to_string(hid));

  Matrix a = affine(x, p.w, p.bias);
  matmul_acc(h_prev, p.u, a);

  LstmStep s{Matrix(batch, hid), Matrix(batch, hid),
             {x, h_prev, c_prev, Matrix(batch, hid), Matrix(batch, hid), Matrix(batch, hid),
              Matrix(batch, hid), Matrix(batch, hid)}};
  LstmTape& t = s.tape;
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < hid; ++k) {
      const double f = sigmoid(a(r, k));
      const double i = sigmoid(a(r, hid + k));
      const double o = sigmoid(a(r, 2 * hid + k));
      const double m = std::tanh(a(r, 3 * hid + k));
      const double c = f * c_prev(r, k) + i * m;
      const double tc = std::tanh(c);
      t.f(r, k) = f;
      t.i(r, k) = i;
      t.o(r, k) = o;
      t.m(r, k) = m;
      t.tanh_c(r, k) = tc;
      s.c(r, k) = c;
      s.h(r, k) = o * tc;
    }
  }
  return s;
}

// Accumulates parameter gradients into `grads` and returns gradients with
// respect to the step inputs.
inline LstmStepGrads lstm_step_backward(const LstmParams& p, const LstmTape& t, const Matrix& dh,
                                        const Matrix& dc, LstmParams& grads) {
  const std::size_t hid = p.hidden_dim;
  const std::size_t batch = t.f.rows();
  require(dh.rows() == batch && dh.cols() == hid && dc.same_shape(dh) &&
              t.x.cols() == p.input_dim && grads.w.same_shape(p.w) && grads.u.same_shape(p.u),
          ErrorKind::kShape, "lstm_step_backward: tape/gradient shape mismatch");

  Matrix da(batch, 4 * hid);
  LstmStepGrads g{Matrix(batch, p.input_dim), Matrix(batch, hid), Matrix(batch, hid)};
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < hid; ++k) {
      const double f = t.f(r, k), i = t.i(r, k), o = t.o(r, k), m = t.m(r, k);
      const double tc = t.tanh_c(r, k);
      const double dct = dc(r, k) + dh(r, k) * o * (1.0 - tc * tc);
      da(r, k) = dct * t.c_prev(r, k) * f * (1.0 - f);
      da(r, hid + k) = dct * m * i * (1.0 - i);
      da(r, 2 * hid + k) = dh(r, k) * tc * o * (1.0 - o);
      da(r, 3 * hid + k) = dct * i * (1.0 - m * m);
      g.c_prev(r, k) = dct * f;
    }
  }
  matmul_tn_acc(t.x, da, grads.w);
  matmul_tn_acc(t.h_prev, da, grads.u);
  add_column_sums(da, grads.bias);
  matmul_nt_acc(da, p.w, g.x);
  matmul_nt_acc(da, p.u, g.h_prev);
  return g;
}

// ---------------------------------------------------------------------------
// Binary LSTM
//
// The recurrent input to every gate is the previous binarized output, the
// forget/input/output gates carry diagonal peepholes on the previous cell, the
// new cell is batch-normalized per time step and h = o * c without a tanh.

struct BlstmParams {
  std::size_t input_dim = 0;
  std::size_t code_len = 0;
  Matrix w;     // input_dim x 4L
  Matrix u;     // L x 4L, applied to b_{t-1}
  Matrix peep;  // 3 x L: rows forget, input, output
  Vector bias;  // 4L
  std::vector<BatchNormState> norm;  // one per time step

  static BlstmParams zeros(std::size_t input_dim, std::size_t code_len, std::size_t steps) {
    BlstmParams p{input_dim, code_len, Matrix(input_dim, 4 * code_len),
                  Matrix(code_len, 4 * code_len), Matrix(3, code_len), Vector(4 * code_len, 0.0),
                  {}};
    p.norm.assign(steps, BatchNormState::identity(code_len));
    return p;
  }

  static BlstmParams random(std::size_t input_dim, std::size_t code_len, std::size_t steps,
                            Rng& rng) {
    BlstmParams p = zeros(input_dim, code_len, steps);
    fill_uniform(p.w.values(), 1.0 / std::sqrt(double(input_dim)), rng);
    fill_uniform(p.u.values(), 1.0 / std::sqrt(double(code_len)), rng);
    fill_uniform(p.peep.values(), 1.0 / std::sqrt(double(code_len)), rng);
    for (std::size_t k = 0; k < code_len; ++k) p.bias[gate_offset(Gate::kForget, code_len) + k] = 1.0;
    return p;
  }
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, BlstmParams>
void visit_tensors(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".w", p.w.values());
  f(prefix + ".u", p.u.values());
  f(prefix + ".peep", p.peep.values());
  f(prefix + ".bias", std::span(p.bias));
  for (std::size_t s = 0; s < p.norm.size(); ++s) {
    f(prefix + ".norm" + std::to_string(s) + ".gamma", std::span(p.norm[s].gamma));
    f(prefix + ".norm" + std::to_string(s) + ".beta", std::span(p.norm[s].beta));
  }
}

struct BlstmTape {
  std::size_t step = 0;
  Binarizer binarizer = Binarizer::kHardSte;
  Matrix z, feed_prev, c_prev;
  Matrix f, i, o, m;
  BatchNormCache norm;
  Matrix c, h;
};

struct BlstmStep {
  Matrix h;     // pre-binarization hidden state
  Matrix code;  // sgn(h), always in {-1,+1}
  Matrix feed;  // binarizer(h): recurrent input of the next step
  Matrix c;
  BatchNormState norm_state;  // running statistics after this step
  BlstmTape tape;
};

struct BlstmStepGrads {
  Matrix z;
  Matrix feed_prev;
  Matrix c_prev;
};

inline BlstmStep blstm_step(const BlstmParams& p, std::size_t step, const Matrix& z,
                            const Matrix& feed_prev, const Matrix& c_prev, Mode mode,
                            Binarizer binarizer) {
  const std::size_t len = p.code_len;
  const std::size_t batch = z.rows();
  require(step < p.norm.size(), ErrorKind::kShape,
          "blstm_step: step " + std::to_string(step) + " beyond " +
              std::to_string(p.norm.size()) + " normalized steps");
  require(z.cols() == p.input_dim && feed_prev.rows() == batch && feed_prev.cols() == len &&
              c_prev.same_shape(feed_prev),
          ErrorKind::kShape,
          "blstm_step: z" + shape_str(z) + " b" + shape_str(feed_prev) + " c" +
              shape_str(c_prev) + " for input_dim " + std::to_string(p.input_dim) +
              ", code_len " + std::to_string(len));
  if (binarizer == Binarizer::kHardSte) {
    for (double v : feed_prev.values())
      require(v == 1.0 || v == -1.0, ErrorKind::kData,
              "blstm_step: previous code contains " + std::to_string(v) + ", expected -1 or +1");
  }

  Matrix a = affine(z, p.w, p.bias);
  matmul_acc(feed_prev, p.u, a);

  BlstmTape t{step,           binarizer,          z, feed_prev, c_prev, Matrix(batch, len),
              Matrix(batch, len), Matrix(batch, len), Matrix(batch, len), {}, {}, {}};
  Matrix pre(batch, len);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const double cp = c_prev(r, k);
      const double f = sigmoid(a(r, k) + p.peep(0, k) * cp);
      const double i = sigmoid(a(r, len + k) + p.peep(1, k) * cp);
      const double o = sigmoid(a(r, 2 * len + k) + p.peep(2, k) * cp);
      const double m = std::tanh(a(r, 3 * len + k));
      t.f(r, k) = f;
      t.i(r, k) = i;
      t.o(r, k) = o;
      t.m(r, k) = m;
      pre(r, k) = f * cp + i * m;
    }
  }
  BatchNormResult bn = batch_norm(pre, p.norm[step], mode);
  t.norm = std::move(bn.cache);

  BlstmStep s{Matrix(batch, len), Matrix(batch, len), Matrix(batch, len), bn.y,
              std::move(bn.state), {}};
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const double h = t.o(r, k) * s.c(r, k);
      s.h(r, k) = h;
      s.code(r, k) = sgn(h);
      s.feed(r, k) = binarize_forward(binarizer, h);
    }
  }
  t.c = s.c;
  t.h = s.h;
  s.tape = std::move(t);
  return s;
}

// dh: gradient on h from direct consumers (the neighborhood loss).
// dfeed: gradient on the binarized output; it reaches h only where the
// binarizer lets it through.
// dc: gradient on the (normalized) cell from the next step.
inline BlstmStepGrads blstm_step_backward(const BlstmParams& p, const BlstmTape& t,
                                          const Matrix& dh, const Matrix& dfeed,
                                          const Matrix& dc, BlstmParams& grads) {
  const std::size_t len = p.code_len;
  const std::size_t batch = t.h.rows();
  require(dh.rows() == batch && dh.cols() == len && dfeed.same_shape(dh) && dc.same_shape(dh) &&
              t.z.cols() == p.input_dim && t.step < p.norm.size() &&
              grads.norm.size() == p.norm.size() && grads.w.same_shape(p.w),
          ErrorKind::kShape, "blstm_step_backward: tape/gradient shape mismatch");

  Matrix dnorm(batch, len);
  Matrix dout(batch, len);  // d pre-activation of the output gate
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const double h = t.h(r, k);
      const double dht = dh(r, k) + dfeed(r, k) * binarize_grad(t.binarizer, h);
      const double o = t.o(r, k);
      dout(r, k) = dht * t.c(r, k) * o * (1.0 - o);
      dnorm(r, k) = dc(r, k) + dht * o;
    }
  }
  BatchNormState& gn = grads.norm[t.step];
  Matrix dpre = batch_norm_backward(dnorm, t.norm, p.norm[t.step].gamma, gn.gamma, gn.beta);

  Matrix da(batch, 4 * len);
  BlstmStepGrads g{Matrix(batch, p.input_dim), Matrix(batch, len), Matrix(batch, len)};
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t k = 0; k < len; ++k) {
      const double f = t.f(r, k), i = t.i(r, k), m = t.m(r, k), cp = t.c_prev(r, k);
      const double ds = dpre(r, k);
      const double daf = ds * cp * f * (1.0 - f);
      const double dai = ds * m * i * (1.0 - i);
      const double dao = dout(r, k);
      da(r, k) = daf;
      da(r, len + k) = dai;
      da(r, 2 * len + k) = dao;
      da(r, 3 * len + k) = ds * i * (1.0 - m * m);
      grads.peep(0, k) += daf * cp;
      grads.peep(1, k) += dai * cp;
      grads.peep(2, k) += dao * cp;
      g.c_prev(r, k) = ds * f + daf * p.peep(0, k) + dai * p.peep(1, k) + dao * p.peep(2, k);
    }
  }
  matmul_tn_acc(t.z, da, grads.w);
  matmul_tn_acc(t.feed_prev, da, grads.u);
  add_column_sums(da, grads.bias);
  matmul_nt_acc(da, p.w, g.z);
  matmul_nt_acc(da, p.u, g.feed_prev);
  return g;
}

}  // namespace ssvh
