#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovrd/rng.hpp"

namespace ovrd::nn {

using Vec = std::vector<double>;

/// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  double* row(std::size_t r) { return a.data() + r * cols; }
  std::size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline Vec matvec(const Mat& w, const Vec& x) {
  if (x.size() != w.cols)
    throw std::invalid_argument("matvec: dimension mismatch (" +
                                std::to_string(x.size()) + " vs " +
                                std::to_string(w.cols) + " cols)");
  Vec y(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
  return y;
}

inline double dot(const Vec& x, const Vec& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline double norm(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Two-layer perceptron with ReLU
// ---------------------------------------------------------------------------

/// Parameters of y = W2 * relu(W1 * x + b1) + b2. Also reused as the
/// gradient container (same shapes).
struct MlpParams {
  Mat w1;  // hidden x in
  Vec b1;  // hidden
  Mat w2;  // out x hidden
  Vec b2;  // out

  static MlpParams zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    MlpParams p;
    p.w1 = Mat(hidden, in);
    p.b1.assign(hidden, 0.0);
    p.w2 = Mat(out, hidden);
    p.b2.assign(out, 0.0);
    return p;
  }

  /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
  static MlpParams seeded(std::size_t in, std::size_t hidden, std::size_t out,
                          Rng& rng) {
    MlpParams p = zeros(in, hidden, out);
    double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : p.w1.a) w = rng.uniform(-s1, s1);
    double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& w : p.w2.a) w = rng.uniform(-s2, s2);
    return p;
  }

  std::size_t in_dim() const { return w1.cols; }
  std::size_t hidden_dim() const { return w1.rows; }
  std::size_t out_dim() const { return w2.rows; }
  void zero() {
    w1.zero();
    std::fill(b1.begin(), b1.end(), 0.0);
    w2.zero();
    std::fill(b2.begin(), b2.end(), 0.0);
  }
};

struct MlpCache {
  Vec x;   // input
  Vec z1;  // pre-activation
  Vec h1;  // relu(z1)
};

inline Vec mlp_forward(const MlpParams& p, const Vec& x, MlpCache* cache = nullptr) {
  Vec z1 = matvec(p.w1, x);
  for (std::size_t i = 0; i < z1.size(); ++i) z1[i] += p.b1[i];
  Vec h1(z1.size());
  for (std::size_t i = 0; i < z1.size(); ++i) h1[i] = z1[i] > 0.0 ? z1[i] : 0.0;
  Vec y = matvec(p.w2, h1);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += p.b2[i];
  if (cache) {
    cache->x = x;
    cache->z1 = std::move(z1);
    cache->h1 = std::move(h1);
  }
  return y;
}

/// Backward pass; accumulates parameter gradients into `g` (same shapes as
/// the params) and returns dL/dx. ReLU subgradient at 0 is 0.
inline Vec mlp_backward(const MlpParams& p, const MlpCache& cache, const Vec& dy,
                        MlpParams& g) {
  if (dy.size() != p.out_dim())
    throw std::invalid_argument("mlp_backward: dy dimension mismatch");
  std::size_t hidden = p.hidden_dim(), in = p.in_dim(), out = p.out_dim();
  // dW2 += dy * h1^T ; db2 += dy ; dh1 = W2^T dy
  Vec dh1(hidden, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    const double* w2r = p.w2.row(r);
    double* g2r = g.w2.row(r);
    double d = dy[r];
    g.b2[r] += d;
    for (std::size_t c = 0; c < hidden; ++c) {
      g2r[c] += d * cache.h1[c];
      dh1[c] += w2r[c] * d;
    }
  }
  // through relu
  for (std::size_t i = 0; i < hidden; ++i)
    if (cache.z1[i] <= 0.0) dh1[i] = 0.0;
  // dW1 += dz1 * x^T ; db1 += dz1 ; dx = W1^T dz1
  Vec dx(in, 0.0);
  for (std::size_t r = 0; r < hidden; ++r) {
    double d = dh1[r];
    if (d == 0.0) continue;
    g.b1[r] += d;
    const double* w1r = p.w1.row(r);
    double* g1r = g.w1.row(r);
    for (std::size_t c = 0; c < in; ++c) {
      g1r[c] += d * cache.x[c];
      dx[c] += w1r[c] * d;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Similarities and losses
// ---------------------------------------------------------------------------

inline constexpr double kCosineNormEps = 1e-12;

inline double cosine(const Vec& x, const Vec& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("cosine: dimension mismatch");
  double nx = std::max(norm(x), kCosineNormEps);
  double ny = std::max(norm(y), kCosineNormEps);
  return dot(x, y) / (nx * ny);
}

/// Cosine with gradients w.r.t. both arguments. Returns the value; dx/dy may
/// be null when a side is not needed.
inline double cosine_grad(const Vec& x, const Vec& y, Vec* dx, Vec* dy) {
  if (x.size() != y.size())
    throw std::invalid_argument("cosine_grad: dimension mismatch");
  double nx = std::max(norm(x), kCosineNormEps);
  double ny = std::max(norm(y), kCosineNormEps);
  double d = dot(x, y);
  double c = d / (nx * ny);
  if (dx) {
    dx->assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      (*dx)[i] = y[i] / (nx * ny) - c * x[i] / (nx * nx);
  }
  if (dy) {
    dy->assign(y.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i)
      (*dy)[i] = x[i] / (nx * ny) - c * y[i] / (ny * ny);
  }
  return c;
}

/// Temperature softmax with max-subtraction. tau must be positive.
inline Vec softmax_temp(const Vec& logits, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("softmax_temp: tau must be > 0");
  if (logits.empty()) throw std::invalid_argument("softmax_temp: empty logits");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  Vec p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / tau);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline constexpr double kBceEps = 1e-7;

/// Mean over dimensions of -[t log p + (1-t) log(1-p)], probabilities
/// clamped to [kBceEps, 1-kBceEps].
inline double bce_loss(const Vec& p, const Vec& t) {
  if (p.size() != t.size())
    throw std::invalid_argument("bce_loss: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = std::min(std::max(p[i], kBceEps), 1.0 - kBceEps);
    acc += -(t[i] * std::log(pi) + (1.0 - t[i]) * std::log(1.0 - pi));
  }
  return acc / static_cast<double>(p.size());
}

/// Gradient of bce_loss w.r.t. the pre-sigmoid input: (p - t) / k.
inline Vec bce_grad_presigmoid(const Vec& p, const Vec& t) {
  Vec g(p.size());
  double inv = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = (p[i] - t[i]) * inv;
  return g;
}

/// Mean absolute difference.
inline double l1_loss(const Vec& x, const Vec& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("l1_loss: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::fabs(x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

/// Subgradient of l1_loss w.r.t. x; 0 at ties.
inline Vec l1_subgrad(const Vec& x, const Vec& y) {
  Vec g(x.size(), 0.0);
  double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - y[i];
    g[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// A trainable parameter block paired with its gradient storage.
struct ParamRef {
  double* p = nullptr;
  double* g = nullptr;
  std::size_t n = 0;
};

inline ParamRef param_ref(Vec& p, Vec& g) { return {p.data(), g.data(), p.size()}; }
inline ParamRef param_ref(Mat& p, Mat& g) {
  return {p.a.data(), g.a.data(), p.a.size()};
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m, v;
  long step = 0;
};

/// Standard bias-corrected Adam update over a list of parameter blocks.
/// Fails fast on non-finite gradients. Deterministic given identical inputs.
inline void adam_step(std::span<const ParamRef> params, const AdamConfig& cfg,
                      AdamState& state) {
  std::size_t total = 0;
  for (const auto& pr : params) total += pr.n;
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total)
    throw std::invalid_argument("adam_step: state size mismatch");
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (const auto& pr : params) {
    for (std::size_t i = 0; i < pr.n; ++i) {
      double g = pr.g[i];
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient");
      double& m = state.m[off + i];
      double& v = state.v[off + i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      pr.p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    off += pr.n;
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Compares analytic gradients (already stored in each ParamRef's g) against
/// central finite differences of `loss` and returns the worst relative error
/// |a - f| / max(|a|, |f|, 1e-6). loss() must be deterministic.
inline double finite_diff_check(const std::function<double()>& loss,
                                std::span<const ParamRef> params,
                                double eps = 1e-5) {
  double worst = 0.0;
  for (const auto& pr : params) {
    for (std::size_t i = 0; i < pr.n; ++i) {
      double saved = pr.p[i];
      pr.p[i] = saved + eps;
      double lp = loss();
      pr.p[i] = saved - eps;
      double lm = loss();
      pr.p[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double a = pr.g[i];
      double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace ovrd::nn
