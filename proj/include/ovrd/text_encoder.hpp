#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovrd/nnkit.hpp"
#include "ovrd/rng.hpp"

namespace ovrd {

/// Fixed class token: a unit vector derived deterministically from
/// (name, vocabulary seed). Never updated by training.
struct ClassToken {
  std::string name;
  nn::Vec vec;
};

inline ClassToken class_token(const std::string& name, std::uint64_t vocab_seed,
                              std::size_t d_tok) {
  if (name.empty()) throw std::invalid_argument("class_token: empty name");
  Rng rng(fnv1a64(name) ^ (vocab_seed * 0x9e3779b97f4a7c15ull));
  nn::Vec v(d_tok);
  for (auto& x : v) x = rng.gaussian();
  double n = std::max(nn::norm(v), 1e-12);
  for (auto& x : v) x /= n;
  return {name, std::move(v)};
}

/// L learnable context token vectors, each d_tok-dimensional.
struct PromptContext {
  nn::Mat tokens;  // L x d_tok

  std::size_t length() const { return tokens.rows; }
  std::size_t d_tok() const { return tokens.cols; }

  static PromptContext seeded(std::size_t l, std::size_t d_tok, Rng& rng) {
    PromptContext c;
    c.tokens = nn::Mat(l, d_tok);
    double s = 1.0 / std::sqrt(static_cast<double>(d_tok));
    for (auto& w : c.tokens.a) w = rng.uniform(-s, s);
    return c;
  }
};

/// Non-learnable context playing the role of a handcrafted prompt for object
/// classification. Deterministic in the seed; never trained.
inline PromptContext fixed_template_context(std::size_t l, std::size_t d_tok,
                                            std::uint64_t seed) {
  Rng rng(seed ^ 0x7e57c0de7e57c0deull);
  return PromptContext::seeded(l, d_tok, rng);
}

/// Deterministic differentiable stand-in for the VLM text tower. The L
/// context tokens are mean-pooled and normalized to a unit direction, the
/// class token keeps its own fixed projection, and the two are fused through
/// a tanh and L2-normalized:
///
///   t = normalize(tanh(P_ctx * normalize(mean(ctx)) + P_tok * token + b))
///
/// Normalizing the context mean keeps the learned context from drowning the
/// fixed class token (unbounded context growth would otherwise erase the
/// per-class signal that prompt tuning relies on). The maps are frozen;
/// gradients flow to the context tokens only.
struct SurrogateEncoder {
  nn::Mat proj_ctx;  // d x d_tok
  nn::Mat proj_tok;  // d x d_tok
  nn::Vec bias;      // d
  std::uint64_t seed = 0;

  static SurrogateEncoder make(std::size_t d_tok, std::size_t d,
                               std::uint64_t seed) {
    SurrogateEncoder e;
    e.seed = seed;
    Rng rng(seed ^ 0x5bd1e995c0dec0deull);
    double s = 3.0 / std::sqrt(static_cast<double>(d_tok));
    e.proj_ctx = nn::Mat(d, d_tok);
    for (auto& w : e.proj_ctx.a) w = rng.gaussian() * s;
    e.proj_tok = nn::Mat(d, d_tok);
    for (auto& w : e.proj_tok.a) w = rng.gaussian() * s;
    e.bias.resize(d);
    for (auto& b : e.bias) b = rng.gaussian() * 0.3;
    return e;
  }

  std::size_t out_dim() const { return proj_ctx.rows; }
  std::size_t tok_dim() const { return proj_ctx.cols; }

  struct Cache {
    nn::Vec ctx_mean, ctx_dir, h;
    double inv_ctx_norm = 0.0;
    double inv_norm = 0.0;
    std::size_t n_ctx = 0;
  };

  /// Encodes a prompt (context + class token) to a unit vector in R^d.
  nn::Vec encode(const PromptContext& ctx, const nn::Vec& token,
                 Cache* cache = nullptr) const {
    if (token.size() != tok_dim())
      throw std::invalid_argument("SurrogateEncoder: token dimension mismatch");
    if (ctx.d_tok() != tok_dim())
      throw std::invalid_argument("SurrogateEncoder: context dimension mismatch");
    std::size_t l = ctx.length();
    if (l == 0) throw std::invalid_argument("SurrogateEncoder: empty context");
    nn::Vec ctx_mean(tok_dim(), 0.0);
    for (std::size_t r = 0; r < l; ++r) {
      const double* row = ctx.tokens.row(r);
      for (std::size_t c = 0; c < ctx_mean.size(); ++c) ctx_mean[c] += row[c];
    }
    for (auto& v : ctx_mean) v /= static_cast<double>(l);
    // Smooth norm guards keep the zero-input cases defined and the map
    // differentiable everywhere; the deviation from an exact unit vector is
    // negligible for any non-degenerate input.
    double nc = std::sqrt(nn::dot(ctx_mean, ctx_mean) + 1e-24);
    nn::Vec ctx_dir(ctx_mean.size());
    for (std::size_t i = 0; i < ctx_mean.size(); ++i) ctx_dir[i] = ctx_mean[i] / nc;
    nn::Vec h = nn::matvec(proj_ctx, ctx_dir);
    nn::Vec ht = nn::matvec(proj_tok, token);
    for (std::size_t i = 0; i < h.size(); ++i)
      h[i] = std::tanh(h[i] + ht[i] + bias[i]);
    double n = std::sqrt(nn::dot(h, h) + 1e-24);
    nn::Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] / n;
    if (cache) {
      cache->ctx_mean = std::move(ctx_mean);
      cache->ctx_dir = std::move(ctx_dir);
      cache->h = std::move(h);
      cache->inv_ctx_norm = 1.0 / nc;
      cache->inv_norm = 1.0 / n;
      cache->n_ctx = l;
    }
    return out;
  }

  /// Backpropagates dL/d(output) to dL/d(context mean). Each context token's
  /// gradient is the returned vector divided by L; the class token is fixed.
  nn::Vec backward_context_mean(const Cache& cache, const nn::Vec& dout) const {
    const nn::Vec& h = cache.h;
    double inv_n = cache.inv_norm;
    double hd = nn::dot(h, dout);
    nn::Vec du(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      double dh = dout[i] * inv_n - h[i] * hd * inv_n * inv_n * inv_n;
      du[i] = dh * (1.0 - h[i] * h[i]);  // tanh'
    }
    nn::Vec ddir(tok_dim(), 0.0);
    for (std::size_t r = 0; r < proj_ctx.rows; ++r) {
      const double* pr = proj_ctx.row(r);
      double d = du[r];
      if (d == 0.0) continue;
      for (std::size_t c = 0; c < proj_ctx.cols; ++c) ddir[c] += pr[c] * d;
    }
    // Through the context normalization.
    double inv_nc = cache.inv_ctx_norm;
    double md = nn::dot(cache.ctx_mean, ddir);
    nn::Vec dmean(ddir.size());
    for (std::size_t i = 0; i < dmean.size(); ++i)
      dmean[i] = ddir[i] * inv_nc - cache.ctx_mean[i] * md * inv_nc * inv_nc * inv_nc;
    return dmean;
  }
};

/// One compositional prompt pair: a subject-role context and an object-role
/// context, shared by every predicate class within the group.
struct PromptGroup {
  PromptContext subj, obj;
};

/// The per-motion-pattern prompt groups. Motion-conditioned variants hold 6
/// groups keyed by pattern_index; the no-motion ablations hold 1.
struct PromptBank {
  std::vector<PromptGroup> groups;

  std::size_t n_groups() const { return groups.size(); }

  static PromptBank seeded(std::size_t n_groups, std::size_t l,
                           std::size_t d_tok, Rng& rng) {
    PromptBank b;
    b.groups.reserve(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g)
      b.groups.push_back({PromptContext::seeded(l, d_tok, rng),
                          PromptContext::seeded(l, d_tok, rng)});
    return b;
  }
};

/// Predicate text embedding t_c for one group: the subject-prompt encoding
/// concatenated with the object-prompt encoding (2d-dimensional).
inline nn::Vec predicate_text_embedding(const SurrogateEncoder& enc,
                                        const PromptBank& bank, int group,
                                        const nn::Vec& token) {
  if (group < 0 || static_cast<std::size_t>(group) >= bank.n_groups())
    throw std::invalid_argument("predicate_text_embedding: bad group id " +
                                std::to_string(group));
  nn::Vec s = enc.encode(bank.groups[group].subj, token);
  nn::Vec o = enc.encode(bank.groups[group].obj, token);
  s.insert(s.end(), o.begin(), o.end());
  return s;
}

/// Single (non-compositional) encoding used for object classification and
/// for the single-prompt ablation.
inline nn::Vec object_text_embedding(const SurrogateEncoder& enc,
                                     const PromptContext& ctx,
                                     const nn::Vec& token) {
  return enc.encode(ctx, token);
}

}  // namespace ovrd
