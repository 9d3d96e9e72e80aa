#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ovrd/checkpoint.hpp"
#include "ovrd/config.hpp"
#include "ovrd/dataset.hpp"
#include "ovrd/geometry.hpp"
#include "ovrd/nnkit.hpp"
#include "ovrd/text_encoder.hpp"

namespace ovrd {

/// Open-vocabulary tracklet classifier: a visual-to-language projection
/// phi_o (2048 -> hidden -> d), a learnable temperature (kept in log space so
/// it stays positive), and the object text-embedding table. During training
/// the table covers exactly the base classes; open-vocabulary inference
/// builds a wider table on the side.
struct TrackletClassifier {
  nn::MlpParams phi_o;
  nn::Vec log_tau{0.0};
  std::vector<std::string> class_names;  // base classes, table order
  std::vector<nn::Vec> text_table;       // t_c^o per base class
  nn::Vec bg_embedding;                  // optional, empty when disabled

  double tau() const { return std::exp(log_tau[0]); }
  bool use_bg() const { return !bg_embedding.empty(); }
};

/// Builds t_c^o for every name using the fixed template context.
inline std::vector<nn::Vec> build_object_table(const SurrogateEncoder& enc,
                                               const PromptContext& template_ctx,
                                               const std::vector<std::string>& names,
                                               std::uint64_t vocab_seed) {
  std::vector<nn::Vec> table;
  table.reserve(names.size());
  for (const auto& n : names)
    table.push_back(object_text_embedding(enc, template_ctx,
                                          class_token(n, vocab_seed, enc.tok_dim()).vec));
  return table;
}

inline TrackletClassifier make_tracklet_classifier(
    const Config& cfg, const std::vector<std::string>& base_names,
    const SurrogateEncoder& enc, Rng& rng) {
  TrackletClassifier clf;
  clf.phi_o = nn::MlpParams::seeded(kRoiFeatureDim, cfg.get_u("hidden"),
                                    cfg.get_u("embed_dim"), rng);
  clf.log_tau = {std::log(cfg.get_f("tau_init"))};
  clf.class_names = base_names;
  auto template_ctx = fixed_template_context(cfg.get_u("prompt_len"),
                                             cfg.get_u("d_tok"),
                                             cfg.get_u("template_seed"));
  clf.text_table = build_object_table(enc, template_ctx, base_names,
                                      cfg.get_u("vocab_seed"));
  if (cfg.get_i("use_bg_embedding") != 0) {
    clf.bg_embedding.resize(cfg.get_u("embed_dim"));
    double s = 1.0 / std::sqrt(static_cast<double>(clf.bg_embedding.size()));
    for (auto& v : clf.bg_embedding) v = rng.uniform(-s, s);
  }
  return clf;
}

/// Probability vector over the base classes: softmax over cos(phi_o(f), t_c)
/// scaled by the temperature.
inline nn::Vec classify_tracklet(const TrackletClassifier& clf, const nn::Vec& f) {
  nn::Vec v = nn::mlp_forward(clf.phi_o, f);
  nn::Vec logits(clf.text_table.size());
  for (std::size_t c = 0; c < clf.text_table.size(); ++c)
    logits[c] = nn::cosine(v, clf.text_table[c]);
  return nn::softmax_temp(logits, clf.tau());
}

/// Per-tracklet labels: the class of the best-overlapping base-class ground
/// truth tracklet when its vIoU reaches the threshold, -1 (negative)
/// otherwise. Tracklets overlapping only novel-class ground truth stay
/// negative, as does background.
struct LabelAssignment {
  std::vector<int> labels;

  std::size_t positives() const {
    std::size_t n = 0;
    for (int l : labels) n += l >= 0;
    return n;
  }
};

inline LabelAssignment assign_tracklet_labels(const std::vector<Tracklet>& tracklets,
                                              const VideoGroundTruth& gt,
                                              const Vocabulary& objects,
                                              double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw std::invalid_argument("assign_tracklet_labels: threshold must be in (0,1)");
  std::map<std::int64_t, const Tracklet*> by_id;
  for (const auto& t : tracklets) by_id[t.id] = &t;
  LabelAssignment out;
  out.labels.assign(tracklets.size(), -1);
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    double best = 0.0;
    int best_cls = -1;
    for (const auto& [gt_id, cls] : gt.tracklet_cls) {
      if (objects.is_novel(cls)) continue;
      auto it = by_id.find(gt_id);
      if (it == by_id.end())
        throw std::logic_error("assign_tracklet_labels: ground truth tracklet " +
                               std::to_string(gt_id) + " not in tracklet list");
      double v = viou(tracklets[i], *it->second);
      if (v > best) {
        best = v;
        best_cls = cls;
      }
    }
    if (best >= iou_threshold && best_cls >= 0) out.labels[i] = best_cls;
  }
  return out;
}

struct TrackletLosses {
  double pos = 0.0, neg = 0.0, distill = 0.0, total = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
};

struct TrackletClassifierGrads {
  nn::MlpParams phi_o;
  nn::Vec log_tau{0.0};
  nn::Vec bg;

  static TrackletClassifierGrads zeros_like(const TrackletClassifier& clf) {
    TrackletClassifierGrads g;
    g.phi_o = nn::MlpParams::zeros(clf.phi_o.in_dim(), clf.phi_o.hidden_dim(),
                                   clf.phi_o.out_dim());
    g.log_tau = {0.0};
    if (clf.use_bg()) g.bg.assign(clf.bg_embedding.size(), 0.0);
    return g;
  }
};

/// Classification + distillation loss over a batch, with gradients
/// accumulated into `grads` when given. The label of batch item i is
/// labels[i] (-1 for negatives). Positives take cross-entropy toward their
/// class; negatives take the uniform target over the base classes (or the
/// background class when the classifier carries a background embedding).
/// Distillation is the mean over the batch of the l1 norm between the
/// projected feature and the tracklet's VLM embedding.
inline TrackletLosses tracklet_losses(const TrackletClassifier& clf,
                                      const std::vector<const Tracklet*>& batch,
                                      const std::vector<int>& labels,
                                      double lambda,
                                      TrackletClassifierGrads* grads = nullptr) {
  if (batch.size() != labels.size())
    throw std::invalid_argument("tracklet_losses: batch/label size mismatch");
  TrackletLosses out;
  for (int l : labels) (l >= 0 ? out.n_pos : out.n_neg) += 1;
  const std::size_t n_cls = clf.text_table.size();
  const std::size_t n_logits = n_cls + (clf.use_bg() ? 1 : 0);
  const double tau = clf.tau();
  const double w_pos = out.n_pos ? 1.0 / static_cast<double>(out.n_pos) : 0.0;
  const double w_neg = out.n_neg ? 1.0 / static_cast<double>(out.n_neg) : 0.0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tracklet& t = *batch[i];
    if (lambda > 0.0 && !t.has_vlm_embedding())
      throw std::runtime_error("tracklet_losses: tracklet " + std::to_string(t.id) +
                               " has no VLM embedding but lambda > 0");
    nn::MlpCache cache;
    nn::Vec v = nn::mlp_forward(clf.phi_o, t.roi_feature, &cache);

    nn::Vec logits(n_logits);
    std::vector<nn::Vec> dcos_dv(n_logits);
    std::vector<nn::Vec> dcos_dt(n_logits);
    for (std::size_t c = 0; c < n_logits; ++c) {
      const nn::Vec& tc = c < n_cls ? clf.text_table[c] : clf.bg_embedding;
      double cos = grads ? nn::cosine_grad(v, tc, &dcos_dv[c],
                                           c < n_cls ? nullptr : &dcos_dt[c])
                         : nn::cosine(v, tc);
      logits[c] = cos / tau;
    }
    nn::Vec p = nn::softmax_temp(logits, 1.0);  // logits already carry 1/tau

    // Target distribution and per-tracklet loss.
    nn::Vec q(n_logits, 0.0);
    double weight;
    int label = labels[i];
    if (label >= 0) {
      q[label] = 1.0;
      out.pos += -std::log(std::max(p[label], 1e-300)) * w_pos;
      weight = w_pos;
    } else if (clf.use_bg()) {
      q[n_cls] = 1.0;
      out.neg += -std::log(std::max(p[n_cls], 1e-300)) * w_neg;
      weight = w_neg;
    } else {
      double inv = 1.0 / static_cast<double>(n_cls);
      double acc = 0.0;
      for (std::size_t c = 0; c < n_cls; ++c)
        acc += -inv * std::log(std::max(p[c], 1e-300));
      out.neg += acc * w_neg;
      std::fill(q.begin(), q.end(), inv);
      weight = w_neg;
    }

    // Distillation (mean over batch of the l1 norm).
    nn::Vec dv(v.size(), 0.0);
    if (lambda > 0.0) {
      double acc = 0.0;
      double inv_n = 1.0 / static_cast<double>(batch.size());
      for (std::size_t k = 0; k < v.size(); ++k) {
        double d = v[k] - t.vlm_embedding[k];
        acc += std::fabs(d);
        if (grads)
          dv[k] += lambda * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      }
      out.distill += acc * inv_n;
    }

    if (grads) {
      // d(loss)/d(logit) = weight * (p - q); logit = cos * exp(-log_tau).
      for (std::size_t c = 0; c < n_logits; ++c) {
        double dlogit = weight * (p[c] - q[c]);
        if (dlogit == 0.0) continue;
        grads->log_tau[0] += dlogit * -logits[c];
        double dcos = dlogit / tau;
        for (std::size_t k = 0; k < v.size(); ++k) dv[k] += dcos * dcos_dv[c][k];
        if (c == n_cls)  // trainable background embedding
          for (std::size_t k = 0; k < dv.size(); ++k)
            grads->bg[k] += dcos * dcos_dt[c][k];
      }
      (void)nn::mlp_backward(clf.phi_o, cache, dv, grads->phi_o);
    }
  }
  out.total = out.pos + out.neg + lambda * out.distill;
  return out;
}

/// Open-vocabulary argmax over an arbitrary embedding table (base + novel at
/// inference). Ties break toward the lowest class index.
inline std::pair<int, double> open_vocab_classify(const TrackletClassifier& clf,
                                                  const nn::Vec& f,
                                                  const std::vector<nn::Vec>& table) {
  if (table.empty())
    throw std::invalid_argument("open_vocab_classify: empty embedding table");
  nn::Vec v = nn::mlp_forward(clf.phi_o, f);
  int best = 0;
  double best_cos = nn::cosine(v, table[0]);
  for (std::size_t c = 1; c < table.size(); ++c) {
    double cos = nn::cosine(v, table[c]);
    if (cos > best_cos) {
      best_cos = cos;
      best = static_cast<int>(c);
    }
  }
  return {best, best_cos};
}

/// Softmax scores over an arbitrary table, used as object confidences in the
/// detection pipeline.
inline nn::Vec open_vocab_probs(const TrackletClassifier& clf, const nn::Vec& f,
                                const std::vector<nn::Vec>& table) {
  nn::Vec v = nn::mlp_forward(clf.phi_o, f);
  nn::Vec logits(table.size());
  for (std::size_t c = 0; c < table.size(); ++c)
    logits[c] = nn::cosine(v, table[c]);
  return nn::softmax_temp(logits, clf.tau());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrackletTrainStats {
  std::vector<double> losses;      // per step
  double best_metric = -1.0;
  long best_step = -1;
};

/// Positive-tracklet accuracy of the base-class argmax, the validation
/// criterion for early stopping.
inline double positive_accuracy(const TrackletClassifier& clf,
                                const std::vector<const Tracklet*>& tracklets,
                                const std::vector<int>& labels) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < tracklets.size(); ++i) {
    if (labels[i] < 0) continue;
    ++n;
    nn::Vec p = classify_tracklet(clf, tracklets[i]->roi_feature);
    std::size_t am = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[am]) am = c;
    hit += static_cast<int>(am) == labels[i];
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// Seeded, deterministic training loop over all videos' tracklets. Samples
/// are shuffled globally per epoch. With eval_every > 0 the best model by
/// positive-tracklet accuracy is kept and training stops early after
/// `patience` evaluations without improvement.
inline TrackletClassifier train_tracklet_classifier(
    const std::vector<LoadedVideo>& videos, const Vocabulary& objects,
    const SurrogateEncoder& enc, const Config& cfg,
    TrackletTrainStats* stats = nullptr) {
  double lambda = cfg.get_f("lambda_distill");
  double thr = cfg.get_f("iou_threshold");
  std::vector<const Tracklet*> samples;
  std::vector<int> labels;
  for (const auto& v : videos) {
    LabelAssignment la = assign_tracklet_labels(v.tracklets, v.gt, objects, thr);
    for (std::size_t i = 0; i < v.tracklets.size(); ++i) {
      samples.push_back(&v.tracklets[i]);
      labels.push_back(la.labels[i]);
    }
  }
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l >= 0;
  if (n_pos == 0)
    throw std::runtime_error("train_tracklet_classifier: empty positive set");
  if (lambda > 0.0)
    for (const Tracklet* t : samples)
      if (!t->has_vlm_embedding())
        throw std::runtime_error(
            "train_tracklet_classifier: lambda_distill > 0 but tracklet " +
            std::to_string(t->id) + " has no VLM embedding");

  Rng rng(cfg.get_u("seed") * 0x9e3779b97f4a7c15ull + 1);
  TrackletClassifier clf = make_tracklet_classifier(cfg, objects.base_names(), enc, rng);
  TrackletClassifierGrads grads = TrackletClassifierGrads::zeros_like(clf);

  nn::AdamConfig adam;
  adam.lr = cfg.get_f("lr");
  nn::AdamState state;
  auto refs = [&] {
    std::vector<nn::ParamRef> r{
        nn::param_ref(clf.phi_o.w1, grads.phi_o.w1),
        nn::param_ref(clf.phi_o.b1, grads.phi_o.b1),
        nn::param_ref(clf.phi_o.w2, grads.phi_o.w2),
        nn::param_ref(clf.phi_o.b2, grads.phi_o.b2),
        nn::param_ref(clf.log_tau, grads.log_tau)};
    if (clf.use_bg()) r.push_back(nn::param_ref(clf.bg_embedding, grads.bg));
    return r;
  }();

  long steps = cfg.get_i("steps_tracklet");
  std::size_t batch_size = cfg.get_u("batch_size");
  long eval_every = cfg.get_i("eval_every");
  long patience = cfg.get_i("patience");

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first use

  TrackletClassifier best = clf;
  double best_metric = -1.0;
  long stale = 0;
  for (long step = 0; step < steps; ++step) {
    std::vector<const Tracklet*> batch;
    std::vector<int> batch_labels;
    for (std::size_t k = 0; k < batch_size; ++k) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng.uniform_int(i)]);
        cursor = 0;
      }
      batch.push_back(samples[order[cursor]]);
      batch_labels.push_back(labels[order[cursor]]);
      ++cursor;
    }
    grads.phi_o.zero();
    grads.log_tau[0] = 0.0;
    std::fill(grads.bg.begin(), grads.bg.end(), 0.0);
    TrackletLosses loss = tracklet_losses(clf, batch, batch_labels, lambda, &grads);
    adam_step(refs, adam, state);
    if (stats) stats->losses.push_back(loss.total);

    if (eval_every > 0 && (step + 1) % eval_every == 0) {
      double metric = positive_accuracy(clf, samples, labels);
      if (metric > best_metric) {
        best_metric = metric;
        best = clf;
        stale = 0;
        if (stats) {
          stats->best_metric = metric;
          stats->best_step = step + 1;
        }
      } else if (++stale >= patience) {
        break;
      }
    }
  }
  return eval_every > 0 ? best : clf;
}

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

inline Checkpoint tracklet_classifier_to_checkpoint(const TrackletClassifier& clf,
                                                    const Config& cfg) {
  Checkpoint c;
  c.meta["kind"] = "tracklet";
  c.meta["d_tok"] = cfg.get_i("d_tok");
  c.meta["embed_dim"] = cfg.get_i("embed_dim");
  c.meta["hidden"] = cfg.get_i("hidden");
  c.meta["prompt_len"] = cfg.get_i("prompt_len");
  c.meta["vocab_seed"] = cfg.get_i("vocab_seed");
  c.meta["encoder_seed"] = cfg.get_i("encoder_seed");
  c.meta["template_seed"] = cfg.get_i("template_seed");
  c.meta["base_objects"] = clf.class_names;
  c.put_mlp("phi_o", clf.phi_o);
  c.put("log_tau", clf.log_tau);
  if (clf.use_bg()) c.put("bg_embedding", clf.bg_embedding);
  return c;
}

inline TrackletClassifier tracklet_classifier_from_checkpoint(const Checkpoint& c) {
  if (c.meta.value("kind", "") != "tracklet")
    throw std::runtime_error("not a tracklet classifier checkpoint");
  TrackletClassifier clf;
  clf.phi_o = c.get_mlp("phi_o");
  clf.log_tau = c.get_vec("log_tau");
  clf.class_names = c.meta.at("base_objects").get<std::vector<std::string>>();
  SurrogateEncoder enc = SurrogateEncoder::make(
      c.meta.at("d_tok").get<std::size_t>(), c.meta.at("embed_dim").get<std::size_t>(),
      c.meta.at("encoder_seed").get<std::uint64_t>());
  auto template_ctx = fixed_template_context(
      c.meta.at("prompt_len").get<std::size_t>(), c.meta.at("d_tok").get<std::size_t>(),
      c.meta.at("template_seed").get<std::uint64_t>());
  clf.text_table = build_object_table(enc, template_ctx, clf.class_names,
                                      c.meta.at("vocab_seed").get<std::uint64_t>());
  if (c.has("bg_embedding")) clf.bg_embedding = c.get_vec("bg_embedding");
  return clf;
}

}  // namespace ovrd
