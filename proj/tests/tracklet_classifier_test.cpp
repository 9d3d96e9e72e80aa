#include "ovrd/tracklet_classifier.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

namespace ovrd {
namespace {

namespace fs = std::filesystem;

Config small_cfg() {
  Config cfg = Config::defaults();
  cfg.set("d_tok", "32");
  cfg.set("embed_dim", "32");
  cfg.set("hidden", "48");
  cfg.set("prompt_len", "4");
  cfg.set("tau_init", "0.1");
  cfg.set("lr", "2e-3");
  cfg.set("steps_tracklet", "400");
  cfg.set("batch_size", "16");
  return cfg;
}

/// Classifier with a hand-set table and an identity-like projection so the
/// projected embedding equals the first `dim` feature coordinates.
TrackletClassifier identity_classifier(std::size_t dim,
                                       std::vector<nn::Vec> table, double tau) {
  TrackletClassifier clf;
  clf.phi_o = nn::MlpParams::zeros(dim, dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    clf.phi_o.w1(i, i) = 1.0;
    clf.phi_o.w2(i, i) = 1.0;
  }
  clf.log_tau = {std::log(tau)};
  clf.text_table = std::move(table);
  for (std::size_t c = 0; c < clf.text_table.size(); ++c)
    clf.class_names.push_back("c" + std::to_string(c));
  return clf;
}

Tracklet gt_tracklet(std::int64_t id, double x = 0.0) {
  Tracklet t;
  t.id = id;
  t.video = "v";
  t.start_frame = 0;
  t.boxes.assign(6, {x, 0, x + 10, 10});
  return t;
}

TEST(ClassifyTracklet, IdenticalEmbeddingsGiveUniform) {
  nn::Vec t{1.0, 0.0, 0.0, 0.0};
  auto clf = identity_classifier(4, {t, t, t}, 0.5);
  nn::Vec p = classify_tracklet(clf, {0.3, 0.4, 0.0, 0.1});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(ClassifyTracklet, AlignedEmbeddingWinsAtSmallTau) {
  auto clf = identity_classifier(
      4, {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}, 0.05);
  nn::Vec p = classify_tracklet(clf, {1.0, 0.0, 0.0, 0.0});
  EXPECT_GT(p[0], 0.99);
}

TEST(ClassifyTracklet, SumsToOne) {
  Rng rng(3);
  auto clf = identity_classifier(
      8, {{1, 0, 0, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0, 0, 0},
          {0, 0, 1, 0, 0, 0, 0, 0}, {0, 0, 0, 1, 0, 0, 0, 0}}, 0.2);
  for (int it = 0; it < 50; ++it) {
    nn::Vec f(8);
    for (auto& v : f) v = rng.uniform(0.0, 1.0);
    nn::Vec p = classify_tracklet(clf, f);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(AssignLabels, ExactMatchIsPositive) {
  Vocabulary objects{{{"dog", false}, {"bread", true}}};
  std::vector<Tracklet> ts{gt_tracklet(1)};
  VideoGroundTruth gt;
  gt.tracklet_cls[1] = 0;
  auto la = assign_tracklet_labels(ts, gt, objects, 0.5);
  EXPECT_EQ(la.labels, std::vector<int>{0});
}

TEST(AssignLabels, NovelOverlapStaysNegative) {
  Vocabulary objects{{{"dog", false}, {"bread", true}}};
  std::vector<Tracklet> ts{gt_tracklet(1)};
  VideoGroundTruth gt;
  gt.tracklet_cls[1] = 1;  // novel class
  auto la = assign_tracklet_labels(ts, gt, objects, 0.5);
  EXPECT_EQ(la.labels, std::vector<int>{-1});
}

TEST(AssignLabels, NoOverlapIsNegative) {
  Vocabulary objects{{{"dog", false}}};
  std::vector<Tracklet> ts{gt_tracklet(1), gt_tracklet(2, 500.0)};
  VideoGroundTruth gt;
  gt.tracklet_cls[1] = 0;
  auto la = assign_tracklet_labels(ts, gt, objects, 0.5);
  EXPECT_EQ(la.labels[0], 0);
  EXPECT_EQ(la.labels[1], -1);
}

TEST(AssignLabels, BadThresholdThrows) {
  Vocabulary objects{{{"dog", false}}};
  std::vector<Tracklet> ts;
  VideoGroundTruth gt;
  EXPECT_THROW((void)assign_tracklet_labels(ts, gt, objects, 0.0),
               std::invalid_argument);
  EXPECT_THROW((void)assign_tracklet_labels(ts, gt, objects, 1.0),
               std::invalid_argument);
}

TEST(TrackletLosses, UniformNegativeLossIsLogC) {
  // 25 base classes with identical embeddings force the prediction to be
  // uniform, which is exactly the minimizer of the negative loss: ln 25.
  nn::Vec t(8, 0.0);
  t[0] = 1.0;
  std::vector<nn::Vec> table(25, t);
  auto clf = identity_classifier(8, std::move(table), 0.5);
  Tracklet tr = gt_tracklet(1);
  tr.roi_feature = {0.2, 0.5, 0.1, 0.0, 0.3, 0.0, 0.0, 0.4};
  auto losses = tracklet_losses(clf, {&tr}, {-1}, 0.0);
  EXPECT_NEAR(losses.neg, std::log(25.0), 1e-12);
  EXPECT_EQ(losses.n_neg, 1u);
}

TEST(TrackletLosses, UniformMinimizesNegativeLoss) {
  // Uniform prediction attains the minimum ln C; any perturbed distribution
  // scores strictly higher under the uniform-target loss.
  const std::size_t c = 6;
  Rng rng(5);
  auto loss_of = [&](const nn::Vec& p) {
    double acc = 0.0;
    for (double v : p) acc += -(1.0 / c) * std::log(v);
    return acc;
  };
  nn::Vec uniform(c, 1.0 / c);
  double base = loss_of(uniform);
  EXPECT_NEAR(base, std::log(static_cast<double>(c)), 1e-12);
  for (int it = 0; it < 200; ++it) {
    nn::Vec p(c);
    double z = 0.0;
    for (auto& v : p) {
      v = std::exp(rng.gaussian());
      z += v;
    }
    for (auto& v : p) v /= z;
    double dev = 0.0;
    for (double v : p) dev = std::max(dev, std::fabs(v - 1.0 / c));
    if (dev < 1e-9) continue;
    EXPECT_GT(loss_of(p), base);
  }
}

TEST(TrackletLosses, DistillZeroWhenAligned) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  Tracklet tr = gt_tracklet(1);
  tr.roi_feature = {0.4, 0.3, 0.2, 0.1};
  tr.vlm_embedding = {0.4, 0.3, 0.2, 0.1};  // equals the projected feature
  auto losses = tracklet_losses(clf, {&tr}, {0}, 5.0);
  EXPECT_NEAR(losses.distill, 0.0, 1e-12);
}

TEST(TrackletLosses, LambdaScalesDistillInTotal) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  Tracklet tr = gt_tracklet(1);
  tr.roi_feature = {0.4, 0.3, 0.2, 0.1};
  tr.vlm_embedding = {0.0, 0.0, 0.0, 0.0};
  auto l1 = tracklet_losses(clf, {&tr}, {0}, 1.0);
  auto l5 = tracklet_losses(clf, {&tr}, {0}, 5.0);
  EXPECT_NEAR(l5.total - l5.pos, 5.0 * (l1.total - l1.pos), 1e-12);
  EXPECT_NEAR(l1.distill, l5.distill, 1e-12);  // the raw term is unweighted
}

TEST(TrackletLosses, MissingEmbeddingWithLambdaThrows) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  Tracklet tr = gt_tracklet(1);
  tr.roi_feature = {0.4, 0.3, 0.2, 0.1};
  EXPECT_THROW((void)tracklet_losses(clf, {&tr}, {0}, 5.0), std::runtime_error);
  EXPECT_NO_THROW((void)tracklet_losses(clf, {&tr}, {0}, 0.0));
}

TEST(TrackletLosses, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int seed = 0; seed < 20; ++seed) {
    const std::size_t in = 6, hidden = 5, d = 4;
    TrackletClassifier clf;
    std::vector<Tracklet> batch(3);
    std::vector<const Tracklet*> ptrs;
    std::vector<int> labels{1, -1, 2};
    // Central differences are only valid away from the ReLU and l1 kinks;
    // resample until every pre-activation and every distill residual has
    // clearance above the step size.
    for (bool smooth = false; !smooth;) {
      clf = TrackletClassifier{};
      clf.phi_o = nn::MlpParams::seeded(in, hidden, d, rng);
      clf.log_tau = {std::log(rng.uniform(0.2, 1.5))};
      for (int c = 0; c < 3; ++c) {
        nn::Vec t(d);
        for (auto& v : t) v = rng.gaussian();
        double n = nn::norm(t);
        for (auto& v : t) v /= n;
        clf.text_table.push_back(t);
        clf.class_names.push_back("c" + std::to_string(c));
      }
      clf.bg_embedding.resize(d);
      for (auto& v : clf.bg_embedding) v = rng.gaussian() * 0.3;
      ptrs.clear();
      for (auto& t : batch) {
        t.roi_feature.resize(in);
        for (auto& v : t.roi_feature) v = rng.gaussian();
        t.vlm_embedding.resize(d);
        for (auto& v : t.vlm_embedding) v = rng.gaussian();
        ptrs.push_back(&t);
      }
      smooth = true;
      for (const auto& t : batch) {
        nn::MlpCache cache;
        nn::Vec v = nn::mlp_forward(clf.phi_o, t.roi_feature, &cache);
        for (double z : cache.z1) smooth &= std::fabs(z) > 1e-3;
        for (std::size_t k = 0; k < v.size(); ++k)
          smooth &= std::fabs(v[k] - t.vlm_embedding[k]) > 1e-3;
        smooth &= nn::norm(v) > 0.1;  // cosine curvature blows up near 0
      }
    }
    double lambda = 0.7;

    auto grads = TrackletClassifierGrads::zeros_like(clf);
    (void)tracklet_losses(clf, ptrs, labels, lambda, &grads);
    auto loss = [&] {
      return tracklet_losses(clf, ptrs, labels, lambda).total;
    };
    std::vector<nn::ParamRef> refs{
        nn::param_ref(clf.phi_o.w1, grads.phi_o.w1),
        nn::param_ref(clf.phi_o.b1, grads.phi_o.b1),
        nn::param_ref(clf.phi_o.w2, grads.phi_o.w2),
        nn::param_ref(clf.phi_o.b2, grads.phi_o.b2),
        nn::param_ref(clf.log_tau, grads.log_tau),
        nn::param_ref(clf.bg_embedding, grads.bg)};
    EXPECT_LT(nn::finite_diff_check(loss, refs), 1e-4) << "seed " << seed;
  }
}

TEST(OpenVocabClassify, SingleClassTable) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  auto [cls, score] = open_vocab_classify(clf, {0.5, 0.1, 0.0, 0.0},
                                          {{0.0, 1.0, 0.0, 0.0}});
  EXPECT_EQ(cls, 0);
}

TEST(OpenVocabClassify, ScaleInvariantAndTieBreaksLow) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  std::vector<nn::Vec> table{{0, 1, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}};
  nn::Vec f{0.5, 0.25, 0.0, 0.0};
  auto [c1, s1] = open_vocab_classify(clf, f, table);
  nn::Vec f2(f);
  for (auto& v : f2) v *= 2.0;
  auto [c2, s2] = open_vocab_classify(clf, f2, table);
  EXPECT_EQ(c1, c2);
  EXPECT_NEAR(s1, s2, 1e-12);
  EXPECT_EQ(c1, 1);  // classes 1 and 2 tie; lowest index wins
}

TEST(OpenVocabClassify, EmptyTableThrows) {
  auto clf = identity_classifier(4, {{1, 0, 0, 0}}, 0.5);
  EXPECT_THROW((void)open_vocab_classify(clf, {1, 0, 0, 0}, {}),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Planted-data training
// ---------------------------------------------------------------------------

struct PlantedData {
  std::vector<LoadedVideo> videos;
  Vocabulary objects;
  SurrogateEncoder enc;
};

/// Features are class prototypes plus small noise; VLM embeddings are the
/// encoded class tokens plus noise. Novel-class tracklets appear unlabeled.
PlantedData planted_dataset(const Config& cfg, std::uint64_t seed,
                            double sigma = 0.03) {
  PlantedData data;
  data.objects.items = {{"pa", false}, {"pb", false}, {"pc", false},
                        {"pd", false}, {"nx", true}};
  data.enc = SurrogateEncoder::make(cfg.get_u("d_tok"), cfg.get_u("embed_dim"),
                                    cfg.get_u("encoder_seed"));
  auto template_ctx = fixed_template_context(
      cfg.get_u("prompt_len"), cfg.get_u("d_tok"), cfg.get_u("template_seed"));
  auto table = build_object_table(data.enc, template_ctx,
                                  data.objects.all_names(), cfg.get_u("vocab_seed"));
  Rng rng(seed);
  std::vector<nn::Vec> protos;
  for (std::size_t c = 0; c < data.objects.size(); ++c) {
    nn::Vec p(kRoiFeatureDim);
    for (auto& v : p) v = rng.gaussian();
    double n = nn::norm(p);
    for (auto& v : p) v /= n;
    protos.push_back(std::move(p));
  }
  for (int vid = 0; vid < 4; ++vid) {
    LoadedVideo v;
    v.id = "v" + std::to_string(vid);
    for (int i = 0; i < 24; ++i) {
      int cls = static_cast<int>(rng.uniform_int(data.objects.size()));
      Tracklet t = gt_tracklet(i, 20.0 * i);
      t.video = v.id;
      t.roi_feature = protos[cls];
      for (auto& x : t.roi_feature) x += sigma * rng.gaussian();
      t.vlm_embedding = table[cls];
      for (auto& x : t.vlm_embedding) x += sigma * rng.gaussian();
      if (!data.objects.is_novel(cls)) {
        v.gt.tracklet_cls[t.id] = cls;
      }
      v.tracklets.push_back(std::move(t));
    }
    v.gt.video = v.id;
    data.videos.push_back(std::move(v));
  }
  return data;
}

TEST(TrainTrackletClassifier, PlantedDataReachesHighAccuracy) {
  Config cfg = small_cfg();
  auto data = planted_dataset(cfg, 91);
  auto clf = train_tracklet_classifier(data.videos, data.objects, data.enc, cfg);
  std::vector<const Tracklet*> samples;
  std::vector<int> labels;
  for (const auto& v : data.videos) {
    auto la = assign_tracklet_labels(v.tracklets, v.gt, data.objects, 0.5);
    for (std::size_t i = 0; i < v.tracklets.size(); ++i) {
      samples.push_back(&v.tracklets[i]);
      labels.push_back(la.labels[i]);
    }
  }
  EXPECT_GE(positive_accuracy(clf, samples, labels), 0.95);
}

TEST(TrainTrackletClassifier, RunsWithoutDistillation) {
  Config cfg = small_cfg();
  cfg.set("lambda_distill", "0");
  cfg.set("steps_tracklet", "30");
  auto data = planted_dataset(cfg, 92);
  for (auto& v : data.videos)
    for (auto& t : v.tracklets) t.vlm_embedding.clear();  // no v_i at all
  EXPECT_NO_THROW(
      (void)train_tracklet_classifier(data.videos, data.objects, data.enc, cfg));
}

TEST(TrainTrackletClassifier, EmptyPositiveSetThrows) {
  Config cfg = small_cfg();
  auto data = planted_dataset(cfg, 93);
  for (auto& v : data.videos) v.gt.tracklet_cls.clear();
  EXPECT_THROW(
      (void)train_tracklet_classifier(data.videos, data.objects, data.enc, cfg),
      std::runtime_error);
}

TEST(TrainTrackletClassifier, SameSeedGivesByteIdenticalCheckpoints) {
  Config cfg = small_cfg();
  cfg.set("steps_tracklet", "60");
  auto dir = fs::temp_directory_path() / "ovrd_clf_det";
  fs::create_directories(dir);
  auto run = [&](const fs::path& out) {
    auto data = planted_dataset(cfg, 94);
    auto clf = train_tracklet_classifier(data.videos, data.objects, data.enc, cfg);
    tracklet_classifier_to_checkpoint(clf, cfg).save(out);
  };
  run(dir / "a.ovck");
  run(dir / "b.ovck");
  std::ifstream fa(dir / "a.ovck", std::ios::binary), fb(dir / "b.ovck", std::ios::binary);
  std::string a((std::istreambuf_iterator<char>(fa)), {});
  std::string b((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.empty());
  fs::remove_all(dir);
}

TEST(TrainTrackletClassifier, LossTrendsDownOnPlantedData) {
  Config cfg = small_cfg();
  cfg.set("steps_tracklet", "500");
  cfg.set("lr", "5e-4");  // descent regime: larger rates bounce near the optimum
  auto data = planted_dataset(cfg, 95);
  TrackletTrainStats stats;
  (void)train_tracklet_classifier(data.videos, data.objects, data.enc, cfg, &stats);
  ASSERT_GE(stats.losses.size(), 500u);
  // Running mean over 50-step windows, non-increasing across the first 10
  // evaluation points.
  std::vector<double> window_means;
  for (int w = 0; w < 10; ++w) {
    double acc = 0.0;
    for (int i = 0; i < 50; ++i) acc += stats.losses[w * 50 + i];
    window_means.push_back(acc / 50.0);
  }
  for (int w = 1; w < 10; ++w)
    EXPECT_LE(window_means[w], window_means[w - 1] + 1e-9) << "window " << w;
}

TEST(Checkpointing, RoundTripPreservesBehaviour) {
  Config cfg = small_cfg();
  cfg.set("steps_tracklet", "40");
  auto data = planted_dataset(cfg, 96);
  auto clf = train_tracklet_classifier(data.videos, data.objects, data.enc, cfg);
  auto dir = fs::temp_directory_path() / "ovrd_clf_rt";
  fs::create_directories(dir);
  tracklet_classifier_to_checkpoint(clf, cfg).save(dir / "c.ovck");
  auto back = tracklet_classifier_from_checkpoint(Checkpoint::load(dir / "c.ovck"));
  EXPECT_EQ(back.class_names, clf.class_names);
  // Same argmax on a few features (values round-trip through float32).
  for (int i = 0; i < 5; ++i) {
    const auto& f = data.videos[0].tracklets[i].roi_feature;
    nn::Vec p1 = classify_tracklet(clf, f);
    nn::Vec p2 = classify_tracklet(back, f);
    std::size_t a1 = std::max_element(p1.begin(), p1.end()) - p1.begin();
    std::size_t a2 = std::max_element(p2.begin(), p2.end()) - p2.begin();
    EXPECT_EQ(a1, a2);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace ovrd
