#include "ovrd/text_encoder.hpp"

#include <gtest/gtest.h>

#include "ovrd/nnkit.hpp"
#include "ovrd/rng.hpp"

namespace ovrd {
namespace {

constexpr std::size_t kDTok = 128;
constexpr std::size_t kD = 64;

TEST(ClassToken, DeterministicInNameAndSeed) {
  auto a = class_token("dog", 11, kDTok);
  auto b = class_token("dog", 11, kDTok);
  EXPECT_EQ(a.vec, b.vec);
  auto c = class_token("dog", 12, kDTok);
  EXPECT_NE(a.vec, c.vec);
}

TEST(ClassToken, UnitNorm) {
  auto t = class_token("zebra", 11, kDTok);
  EXPECT_NEAR(nn::norm(t.vec), 1.0, 1e-12);
}

TEST(ClassToken, EmptyNameThrows) {
  EXPECT_THROW((void)class_token("", 11, kDTok), std::invalid_argument);
}

TEST(ClassToken, DistinctNamesNearlyOrthogonal) {
  const char* names[] = {"airplane", "bicycle", "bird",   "bus",    "car",
                         "dog",      "cat",     "turtle", "whale",  "zebra",
                         "ball",     "frisbee", "sofa",   "person", "towards",
                         "away",     "chase",   "follow", "watch",  "ride"};
  std::vector<nn::Vec> toks;
  for (const char* n : names) toks.push_back(class_token(n, 11, kDTok).vec);
  for (std::size_t i = 0; i < toks.size(); ++i)
    for (std::size_t j = i + 1; j < toks.size(); ++j)
      EXPECT_LT(std::fabs(nn::cosine(toks[i], toks[j])), 0.3)
          << names[i] << " vs " << names[j];
}

TEST(SurrogateEncoder, FrozenAndSeedDeterministic) {
  auto e1 = SurrogateEncoder::make(kDTok, kD, 5);
  auto e2 = SurrogateEncoder::make(kDTok, kD, 5);
  EXPECT_EQ(e1.proj_ctx.a, e2.proj_ctx.a);
  EXPECT_EQ(e1.proj_tok.a, e2.proj_tok.a);
  EXPECT_EQ(e1.bias, e2.bias);
  auto e3 = SurrogateEncoder::make(kDTok, kD, 6);
  EXPECT_NE(e1.proj_ctx.a, e3.proj_ctx.a);
}

TEST(SurrogateEncoder, UnitNormOutputs) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    auto ctx = PromptContext::seeded(10, kDTok, rng);
    auto tok = class_token("name" + std::to_string(it), 11, kDTok);
    auto out = enc.encode(ctx, tok.vec);
    EXPECT_EQ(out.size(), kD);
    EXPECT_NEAR(nn::norm(out), 1.0, 1e-12);
  }
}

TEST(SurrogateEncoder, ZeroInputFallsBackToBiasDirection) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  PromptContext ctx;
  ctx.tokens = nn::Mat(10, kDTok);  // all zeros
  nn::Vec tok(kDTok, 0.0);
  auto out = enc.encode(ctx, tok);
  nn::Vec bias_dir(kD);
  for (std::size_t i = 0; i < kD; ++i) bias_dir[i] = std::tanh(enc.bias[i]);
  EXPECT_GT(nn::cosine(out, bias_dir), 1.0 - 1e-9);
}

TEST(SurrogateEncoder, DimensionMismatchThrows) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  Rng rng(2);
  auto ctx = PromptContext::seeded(10, kDTok, rng);
  EXPECT_THROW((void)enc.encode(ctx, nn::Vec(kDTok + 1, 0.0)),
               std::invalid_argument);
  auto bad_ctx = PromptContext::seeded(10, kDTok / 2, rng);
  EXPECT_THROW((void)enc.encode(bad_ctx, nn::Vec(kDTok, 0.0)),
               std::invalid_argument);
}

TEST(SurrogateEncoder, ContextGradientMatchesFiniteDifferences) {
  // Loss: dot(encode(ctx, token), target), gradient w.r.t. all context rows.
  auto enc = SurrogateEncoder::make(16, 12, 5);
  Rng rng(4);
  for (int seed = 0; seed < 20; ++seed) {
    auto ctx = PromptContext::seeded(3, 16, rng);
    auto tok = class_token("t" + std::to_string(seed), 11, 16);
    nn::Vec target(12);
    for (auto& v : target) v = rng.gaussian();

    SurrogateEncoder::Cache cache;
    (void)enc.encode(ctx, tok.vec, &cache);
    nn::Vec dmean = enc.backward_context_mean(cache, target);
    nn::Mat gctx(3, 16);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        gctx(r, c) = dmean[c] / static_cast<double>(cache.n_ctx);

    auto loss = [&] {
      auto out = enc.encode(ctx, tok.vec);
      return nn::dot(out, target);
    };
    std::vector<nn::ParamRef> refs{nn::param_ref(ctx.tokens, gctx)};
    EXPECT_LT(nn::finite_diff_check(loss, refs), 1e-4);
  }
}

TEST(PromptBank, PredicateEmbeddingConcatenatesRoles) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  Rng rng(6);
  auto bank = PromptBank::seeded(6, 10, kDTok, rng);
  auto tok = class_token("towards", 11, kDTok);
  auto t = predicate_text_embedding(enc, bank, 2, tok.vec);
  EXPECT_EQ(t.size(), 2 * kD);
  // Identical subject and object contexts -> identical halves.
  bank.groups[3].obj = bank.groups[3].subj;
  auto t2 = predicate_text_embedding(enc, bank, 3, tok.vec);
  for (std::size_t i = 0; i < kD; ++i) EXPECT_DOUBLE_EQ(t2[i], t2[kD + i]);
}

TEST(PromptBank, ChangingClassTokenOnlyAffectsThatClass) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  Rng rng(6);
  auto bank = PromptBank::seeded(6, 10, kDTok, rng);
  auto tok_a = class_token("chase", 11, kDTok);
  auto tok_b = class_token("follow", 11, kDTok);
  auto ta1 = predicate_text_embedding(enc, bank, 0, tok_a.vec);
  auto tb1 = predicate_text_embedding(enc, bank, 0, tok_b.vec);
  // Recomputing with a different class leaves the other class' embedding
  // untouched (contexts are shared, tokens are per class).
  auto ta2 = predicate_text_embedding(enc, bank, 0, tok_a.vec);
  EXPECT_EQ(ta1, ta2);
  EXPECT_NE(ta1, tb1);
}

TEST(PromptBank, BadGroupThrows) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  Rng rng(6);
  auto bank = PromptBank::seeded(6, 10, kDTok, rng);
  auto tok = class_token("x", 11, kDTok);
  EXPECT_THROW((void)predicate_text_embedding(enc, bank, 6, tok.vec),
               std::invalid_argument);
  EXPECT_THROW((void)predicate_text_embedding(enc, bank, -1, tok.vec),
               std::invalid_argument);
}

TEST(FixedTemplate, DeterministicAndDistinctFromBankContexts) {
  auto a = fixed_template_context(10, kDTok, 13);
  auto b = fixed_template_context(10, kDTok, 13);
  EXPECT_EQ(a.tokens.a, b.tokens.a);
  auto c = fixed_template_context(10, kDTok, 14);
  EXPECT_NE(a.tokens.a, c.tokens.a);
}

TEST(ObjectTextEmbedding, MatchesEncode) {
  auto enc = SurrogateEncoder::make(kDTok, kD, 5);
  auto ctx = fixed_template_context(10, kDTok, 13);
  auto tok = class_token("dog", 11, kDTok);
  EXPECT_EQ(object_text_embedding(enc, ctx, tok.vec), enc.encode(ctx, tok.vec));
}

}  // namespace
}  // namespace ovrd
