#include <cmath>

#include <gtest/gtest.h>

#include "partonomy/cooccurrence.hpp"
#include "partonomy/embeddings.hpp"
#include "partonomy/errors.hpp"
#include "support/synthetic.hpp"

using namespace partonomy;
using namespace partonomy::genpipe;

namespace {

// Sets over a 12-part vocabulary where "anchor" and "partner" always appear together.
std::vector<PartSet> planted_sets(Rng& rng, std::size_t n) {
  std::vector<std::string> noise;
  for (int i = 0; i < 10; ++i) {
    noise.push_back("n" + std::to_string(i));
  }
  std::vector<PartSet> sets;
  for (std::size_t s = 0; s < n; ++s) {
    PartSet set;
    for (const auto& p : noise) {
      if (rng.uniform01() < 0.3) {
        set.insert(p);
      }
    }
    if (rng.uniform01() < 0.5) {
      set.insert("anchor");
      set.insert("partner");
    }
    if (set.empty()) {
      set.insert(noise[rng.uniform_index(noise.size())]);
    }
    sets.push_back(set);
  }
  return sets;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(Cooccurrence, TooFewPartsIsDegenerate) {
  EXPECT_THROW(train_cooccurrence({{"a"}, {"a"}}, {}), DegenerateData);
  EXPECT_THROW(train_cooccurrence({}, {}), DegenerateData);
}

TEST(Cooccurrence, LossIsNonIncreasingEveryStep) {
  Rng rng(5);
  TrainingTrace trace;
  CooccurrenceConfig cfg;
  cfg.max_iters = 300;
  const auto model = train_cooccurrence(planted_sets(rng, 120), cfg, &trace);
  ASSERT_EQ(trace.losses.size(), model.size());
  for (const auto& losses : trace.losses) {
    for (std::size_t i = 1; i < losses.size(); ++i) {
      EXPECT_LE(losses[i], losses[i - 1] + 1e-12);
    }
  }
}

TEST(Cooccurrence, PlantedPartnerRanksFirst) {
  Rng rng(9);
  const auto model = train_cooccurrence(planted_sets(rng, 200), {});
  const auto ranked = predict_likely_parts(model, {"anchor", "n1"}, 3);
  ASSERT_FALSE(ranked.empty());
  EXPECT_EQ(ranked.front().label, "partner");
  for (const auto& r : ranked) {
    EXPECT_NE(r.label, "anchor");
    EXPECT_NE(r.label, "n1");
  }
}

TEST(Cooccurrence, EveryPartInAllSetsIsDegenerate) {
  const auto model = train_cooccurrence({{"a", "b"}, {"a", "c"}, {"a", "b", "c"}}, {});
  EXPECT_EQ(model.degenerate(), (std::vector<std::string>{"a"}));
  const auto idx = *model.index_of("a");
  for (double w : model.weights(idx)) {
    EXPECT_EQ(w, 0.0);
  }
}

TEST(Cooccurrence, ScoreIsSigmoidOfActiveWeightsPlusBias) {
  CooccurrenceModel model({"a", "b", "c"}, {{0, 0.5, -1, 0.25}, {1, 0, 2, -0.5}, {0, 0, 0, 0}});
  const std::vector<std::size_t> active{0, 2};
  EXPECT_DOUBLE_EQ(model.score(1, active), sigmoid(1 + 2 - 0.5));
  EXPECT_DOUBLE_EQ(model.score(0, {}), sigmoid(0.25));
}

TEST(Cooccurrence, PredictBreaksTiesLexicographically) {
  CooccurrenceModel model({"a", "b", "c", "d"},
                          {std::vector<double>(5, 0.0), std::vector<double>(5, 0.0),
                           std::vector<double>(5, 0.0), std::vector<double>(5, 0.0)});
  const auto ranked = predict_likely_parts(model, {"c"}, 10);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].label, "a");
  EXPECT_EQ(ranked[1].label, "b");
  EXPECT_EQ(ranked[2].label, "d");
  EXPECT_EQ(predict_likely_parts(model, {"c"}, 2).size(), 2u);
  EXPECT_EQ(predict_likely_parts(model, {"c"}, 10, {"a"}).front().label, "b");
}

TEST(Cooccurrence, UnknownCurrentPartsAreIgnored) {
  CooccurrenceModel model({"a", "b"}, {{0, 0, 0}, {0, 0, 0}});
  EXPECT_EQ(predict_likely_parts(model, {"zzz"}, 5).size(), 2u);
}

TEST(Cooccurrence, JsonRoundTripAndValidation) {
  Rng rng(2);
  const auto model = train_cooccurrence(planted_sets(rng, 60), {});
  const auto back = cooccurrence_from_json(cooccurrence_to_json(model));
  EXPECT_EQ(back.vocabulary(), model.vocabulary());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto a = model.weights(i);
    const auto b = back.weights(i);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  EXPECT_THROW(CooccurrenceModel({"b", "a"}, {{0, 0, 0}, {0, 0, 0}}), SchemaViolation);
  EXPECT_THROW(CooccurrenceModel({"a", "b"}, {{0, 0}, {0, 0, 0}}), SchemaViolation);
}

TEST(Cooccurrence, TrainingIsDeterministic) {
  Rng r1(4);
  Rng r2(4);
  const auto a = train_cooccurrence(planted_sets(r1, 80), {});
  const auto b = train_cooccurrence(planted_sets(r2, 80), {});
  EXPECT_EQ(cooccurrence_to_json(a), cooccurrence_to_json(b));
}

// ---------------------------------------------------------------------------

TEST(Embeddings, CosineAndDistractorOrder) {
  EmbeddingTable table({{"car", {1, 0}}, {"truck", {2, 0.2}}, {"bus", {1, 0.5}},
                        {"dog", {0, 1}}, {"cat", {-1, 1}}, {"van", {1, 0.5}}});
  EXPECT_NEAR(table.cosine("car", "dog"), 0.0, 1e-15);
  EXPECT_NEAR(table.cosine("car", "truck"), 2.0 / std::sqrt(4.04), 1e-15);
  // bus and van tie on similarity; the lexicographic order decides.
  EXPECT_EQ(object_distractors("car", table, 4),
            (std::vector<std::string>{"truck", "bus", "van", "dog"}));
}

TEST(Embeddings, MissingLabelsThrow) {
  EmbeddingTable table({{"a", {1, 0}}, {"b", {0, 1}}});
  EXPECT_THROW(object_distractors("zebra", table, 1), MissingEmbedding);
  EXPECT_THROW(object_distractors("a", table, 4), MissingEmbedding);
  EXPECT_THROW(table.vector("zebra"), MissingEmbedding);
}

TEST(Embeddings, TableValidation) {
  EXPECT_THROW(EmbeddingTable({{"a", {1, 0}}, {"b", {1}}}), SchemaViolation);
  EXPECT_THROW(EmbeddingTable({{"a", {0, 0}}}), SchemaViolation);
  EXPECT_THROW(EmbeddingTable({{"a", {NAN, 1}}}), SchemaViolation);
}

TEST(Embeddings, LoadsJsonlAndReportsBadLines) {
  const auto table = load_embeddings(testkit::data_dir() / "fixture_embeddings.jsonl");
  EXPECT_EQ(table.size(), 7u);
  EXPECT_EQ(table.dimension(), 4u);
  EXPECT_EQ(object_distractors("car", table, 4).front(), "truck");

  testkit::TempDir dir("emb");
  testkit::write_text(dir / "dup.jsonl", "{\"label\":\"A\",\"vector\":[1]}\n{\"label\":\"a\",\"vector\":[2]}\n");
  EXPECT_THROW(load_embeddings(dir / "dup.jsonl"), SchemaViolation);
  testkit::write_text(dir / "bad.jsonl", "{\"label\":\"a\",\"vector\":[1]}\n{\"label\":\n");
  try {
    load_embeddings(dir / "bad.jsonl");
    FAIL() << "expected MalformedFile";
  } catch (const MalformedFile& e) {
    EXPECT_GE(e.offset(), 28u);
  }
}
