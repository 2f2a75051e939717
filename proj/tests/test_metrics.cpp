#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "partonomy/errors.hpp"
#include "partonomy/genpipe.hpp"
#include "partonomy/metrics.hpp"
#include "support/synthetic.hpp"

using namespace partonomy;
using namespace partonomy::metrics;
using maskio::BinaryMask;

namespace {

// Flat and two-level averages with plain long-double loops.
long double flat_oracle(const std::map<std::string, std::vector<double>>& g) {
  long double sum = 0;
  std::size_t n = 0;
  for (const auto& [k, v] : g) {
    for (double x : v) {
      sum += x;
      ++n;
    }
  }
  return sum / static_cast<long double>(n);
}

long double two_level_oracle(const std::map<std::string, std::vector<double>>& g) {
  long double outer = 0;
  for (const auto& [k, v] : g) {
    long double inner = 0;
    for (double x : v) {
      inner += x;
    }
    outer += inner / static_cast<long double>(v.size());
  }
  return outer / static_cast<long double>(g.size());
}

std::vector<std::vector<double>> logprobs_preferring(std::size_t choice) {
  std::vector<std::vector<double>> out(genpipe::kChoiceCount, std::vector<double>{-5.0, -5.0});
  out[choice] = {-0.1, -0.2};
  return out;
}

ResponseRecord oracle_response(const QuestionRecord& q) {
  ResponseRecord r;
  r.question_id = q.id;
  r.part_logprobs = logprobs_preferring(q.correct_part_index);
  if (q.correct_object_index) {
    r.object_logprobs = logprobs_preferring(*q.correct_object_index);
  }
  r.masks = q.gt_masks;
  return r;
}

std::vector<QuestionRecord> synthetic_questions(std::size_t images) {
  testkit::SyntheticConfig cfg;
  cfg.images = images;
  const auto world = testkit::make_world(cfg);
  const auto model = testkit::train_model(world);
  const genpipe::EmbeddingTable table(world.embeddings);
  return genpipe::generate_questions(world.dataset, world.ontology, model, &table, {});
}

}  // namespace

TEST(CompensatedSum, RecoversSmallTermsNextToLargeOnes) {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 10; ++i) {
    s.add(1.0);
  }
  s.add(-1e16);
  EXPECT_EQ(s.value(), 10.0);
}

TEST(SelectChoice, MeanVersusSumNll) {
  // choice 0: one token at -1.0 (mean 1.0, sum 1.0)
  // choice 1: four tokens at -0.5 (mean 0.5, sum 2.0)
  const std::vector<std::vector<double>> seqs{{-1.0}, {-0.5, -0.5, -0.5, -0.5}};
  EXPECT_EQ(select_choice(seqs, ChoiceScoring::mean_nll), 1u);
  EXPECT_EQ(select_choice(seqs, ChoiceScoring::sum_nll), 0u);
}

TEST(SelectChoice, TiesGoToLowestIndexAndEmptyThrows) {
  EXPECT_EQ(select_choice({{-1.0}, {-0.5, -1.5}, {-1.0}}), 0u);
  EXPECT_THROW(select_choice({{-1.0}, {}}), EmptySequence);
  EXPECT_THROW(select_choice({}), EmptySequence);
}

TEST(PrecisionRecall, HandCases) {
  auto pr = part_precision_recall({"a", "b", "c"}, {"a", "d"});
  EXPECT_DOUBLE_EQ(pr.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(pr.recall, 0.5);
  pr = part_precision_recall({}, {"a"});
  EXPECT_EQ(pr.precision, 0.0);
  EXPECT_EQ(pr.recall, 0.0);
  EXPECT_THROW(part_precision_recall({"a"}, {}), EmptyGroundTruth);
}

TEST(Giou, ConstructedCase) {
  BinaryMask full(2, 2, {1, 1, 1, 1});
  BinaryMask empty(2, 2);
  std::map<std::string, std::vector<MaskPair>> groups;
  groups["A"].push_back({full, full});
  groups["B"].push_back({empty, full});
  groups["B"].push_back({std::nullopt, full});
  std::vector<MaskPair> flat;
  for (const auto& [k, v] : groups) {
    flat.insert(flat.end(), v.begin(), v.end());
  }
  EXPECT_EQ(macro_giou(groups), 0.5);
  EXPECT_EQ(micro_giou(flat), 1.0 / 3.0);
}

TEST(Giou, EmptyInputsThrow) {
  EXPECT_THROW(micro_giou({}), EmptyInput);
  EXPECT_THROW(macro_giou({}), EmptyInput);
  EXPECT_THROW(macro_mean({{"a", {}}}), EmptyInput);
  EXPECT_THROW(micro_mean({{"a", {}}}), EmptyInput);
}

TEST(Giou, MatchesNaiveOraclesOnRandomDatasets) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    std::map<std::string, std::vector<MaskPair>> groups;
    std::map<std::string, std::vector<double>> ious;
    const auto images = 1 + rng.uniform_index(8);
    for (std::size_t i = 0; i < images; ++i) {
      const auto id = "img" + std::to_string(i);
      const auto h = static_cast<std::uint32_t>(1 + rng.uniform_index(8));
      const auto w = static_cast<std::uint32_t>(1 + rng.uniform_index(8));
      const auto pairs = 1 + rng.uniform_index(5);
      for (std::size_t p = 0; p < pairs; ++p) {
        auto gt = testkit::random_mask(rng, h, w, rng.uniform01());
        std::optional<BinaryMask> pred;
        if (rng.uniform01() < 0.9) {
          pred = testkit::random_mask(rng, h, w, rng.uniform01());
        }
        groups[id].push_back({pred, gt});
      }
    }
    std::vector<MaskPair> flat;
    for (const auto& [k, v] : groups) {
      for (const auto& p : v) {
        flat.push_back(p);
        ious[k].push_back(pair_iou(p));
      }
    }
    EXPECT_LT(std::fabs(micro_giou(flat) - static_cast<double>(flat_oracle(ious))), 1e-12);
    EXPECT_LT(std::fabs(macro_giou(groups) - static_cast<double>(two_level_oracle(ious))), 1e-12);
    EXPECT_EQ(micro_mean(ious), micro_giou(flat));
    EXPECT_EQ(macro_mean(ious), macro_giou(groups));
  }
}

TEST(ResponseJson, ValidatesShape) {
  auto ok = nlohmann::json::parse(
      R"({"qid":"a/id","part_logprobs":[[-1],[-1],[-1],[-1],[-1]],"masks":{"x":{"size":[1,1],"counts":[0,1]}}})");
  const auto r = response_from_json(ok);
  EXPECT_EQ(r.question_id, "a/id");
  EXPECT_EQ(r.masks.size(), 1u);
  EXPECT_EQ(response_from_json(response_to_json(r)).part_logprobs, r.part_logprobs);

  auto bad = ok;
  bad.erase("qid");
  EXPECT_THROW(response_from_json(bad), MalformedResponse);
  bad = ok;
  bad["part_logprobs"] = nlohmann::json::parse("[[-1],[-1]]");
  EXPECT_THROW(response_from_json(bad), MalformedResponse);
  bad = ok;
  bad["part_logprobs"][0][0] = 0.5;
  EXPECT_THROW(response_from_json(bad), MalformedResponse);
  bad = ok;
  bad["masks"]["x"]["counts"] = nlohmann::json::parse("[3]");
  EXPECT_THROW(response_from_json(bad), MalformedResponse);
}

TEST(ReadResponses, CollectsBadLines) {
  testkit::TempDir dir("resp");
  testkit::write_text(dir / "r.jsonl",
                      "{\"qid\":\"a\",\"part_logprobs\":[[-1],[-1],[-1],[-1],[-1]]}\n"
                      "\n"
                      "{not json\n"
                      "{\"qid\":\"b\",\"part_logprobs\":[[-1]]}\n");
  const auto file = read_responses(dir / "r.jsonl");
  ASSERT_EQ(file.records.size(), 1u);
  ASSERT_EQ(file.errors.size(), 2u);
  EXPECT_EQ(file.errors[0].kind, "malformed_response");
  EXPECT_EQ(file.errors[0].question_id, "");
  EXPECT_EQ(file.errors[1].question_id, "b");
  EXPECT_THROW(read_responses(dir / "missing.jsonl"), ConfigError);
}

class Evaluation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { questions_ = new std::vector<QuestionRecord>(synthetic_questions(60)); }
  static void TearDownTestSuite() { delete questions_; }
  static std::vector<QuestionRecord>* questions_;
};

std::vector<QuestionRecord>* Evaluation::questions_ = nullptr;

TEST_F(Evaluation, OracleResponderIsPerfect) {
  std::vector<ResponseRecord> responses;
  for (const auto& q : *questions_) {
    responses.push_back(oracle_response(q));
  }
  const auto report = evaluate(*questions_, responses);
  EXPECT_TRUE(report.errors.empty());
  EXPECT_EQ(report.overall.questions, questions_->size());
  for (const auto& [type, r] : report.per_type) {
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.mean_precision, 1.0);
    EXPECT_EQ(r.mean_recall, 1.0);
    EXPECT_EQ(r.micro_giou, 1.0);
    EXPECT_EQ(r.macro_giou, 1.0);
    EXPECT_EQ(r.skipped, 0u);
    if (genpipe::is_part_whole(type)) {
      EXPECT_EQ(r.object_accuracy, 1.0);
    }
  }
}

TEST_F(Evaluation, MissingResponsesAreSkipsScoringZero) {
  const auto report = evaluate(*questions_, {});
  EXPECT_EQ(report.overall.skipped, questions_->size());
  EXPECT_EQ(report.overall.accuracy, 0.0);
  EXPECT_EQ(report.overall.micro_giou, 0.0);
  EXPECT_GT(report.overall.mask_pairs, 0u);
}

TEST_F(Evaluation, RecordErrorsAreCollected) {
  std::vector<ResponseRecord> responses;
  auto unknown = oracle_response(questions_->front());
  unknown.question_id = "nope/id";
  responses.push_back(unknown);
  auto wrong_dims = oracle_response(questions_->at(1));
  wrong_dims.masks.begin()->second = maskio::MaskRle{1, 1, {1}};
  responses.push_back(wrong_dims);
  responses.push_back(oracle_response(questions_->at(2)));
  responses.push_back(oracle_response(questions_->at(2)));
  const auto report = evaluate(*questions_, responses, {}, {{"", "malformed_response", "line 9"}});
  ASSERT_EQ(report.errors.size(), 4u);
  EXPECT_EQ(report.errors[0].kind, "malformed_response");
  EXPECT_EQ(report.errors[1].kind, "unknown_question_id");
  EXPECT_EQ(report.errors[2].kind, "malformed_response");
  EXPECT_EQ(report.errors[3].kind, "duplicate_response");
  EXPECT_EQ(report.overall.skipped, questions_->size() - 1);
  EXPECT_EQ(report.overall.correct_parts, 1u);
}

TEST_F(Evaluation, PartWholeNeedsObjectSequences) {
  const auto it = std::find_if(questions_->begin(), questions_->end(),
                               [](const QuestionRecord& q) { return genpipe::is_part_whole(q.type); });
  ASSERT_NE(it, questions_->end());
  auto r = oracle_response(*it);
  r.object_logprobs.clear();
  const auto report = evaluate(*questions_, {r});
  ASSERT_EQ(report.errors.size(), 1u);
  EXPECT_EQ(report.errors[0].kind, "malformed_response");
}

TEST_F(Evaluation, DuplicateQuestionIdsAreRejected) {
  auto qs = *questions_;
  qs.push_back(qs.front());
  EXPECT_THROW(evaluate(qs, {}), SchemaViolation);
}

TEST_F(Evaluation, ScoringModeChangesTheChoice) {
  const auto& q = questions_->front();
  ResponseRecord r;
  r.question_id = q.id;
  const std::size_t other = (q.correct_part_index + 1) % genpipe::kChoiceCount;
  r.part_logprobs.assign(genpipe::kChoiceCount, std::vector<double>{-9.0});
  r.part_logprobs[q.correct_part_index] = {-0.5, -0.5, -0.5, -0.5};
  r.part_logprobs[other] = {-1.0};
  const std::vector<QuestionRecord> one{q};
  EXPECT_EQ(evaluate(one, {r}, {ChoiceScoring::mean_nll}).overall.correct_parts, 1u);
  EXPECT_EQ(evaluate(one, {r}, {ChoiceScoring::sum_nll}).overall.correct_parts, 0u);
}

TEST_F(Evaluation, ReportSerializes) {
  const auto report = evaluate(*questions_, {});
  const auto j = report_to_json(report);
  EXPECT_EQ(j.at("scoring"), "mean_nll");
  EXPECT_EQ(j.at("overall").at("questions"), questions_->size());
  EXPECT_TRUE(j.at("per_type").contains("identification"));
  EXPECT_NE(report_to_table(report).find("all"), std::string::npos);
}
