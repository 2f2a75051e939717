#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "partonomy/genpipe.hpp"
#include "partonomy/maskio.hpp"
#include "partonomy/ontology.hpp"

namespace partonomy::metrics {

using genpipe::QuestionRecord;
using genpipe::QuestionType;

// Neumaier summation; order-insensitive to well below 1e-12 for the sizes used here.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct ResponseRecord {
  std::string question_id;
  std::vector<std::vector<double>> part_logprobs;    // one token sequence per choice
  std::vector<std::vector<double>> object_logprobs;  // part-whole questions only
  std::map<std::string, maskio::MaskRle> masks;
};

// Throws MalformedResponse.
ResponseRecord response_from_json(const nlohmann::json& j);
nlohmann::json response_to_json(const ResponseRecord& r);

struct RecordError {
  std::string question_id;  // may be empty when the line could not be parsed
  std::string kind;         // "unknown_question_id", "malformed_response", "duplicate_response"
  std::string message;
};

struct ResponseFile {
  std::vector<ResponseRecord> records;
  std::vector<RecordError> errors;
};

// Bad lines are collected in `errors` instead of aborting the read.
ResponseFile read_responses(const std::filesystem::path& path);

enum class ChoiceScoring {
  mean_nll,  // length-normalized: mean negative log-probability per token
  sum_nll,   // raw sequence log-probability
};

// Index of the lowest-scoring choice; ties go to the lowest index.
// Throws EmptySequence when any choice has no tokens.
std::size_t select_choice(const std::vector<std::vector<double>>& sequences,
                          ChoiceScoring scoring = ChoiceScoring::mean_nll);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Precision is 0 for an empty prediction. Throws EmptyGroundTruth for empty gt.
PrecisionRecall part_precision_recall(const PartSet& predicted, const PartSet& ground_truth);

struct MaskPair {
  std::optional<maskio::BinaryMask> predicted;  // missing prediction scores 0
  maskio::BinaryMask ground_truth;
};

double pair_iou(const MaskPair& pair);

// Mean IoU over every pair. Throws EmptyInput.
double micro_giou(std::span<const MaskPair> pairs);
// Mean over images of the per-image mean IoU. Throws EmptyInput (also for an empty group).
double macro_giou(const std::map<std::string, std::vector<MaskPair>>& groups);

// Same reductions over precomputed IoUs.
double micro_mean(const std::map<std::string, std::vector<double>>& ious_by_image);
double macro_mean(const std::map<std::string, std::vector<double>>& ious_by_image);

struct TypeReport {
  std::size_t questions = 0;
  std::size_t skipped = 0;
  std::size_t correct_parts = 0;
  std::size_t correct_objects = 0;
  bool has_objects = false;
  double accuracy = 0.0;
  double object_accuracy = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double micro_giou = 0.0;
  double macro_giou = 0.0;
  std::size_t mask_pairs = 0;
};

struct EvalReport {
  ChoiceScoring scoring = ChoiceScoring::mean_nll;
  std::map<QuestionType, TypeReport> per_type;
  TypeReport overall;
  std::vector<RecordError> errors;
};

struct EvalOptions {
  ChoiceScoring scoring = ChoiceScoring::mean_nll;
};

// Scores every question. Unanswered or malformed responses count as wrong with
// empty masks and are tallied as skips; responses for unknown question ids are
// reported in `errors` and otherwise ignored.
EvalReport evaluate(const std::vector<QuestionRecord>& questions,
                    const std::vector<ResponseRecord>& responses, const EvalOptions& options = {},
                    std::vector<RecordError> prior_errors = {});

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace partonomy::metrics
