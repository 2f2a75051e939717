#include "partonomy/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "partonomy/errors.hpp"

namespace partonomy::metrics {

using nlohmann::json;

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

namespace {

std::vector<std::vector<double>> parse_logprob_block(const json& j, const std::string& record,
                                                     const char* field) {
  if (!j.is_array() || j.size() != genpipe::kChoiceCount) {
    throw MalformedResponse(record + ": \"" + field + "\" must hold 5 sequences");
  }
  std::vector<std::vector<double>> out;
  for (const auto& seq : j) {
    if (!seq.is_array()) {
      throw MalformedResponse(record + ": \"" + field + "\" entries must be lists");
    }
    std::vector<double> values;
    for (const auto& v : seq) {
      if (!v.is_number()) {
        throw MalformedResponse(record + ": log-probabilities must be numbers");
      }
      const double x = v.get<double>();
      if (!std::isfinite(x) || x > 0.0) {
        throw MalformedResponse(record + ": log-probabilities must be finite and <= 0");
      }
      values.push_back(x);
    }
    out.push_back(std::move(values));
  }
  return out;
}

}  // namespace

ResponseRecord response_from_json(const json& j) {
  if (!j.is_object() || !j.contains("qid") || !j.at("qid").is_string()) {
    throw MalformedResponse("response without a string \"qid\"");
  }
  ResponseRecord r;
  r.question_id = j.at("qid").get<std::string>();
  const std::string record = "response " + r.question_id;
  if (!j.contains("part_logprobs")) {
    throw MalformedResponse(record + ": missing \"part_logprobs\"");
  }
  r.part_logprobs = parse_logprob_block(j.at("part_logprobs"), record, "part_logprobs");
  if (j.contains("object_logprobs") && !j.at("object_logprobs").is_null()) {
    r.object_logprobs = parse_logprob_block(j.at("object_logprobs"), record, "object_logprobs");
  }
  if (j.contains("masks")) {
    const auto& masks = j.at("masks");
    if (!masks.is_object()) {
      throw MalformedResponse(record + ": \"masks\" must map part -> RLE");
    }
    for (const auto& [part, rle] : masks.items()) {
      try {
        r.masks.emplace(part, maskio::rle_from_json(rle, record + " mask " + part));
      } catch (const SchemaViolation& e) {
        throw MalformedResponse(e.what());
      }
    }
  }
  return r;
}

json response_to_json(const ResponseRecord& r) {
  json masks = json::object();
  for (const auto& [part, rle] : r.masks) {
    masks[part] = maskio::rle_to_json(rle);
  }
  json j{{"qid", r.question_id}, {"part_logprobs", r.part_logprobs}, {"masks", masks}};
  if (!r.object_logprobs.empty()) {
    j["object_logprobs"] = r.object_logprobs;
  }
  return j;
}

ResponseFile read_responses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  ResponseFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      file.errors.push_back({"", "malformed_response", where + ": " + e.what()});
      continue;
    }
    try {
      file.records.push_back(response_from_json(j));
    } catch (const MalformedResponse& e) {
      const std::string qid =
          j.is_object() && j.contains("qid") && j.at("qid").is_string() ? j.at("qid").get<std::string>() : "";
      file.errors.push_back({qid, "malformed_response", where + ": " + e.what()});
    }
  }
  return file;
}

std::size_t select_choice(const std::vector<std::vector<double>>& sequences, ChoiceScoring scoring) {
  if (sequences.empty()) {
    throw EmptySequence("select_choice: no choices");
  }
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    if (seq.empty()) {
      throw EmptySequence("select_choice: choice " + std::to_string(i) + " has no tokens");
    }
    CompensatedSum nll;
    for (double lp : seq) {
      nll.add(-lp);
    }
    const double score =
        scoring == ChoiceScoring::mean_nll ? nll.value() / static_cast<double>(seq.size()) : nll.value();
    if (i == 0 || score < best_score) {
      best = i;
      best_score = score;
    }
  }
  return best;
}

PrecisionRecall part_precision_recall(const PartSet& predicted, const PartSet& ground_truth) {
  if (ground_truth.empty()) {
    throw EmptyGroundTruth("part_precision_recall: empty ground truth");
  }
  const auto hits = static_cast<double>(shared_parts(predicted, ground_truth).size());
  PrecisionRecall pr;
  pr.precision = predicted.empty() ? 0.0 : hits / static_cast<double>(predicted.size());
  pr.recall = hits / static_cast<double>(ground_truth.size());
  return pr;
}

double pair_iou(const MaskPair& pair) {
  if (!pair.predicted) {
    return 0.0;
  }
  return maskio::iou(*pair.predicted, pair.ground_truth);
}

double micro_giou(std::span<const MaskPair> pairs) {
  if (pairs.empty()) {
    throw EmptyInput("micro_giou: no mask pairs");
  }
  CompensatedSum sum;
  for (const auto& p : pairs) {
    sum.add(pair_iou(p));
  }
  return sum.value() / static_cast<double>(pairs.size());
}

double macro_giou(const std::map<std::string, std::vector<MaskPair>>& groups) {
  if (groups.empty()) {
    throw EmptyInput("macro_giou: no images");
  }
  std::map<std::string, std::vector<double>> ious;
  for (const auto& [image, pairs] : groups) {
    auto& v = ious[image];
    for (const auto& p : pairs) {
      v.push_back(pair_iou(p));
    }
  }
  return macro_mean(ious);
}

double micro_mean(const std::map<std::string, std::vector<double>>& ious_by_image) {
  CompensatedSum sum;
  std::size_t n = 0;
  for (const auto& [image, ious] : ious_by_image) {
    for (double v : ious) {
      sum.add(v);
      ++n;
    }
  }
  if (n == 0) {
    throw EmptyInput("micro_mean: no IoUs");
  }
  return sum.value() / static_cast<double>(n);
}

double macro_mean(const std::map<std::string, std::vector<double>>& ious_by_image) {
  if (ious_by_image.empty()) {
    throw EmptyInput("macro_mean: no images");
  }
  CompensatedSum outer;
  for (const auto& [image, ious] : ious_by_image) {
    if (ious.empty()) {
      throw EmptyInput("macro_mean: image " + image + " has no IoUs");
    }
    CompensatedSum inner;
    for (double v : ious) {
      inner.add(v);
    }
    outer.add(inner.value() / static_cast<double>(ious.size()));
  }
  return outer.value() / static_cast<double>(ious_by_image.size());
}

// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
  std::size_t questions = 0;
  std::size_t skipped = 0;
  std::size_t correct_parts = 0;
  std::size_t correct_objects = 0;
  bool has_objects = false;
  CompensatedSum precision;
  CompensatedSum recall;
  std::map<std::string, std::vector<double>> ious;

  TypeReport finish() const {
    TypeReport r;
    r.questions = questions;
    r.skipped = skipped;
    r.correct_parts = correct_parts;
    r.correct_objects = correct_objects;
    r.has_objects = has_objects;
    if (questions > 0) {
      const auto n = static_cast<double>(questions);
      r.accuracy = static_cast<double>(correct_parts) / n;
      r.object_accuracy = has_objects ? static_cast<double>(correct_objects) / n : 0.0;
      r.mean_precision = precision.value() / n;
      r.mean_recall = recall.value() / n;
    }
    for (const auto& [image, v] : ious) {
      r.mask_pairs += v.size();
    }
    if (r.mask_pairs > 0) {
      r.micro_giou = micro_mean(ious);
      r.macro_giou = macro_mean(ious);
    }
    return r;
  }
};

struct QuestionScore {
  bool skipped = true;
  bool part_correct = false;
  bool object_correct = false;
  PrecisionRecall pr;
  std::vector<double> ious;
};

void validate_response(const QuestionRecord& q, const ResponseRecord& r) {
  const std::string record = "response " + r.question_id;
  if (r.part_logprobs.size() != genpipe::kChoiceCount) {
    throw MalformedResponse(record + ": expected 5 part choice sequences");
  }
  for (const auto& seq : r.part_logprobs) {
    if (seq.empty()) {
      throw MalformedResponse(record + ": empty part choice sequence");
    }
  }
  if (genpipe::is_part_whole(q.type)) {
    if (r.object_logprobs.size() != genpipe::kChoiceCount) {
      throw MalformedResponse(record + ": part-whole questions need 5 object choice sequences");
    }
    for (const auto& seq : r.object_logprobs) {
      if (seq.empty()) {
        throw MalformedResponse(record + ": empty object choice sequence");
      }
    }
  }
  for (const auto& [part, rle] : r.masks) {
    if (rle.height != q.height || rle.width != q.width) {
      throw MalformedResponse(record + ": mask for \"" + part + "\" is " +
                              std::to_string(rle.height) + "x" + std::to_string(rle.width) +
                              ", image is " + std::to_string(q.height) + "x" +
                              std::to_string(q.width));
    }
  }
}

QuestionScore score_question(const QuestionRecord& q, const ResponseRecord* r,
                             const EvalOptions& options) {
  QuestionScore s;
  if (r == nullptr) {
    s.ious.assign(q.gt_parts.size(), 0.0);
    return s;
  }
  s.skipped = false;
  const auto chosen = select_choice(r->part_logprobs, options.scoring);
  s.part_correct = chosen == q.correct_part_index;
  s.pr = part_precision_recall(q.part_choice_sets.at(chosen), q.gt_parts);
  if (genpipe::is_part_whole(q.type)) {
    s.object_correct = select_choice(r->object_logprobs, options.scoring) == q.correct_object_index;
  }
  for (const auto& part : q.gt_parts) {
    const auto gt = maskio::rle_decode(q.gt_masks.at(part));
    auto it = r->masks.find(part);
    if (it == r->masks.end()) {
      s.ious.push_back(0.0);
    } else {
      s.ious.push_back(maskio::iou(maskio::rle_decode(it->second), gt));
    }
  }
  return s;
}

void accumulate(Accumulator& acc, const QuestionRecord& q, const QuestionScore& s) {
  ++acc.questions;
  acc.skipped += s.skipped ? 1 : 0;
  acc.correct_parts += s.part_correct ? 1 : 0;
  if (genpipe::is_part_whole(q.type)) {
    acc.has_objects = true;
    acc.correct_objects += s.object_correct ? 1 : 0;
  }
  acc.precision.add(s.pr.precision);
  acc.recall.add(s.pr.recall);
  auto& v = acc.ious[q.image_id];
  v.insert(v.end(), s.ious.begin(), s.ious.end());
}

}  // namespace

EvalReport evaluate(const std::vector<QuestionRecord>& questions,
                    const std::vector<ResponseRecord>& responses, const EvalOptions& options,
                    std::vector<RecordError> prior_errors) {
  EvalReport report;
  report.scoring = options.scoring;
  report.errors = std::move(prior_errors);

  std::map<std::string, const QuestionRecord*> by_id;
  for (const auto& q : questions) {
    if (!by_id.emplace(q.id, &q).second) {
      throw SchemaViolation("question " + q.id, "duplicate question id");
    }
  }

  std::map<std::string, const ResponseRecord*> answered;
  for (const auto& r : responses) {
    auto qit = by_id.find(r.question_id);
    if (qit == by_id.end()) {
      report.errors.push_back({r.question_id, "unknown_question_id",
                               "no question with id \"" + r.question_id + "\""});
      continue;
    }
    try {
      validate_response(*qit->second, r);
    } catch (const MalformedResponse& e) {
      report.errors.push_back({r.question_id, "malformed_response", e.what()});
      continue;
    }
    if (!answered.emplace(r.question_id, &r).second) {
      report.errors.push_back({r.question_id, "duplicate_response",
                               "more than one response; the first one is scored"});
    }
  }

  std::map<QuestionType, Accumulator> per_type;
  Accumulator overall;
  for (const auto& q : questions) {
    auto rit = answered.find(q.id);
    const auto score = score_question(q, rit == answered.end() ? nullptr : rit->second, options);
    accumulate(per_type[q.type], q, score);
    accumulate(overall, q, score);
  }
  for (const auto& [type, acc] : per_type) {
    report.per_type[type] = acc.finish();
  }
  report.overall = overall.finish();
  return report;
}

namespace {

json type_report_json(const TypeReport& r) {
  json j{{"questions", r.questions},
         {"skipped", r.skipped},
         {"correct_parts", r.correct_parts},
         {"accuracy", r.accuracy},
         {"mean_precision", r.mean_precision},
         {"mean_recall", r.mean_recall},
         {"micro_giou", r.micro_giou},
         {"macro_giou", r.macro_giou},
         {"mask_pairs", r.mask_pairs}};
  if (r.has_objects) {
    j["correct_objects"] = r.correct_objects;
    j["object_accuracy"] = r.object_accuracy;
  }
  return j;
}

}  // namespace

json report_to_json(const EvalReport& report) {
  json per_type = json::object();
  for (const auto& [type, r] : report.per_type) {
    per_type[std::string(genpipe::to_string(type))] = type_report_json(r);
  }
  json errors = json::array();
  for (const auto& e : report.errors) {
    errors.push_back(json{{"qid", e.question_id}, {"kind", e.kind}, {"message", e.message}});
  }
  return json{{"scoring", report.scoring == ChoiceScoring::mean_nll ? "mean_nll" : "sum_nll"},
              {"per_type", per_type},
              {"overall", type_report_json(report.overall)},
              {"errors", errors}};
}

std::string report_to_table(const EvalReport& report) {
  std::ostringstream os;
  auto row = [&os](const std::string& name, const TypeReport& r) {
    os << std::left << std::setw(16) << name << std::right << std::setw(7) << r.questions
       << std::setw(7) << r.skipped << std::fixed << std::setprecision(4) << std::setw(9)
       << r.accuracy << std::setw(9);
    if (r.has_objects) {
      os << r.object_accuracy;
    } else {
      os << "-";
    }
    os << std::setw(9) << r.mean_precision << std::setw(9) << r.mean_recall << std::setw(9)
       << r.micro_giou << std::setw(9) << r.macro_giou << '\n';
  };
  os << std::left << std::setw(16) << "type" << std::right << std::setw(7) << "n" << std::setw(7)
     << "skip" << std::setw(9) << "acc" << std::setw(9) << "obj_acc" << std::setw(9) << "P"
     << std::setw(9) << "R" << std::setw(9) << "micro" << std::setw(9) << "macro" << '\n';
  for (const auto& [type, r] : report.per_type) {
    row(std::string(genpipe::to_string(type)), r);
  }
  row("all", report.overall);
  if (!report.errors.empty()) {
    os << report.errors.size() << " response error(s)\n";
  }
  return os.str();
}

}  // namespace partonomy::metrics
