#include "partonomy/genpipe.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "partonomy/errors.hpp"

namespace partonomy::genpipe {

using nlohmann::json;

std::string_view to_string(QuestionType type) noexcept {
  switch (type) {
    case QuestionType::identification: return "identification";
    case QuestionType::intersection: return "intersection";
    case QuestionType::difference: return "difference";
    case QuestionType::part_to_whole: return "part_to_whole";
    case QuestionType::whole_to_part: return "whole_to_part";
  }
  return "unknown";
}

std::string_view short_name(QuestionType type) noexcept {
  switch (type) {
    case QuestionType::identification: return "id";
    case QuestionType::intersection: return "int";
    case QuestionType::difference: return "diff";
    case QuestionType::part_to_whole: return "p2w";
    case QuestionType::whole_to_part: return "w2p";
  }
  return "unknown";
}

std::optional<QuestionType> parse_question_type(std::string_view name) {
  for (auto t : kAllQuestionTypes) {
    if (name == to_string(t) || name == short_name(t)) {
      return t;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Serialization

json question_to_json(const QuestionRecord& q) {
  json sets = json::array();
  for (const auto& s : q.part_choice_sets) {
    sets.push_back(std::vector<std::string>(s.begin(), s.end()));
  }
  json masks = json::object();
  for (const auto& [part, rle] : q.gt_masks) {
    masks[part] = maskio::rle_to_json(rle);
  }
  json j{{"id", q.id},
         {"image_id", q.image_id},
         {"height", q.height},
         {"width", q.width},
         {"question_type", to_string(q.type)},
         {"object", q.object_label},
         {"prompt", q.prompt},
         {"part_choices", q.part_choices},
         {"part_choice_sets", sets},
         {"correct_part_index", q.correct_part_index},
         {"gt_parts", std::vector<std::string>(q.gt_parts.begin(), q.gt_parts.end())},
         {"gt_masks", masks}};
  if (needs_comparator(q.type)) {
    j["comparator_label"] = q.comparator_label;
  }
  if (is_part_whole(q.type)) {
    j["object_choices"] = q.object_choices;
    j["correct_object_index"] = q.correct_object_index.value_or(0);
  }
  return j;
}

QuestionRecord question_from_json(const json& j) {
  const std::string record = j.contains("id") && j.at("id").is_string()
                                 ? "question " + j.at("id").get<std::string>()
                                 : std::string("question");
  try {
    QuestionRecord q;
    q.id = j.at("id").get<std::string>();
    q.image_id = j.at("image_id").get<std::string>();
    q.height = j.at("height").get<std::uint32_t>();
    q.width = j.at("width").get<std::uint32_t>();
    const auto type = parse_question_type(j.at("question_type").get<std::string>());
    if (!type) {
      throw SchemaViolation(record, "unknown question_type");
    }
    q.type = *type;
    q.object_label = j.at("object").get<std::string>();
    q.prompt = j.at("prompt").get<std::string>();
    q.part_choices = j.at("part_choices").get<std::vector<std::string>>();
    for (const auto& s : j.at("part_choice_sets")) {
      auto v = s.get<std::vector<std::string>>();
      q.part_choice_sets.emplace_back(v.begin(), v.end());
    }
    q.correct_part_index = j.at("correct_part_index").get<std::size_t>();
    auto gt = j.at("gt_parts").get<std::vector<std::string>>();
    q.gt_parts = PartSet(gt.begin(), gt.end());
    for (const auto& [part, rle] : j.at("gt_masks").items()) {
      q.gt_masks.emplace(part, maskio::rle_from_json(rle, record + " mask " + part));
    }
    if (j.contains("comparator_label")) {
      q.comparator_label = j.at("comparator_label").get<std::string>();
    }
    if (j.contains("object_choices")) {
      q.object_choices = j.at("object_choices").get<std::vector<std::string>>();
      q.correct_object_index = j.at("correct_object_index").get<std::size_t>();
    }
    if (q.part_choices.size() != kChoiceCount || q.part_choice_sets.size() != kChoiceCount ||
        q.correct_part_index >= kChoiceCount) {
      throw SchemaViolation(record, "expected exactly 5 part choices with a valid correct index");
    }
    if (is_part_whole(q.type) &&
        (q.object_choices.size() != kChoiceCount || *q.correct_object_index >= kChoiceCount)) {
      throw SchemaViolation(record, "part-whole questions need 5 object choices");
    }
    return q;
  } catch (const json::exception& e) {
    throw SchemaViolation(record, e.what());
  }
}

std::vector<QuestionRecord> read_questions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::vector<QuestionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MalformedFile(path.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                          start + e.byte);
    }
    if (j.is_object() && j.contains("provenance") && !j.contains("id")) {
      continue;
    }
    out.push_back(question_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth and comparators

GroundTruth build_ground_truth(const PartInstance& instance, QuestionType type,
                               const std::optional<std::string>& comparator,
                               const Ontology& ontology) {
  if (needs_comparator(type) != comparator.has_value()) {
    throw Error(ErrorKind::invalid, std::string("comparator must be given exactly for "
                                                "intersection/difference, not ") +
                                        std::string(to_string(type)));
  }
  const PartSet annotated = instance.part_labels();
  GroundTruth gt;
  switch (type) {
    case QuestionType::intersection:
      gt.parts = shared_parts(annotated, ontology.parts_of(*comparator));
      break;
    case QuestionType::difference:
      gt.parts = part_difference(annotated, ontology.parts_of(*comparator));
      break;
    case QuestionType::identification:
    case QuestionType::part_to_whole:
    case QuestionType::whole_to_part:
      gt.parts = annotated;
      break;
  }
  if (is_part_whole(type)) {
    gt.object = instance.label;
  }
  if (gt.parts.empty()) {
    throw EmptyGroundTruth("empty ground truth for " + std::string(to_string(type)) + " on \"" +
                           instance.label + "\"" +
                           (comparator ? " vs \"" + *comparator + "\"" : std::string()));
  }
  return gt;
}

std::string sample_comparator(const PartInstance& instance, const Ontology& ontology, Rng& rng) {
  const PartSet annotated = instance.part_labels();
  const auto own = ontology.object_category.find(instance.label);
  std::vector<std::string> any;
  std::vector<std::string> same_category;
  for (const auto& [object, parts] : ontology.object_parts) {
    if (object == instance.label || shared_parts(annotated, parts).empty()) {
      continue;
    }
    any.push_back(object);
    if (own != ontology.object_category.end() &&
        ontology.object_category.at(object) == own->second) {
      same_category.push_back(object);
    }
  }
  if (any.empty()) {
    throw NoComparator("no object shares a part with \"" + instance.label + "\"");
  }
  return same_category.empty() ? rng.pick(any) : rng.pick(same_category);
}

// ---------------------------------------------------------------------------
// Answer mutation

PartSet apply_mutation(const PartSet& parts, const Mutation& m) {
  PartSet out = parts;
  if (m.kind == MutationKind::remove || m.kind == MutationKind::replace) {
    if (out.erase(m.removed) == 0) {
      throw Error(ErrorKind::invalid, "cannot remove \"" + m.removed + "\": not in set");
    }
  }
  if (m.kind == MutationKind::add || m.kind == MutationKind::replace) {
    if (m.added == m.removed || !out.insert(m.added).second) {
      throw Error(ErrorKind::invalid, "cannot add \"" + m.added + "\": already present");
    }
  }
  if (out.empty()) {
    throw Error(ErrorKind::invalid, "mutation would leave an empty part set");
  }
  return out;
}

std::vector<RankedPart> addition_candidates(const PartSet& current, const CooccurrenceModel& model,
                                            const PartSet& category_pool, std::size_t top_k) {
  if (category_pool.empty()) {
    return predict_likely_parts(model, current, top_k);
  }
  const auto active = model.indices_of(current);
  std::vector<RankedPart> ranked;
  for (const auto& part : category_pool) {
    if (current.count(part)) {
      continue;
    }
    // Parts the model never saw rank below every modelled part.
    const auto idx = model.index_of(part);
    ranked.push_back(RankedPart{part, idx ? model.score(*idx, active) : 0.0});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedPart& a, const RankedPart& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return a.label < b.label;
  });
  if (ranked.size() > top_k) {
    ranked.resize(top_k);
  }
  return ranked;
}

namespace {

std::optional<PartSet> mutate_once(const PartSet& gt, const CooccurrenceModel& model,
                                   const PartSet& pool, Rng& rng, int n_mut,
                                   const MutationConfig& config) {
  PartSet current = gt;
  for (int step = 0; step < n_mut; ++step) {
    const auto candidates = addition_candidates(current, model, pool, config.top_k);
    std::vector<MutationKind> legal;
    if (!candidates.empty()) {
      legal.push_back(MutationKind::add);
    }
    if (current.size() > 1) {
      legal.push_back(MutationKind::remove);
    }
    if (!candidates.empty()) {
      legal.push_back(MutationKind::replace);
    }
    if (legal.empty()) {
      return std::nullopt;
    }
    Mutation m;
    m.kind = rng.pick(legal);
    if (m.kind != MutationKind::add) {
      auto it = current.begin();
      std::advance(it, static_cast<std::ptrdiff_t>(rng.uniform_index(current.size())));
      m.removed = *it;
    }
    if (m.kind != MutationKind::remove) {
      m.added = candidates[rng.uniform_index(candidates.size())].label;
    }
    current = apply_mutation(current, m);
  }
  if (current == gt) {
    return std::nullopt;
  }
  return current;
}

}  // namespace

PartSet mutate_answer(const PartSet& gt, const CooccurrenceModel& model, const PartSet& category_pool,
                      Rng& rng, int n_mut, const MutationConfig& config) {
  if (n_mut < 1) {
    throw Error(ErrorKind::invalid, "mutate_answer: n_mut must be >= 1");
  }
  if (gt.empty()) {
    throw EmptyGroundTruth("mutate_answer: empty ground truth");
  }
  for (std::size_t attempt = 0; attempt < config.retry_budget; ++attempt) {
    if (auto out = mutate_once(gt, model, category_pool, rng, n_mut, config)) {
      return *out;
    }
  }
  throw MutationExhausted("no legal mutation of a " + std::to_string(gt.size()) +
                          "-part answer within " + std::to_string(config.retry_budget) +
                          " attempts");
}

std::vector<PartSet> generate_distractors(const PartSet& gt, const CooccurrenceModel& model,
                                          const PartSet& category_pool, Rng& rng,
                                          const MutationConfig& config) {
  constexpr std::size_t kNeeded = kChoiceCount - 1;
  std::vector<PartSet> out;
  const std::size_t max_draws = kNeeded * config.retry_budget;
  for (std::size_t draw = 0; draw < max_draws && out.size() < kNeeded; ++draw) {
    const int n_mut = 1 + static_cast<int>(rng.uniform_index(3));
    auto candidate = mutate_answer(gt, model, category_pool, rng, n_mut, config);
    if (std::find(out.begin(), out.end(), candidate) == out.end()) {
      out.push_back(std::move(candidate));
    }
  }
  if (out.size() < kNeeded) {
    throw MutationExhausted("only " + std::to_string(out.size()) +
                            " distinct distractors reachable from a " +
                            std::to_string(gt.size()) + "-part answer");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_choice(const PartSet& parts, QuestionType type, const std::string& object_label) {
  if (parts.empty()) {
    throw Error(ErrorKind::invalid, "render_choice: empty part set");
  }
  const std::string subject = is_part_whole(type) ? std::string("object") : object_label;
  std::string list;
  std::size_t i = 0;
  for (const auto& p : parts) {
    if (i > 0) {
      if (parts.size() == 2) {
        list += " and ";
      } else {
        list += i + 1 == parts.size() ? ", and " : ", ";
      }
    }
    list += p;
    ++i;
  }
  return "The " + subject + " in the image has " + list + ".";
}

std::string render_object_choice(const std::string& object_label) {
  if (object_label.empty()) {
    throw Error(ErrorKind::invalid, "render_object_choice: empty label");
  }
  return object_label;
}

std::string render_prompt(QuestionType type, const std::string& object_label,
                          const std::string& comparator_label) {
  switch (type) {
    case QuestionType::identification:
      return "What visible parts does the " + object_label + " in the image have?";
    case QuestionType::intersection:
      return "What visible parts does the " + object_label +
             " in the image have in common with a " + comparator_label + "?";
    case QuestionType::difference:
      return "What visible parts does the " + object_label + " in the image have that a " +
             comparator_label + " does not have?";
    case QuestionType::part_to_whole:
      return "What visible parts does the object in the image have, and what is the object?";
    case QuestionType::whole_to_part:
      return "What is the object in the image, and what visible parts does it have?";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct ImageResult {
  std::vector<QuestionRecord> questions;
  std::vector<std::string> skip_reasons;
};

QuestionRecord build_question(const ImageEntry& image, const PartInstance& inst, QuestionType type,
                              const Ontology& ontology, const CooccurrenceModel& model,
                              const EmbeddingTable* table, const PartSet& pool,
                              const GenerationConfig& config) {
  Rng rng(derive_seed(config.seed, image.id, static_cast<std::uint64_t>(type)));

  std::optional<std::string> comparator;
  if (needs_comparator(type)) {
    comparator = sample_comparator(inst, ontology, rng);
  }
  const auto gt = build_ground_truth(inst, type, comparator, ontology);
  const auto distractors = generate_distractors(gt.parts, model, pool, rng, config.mutation);

  QuestionRecord q;
  q.id = image.id + "/" + std::string(short_name(type));
  q.image_id = image.id;
  q.height = image.height;
  q.width = image.width;
  q.type = type;
  q.object_label = inst.label;
  q.comparator_label = comparator.value_or("");
  q.prompt = render_prompt(type, inst.label, q.comparator_label);
  q.gt_parts = gt.parts;
  for (const auto& part : gt.parts) {
    q.gt_masks.emplace(part, inst.parts.at(part));
  }

  q.correct_part_index = rng.uniform_index(kChoiceCount);
  std::size_t next = 0;
  for (std::size_t slot = 0; slot < kChoiceCount; ++slot) {
    const PartSet& set = slot == q.correct_part_index ? gt.parts : distractors[next++];
    q.part_choice_sets.push_back(set);
    q.part_choices.push_back(render_choice(set, type, inst.label));
  }

  if (is_part_whole(type)) {
    const auto wrong = object_distractors(inst.label, *table, kChoiceCount - 1);
    q.correct_object_index = rng.uniform_index(kChoiceCount);
    std::size_t w = 0;
    for (std::size_t slot = 0; slot < kChoiceCount; ++slot) {
      q.object_choices.push_back(
          render_object_choice(slot == *q.correct_object_index ? inst.label : wrong[w++]));
    }
  }
  return q;
}

ImageResult process_image(const ImageEntry& image, const Ontology& ontology,
                          const CooccurrenceModel& model, const EmbeddingTable* table,
                          const std::vector<QuestionType>& types, const GenerationConfig& config) {
  ImageResult result;
  if (image.instances.empty()) {
    spdlog::debug("stage=generate image=\"{}\" skip=no-instances", image.id);
    result.skip_reasons.push_back("no_instances");
    return result;
  }
  const auto& inst = select_primary_instance(image);
  if (inst.parts.empty()) {
    spdlog::debug("stage=generate image=\"{}\" skip=no-annotated-parts", image.id);
    result.skip_reasons.push_back("no_annotated_parts");
    return result;
  }
  PartSet pool;
  if (auto it = ontology.object_category.find(inst.label); it != ontology.object_category.end()) {
    pool = ontology.category_parts(it->second);
  }
  for (auto type : types) {
    try {
      result.questions.push_back(
          build_question(image, inst, type, ontology, model, table, pool, config));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::generation) {
        throw;
      }
      spdlog::debug("stage=generate image=\"{}\" type={} skip=\"{}\"", image.id,
                   short_name(type), e.what());
      std::string reason = "other";
      if (dynamic_cast<const EmptyGroundTruth*>(&e)) {
        reason = "empty_ground_truth";
      } else if (dynamic_cast<const MutationExhausted*>(&e)) {
        reason = "mutation_exhausted";
      } else if (dynamic_cast<const NoComparator*>(&e)) {
        reason = "no_comparator";
      } else if (dynamic_cast<const MissingEmbedding*>(&e)) {
        reason = "missing_embedding";
      }
      result.skip_reasons.push_back(reason);
    }
  }
  return result;
}

}  // namespace

std::vector<QuestionRecord> generate_questions(const PartDataset& ds, const Ontology& ontology,
                                               const CooccurrenceModel& model,
                                               const EmbeddingTable* table,
                                               const GenerationConfig& config,
                                               GenerationStats* stats) {
  std::vector<QuestionType> types;
  for (auto t : kAllQuestionTypes) {
    if (std::find(config.types.begin(), config.types.end(), t) != config.types.end()) {
      types.push_back(t);
      if (is_part_whole(t) && table == nullptr) {
        throw ConfigError(std::string(to_string(t)) + " questions need an embedding table");
      }
    }
  }

  std::vector<ImageResult> results(ds.images.size());
  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(ds.images.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < ds.images.size(); i = next++) {
      try {
        results[i] = process_image(ds.images[i], ontology, model, table, types, config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
        next = ds.images.size();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }

  std::vector<QuestionRecord> out;
  GenerationStats local;
  local.images = ds.images.size();
  for (auto& r : results) {
    for (auto& q : r.questions) {
      out.push_back(std::move(q));
    }
    for (auto& reason : r.skip_reasons) {
      ++local.skip_reasons[reason];
      ++local.skipped;
    }
  }
  local.emitted = out.size();
  std::sort(out.begin(), out.end(), [](const QuestionRecord& a, const QuestionRecord& b) {
    return std::tie(a.image_id, a.type) < std::tie(b.image_id, b.type);
  });
  if (stats) {
    *stats = std::move(local);
  }
  return out;
}

}  // namespace partonomy::genpipe
