#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "partonomy/cooccurrence.hpp"
#include "partonomy/embeddings.hpp"
#include "partonomy/maskio.hpp"
#include "partonomy/ontology.hpp"
#include "partonomy/rng.hpp"

namespace partonomy::genpipe {

enum class QuestionType { identification, intersection, difference, part_to_whole, whole_to_part };

inline constexpr std::array<QuestionType, 5> kAllQuestionTypes = {
    QuestionType::identification, QuestionType::intersection, QuestionType::difference,
    QuestionType::part_to_whole, QuestionType::whole_to_part};

inline constexpr std::size_t kChoiceCount = 5;

std::string_view to_string(QuestionType type) noexcept;
// "id", "int", "diff", "p2w", "w2p"
std::string_view short_name(QuestionType type) noexcept;
// Accepts both the long and the short spelling.
std::optional<QuestionType> parse_question_type(std::string_view name);

constexpr bool needs_comparator(QuestionType t) noexcept {
  return t == QuestionType::intersection || t == QuestionType::difference;
}
constexpr bool is_part_whole(QuestionType t) noexcept {
  return t == QuestionType::part_to_whole || t == QuestionType::whole_to_part;
}

struct QuestionRecord {
  std::string id;
  std::string image_id;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  QuestionType type = QuestionType::identification;
  std::string object_label;
  std::string prompt;
  std::string comparator_label;  // intersection / difference only
  std::vector<std::string> part_choices;
  std::vector<PartSet> part_choice_sets;  // parts behind each rendered choice
  std::size_t correct_part_index = 0;
  std::vector<std::string> object_choices;  // part-whole types only
  std::optional<std::size_t> correct_object_index;
  PartSet gt_parts;
  std::map<std::string, maskio::MaskRle> gt_masks;
};

nlohmann::json question_to_json(const QuestionRecord& q);
QuestionRecord question_from_json(const nlohmann::json& j);

// Reads a question JSONL file, skipping the provenance header line if present.
std::vector<QuestionRecord> read_questions(const std::filesystem::path& path);

struct GroundTruth {
  PartSet parts;
  std::optional<std::string> object;  // set for part-whole types
};

// Throws EmptyGroundTruth when the resulting part set is empty.
GroundTruth build_ground_truth(const PartInstance& instance, QuestionType type,
                               const std::optional<std::string>& comparator,
                               const Ontology& ontology);

// Uniform over other ontology objects sharing at least one annotated part with
// the instance, restricted to the instance's category when any candidate is there.
std::string sample_comparator(const PartInstance& instance, const Ontology& ontology, Rng& rng);

enum class MutationKind { add, remove, replace };

struct Mutation {
  MutationKind kind = MutationKind::add;
  std::string removed;  // remove / replace
  std::string added;    // add / replace
};

// Throws Error(invalid) if the mutation does not apply (missing member, duplicate add,
// or a removal that would empty the set).
PartSet apply_mutation(const PartSet& parts, const Mutation& mutation);

struct MutationConfig {
  std::size_t top_k = 10;
  std::size_t retry_budget = 32;
};

// Parts that may be added to `current`: the category pool when non-empty,
// otherwise the model vocabulary, minus current; ranked by the co-occurrence model
// and truncated to top_k.
std::vector<RankedPart> addition_candidates(const PartSet& current, const CooccurrenceModel& model,
                                            const PartSet& category_pool, std::size_t top_k);

// Applies n_mut random add/remove/replace operations. The result is never
// empty and never equal to gt. Throws MutationExhausted after retry_budget attempts.
PartSet mutate_answer(const PartSet& gt, const CooccurrenceModel& model, const PartSet& category_pool,
                      Rng& rng, int n_mut, const MutationConfig& config = {});

// Four pairwise-distinct mutated sets, each with n_mut drawn from {1, 2, 3}.
std::vector<PartSet> generate_distractors(const PartSet& gt, const CooccurrenceModel& model,
                                          const PartSet& category_pool, Rng& rng,
                                          const MutationConfig& config = {});

// "The <object> in the image has a, b, and c." Part-whole questions say
// "object" instead of the label so the part choices do not give the answer away.
std::string render_choice(const PartSet& parts, QuestionType type, const std::string& object_label);
std::string render_object_choice(const std::string& object_label);
std::string render_prompt(QuestionType type, const std::string& object_label,
                          const std::string& comparator_label = {});

struct GenerationConfig {
  std::uint64_t seed = 42;
  std::vector<QuestionType> types{kAllQuestionTypes.begin(), kAllQuestionTypes.end()};
  MutationConfig mutation;
  unsigned jobs = 1;
};

struct GenerationStats {
  std::size_t images = 0;
  std::size_t emitted = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> skip_reasons;
};

// At most one question per enabled type per image, built on the image's primary
// instance. Each question draws from its own stream seeded by (seed, image id,
// type), so the output does not depend on image order or job count. Output is
// sorted by (image id, type). Questions that cannot be built are skipped and logged.
// `table` may be null only when no part-whole type is enabled.
std::vector<QuestionRecord> generate_questions(const PartDataset& ds, const Ontology& ontology,
                                               const CooccurrenceModel& model,
                                               const EmbeddingTable* table,
                                               const GenerationConfig& config,
                                               GenerationStats* stats = nullptr);

}  // namespace partonomy::genpipe
