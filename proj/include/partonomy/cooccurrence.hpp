#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "partonomy/ontology.hpp"

namespace partonomy::genpipe {

struct CooccurrenceConfig {
  double learning_rate = 0.1;
  double l2 = 1e-3;
  double tolerance = 1e-6;  // stop once the gradient infinity-norm drops below this
  int max_iters = 5000;
  std::uint64_t seed = 42;  // negative sampling
};

// One logistic regressor per vocabulary part, predicting that part from the
// indicator vector of the other parts present. Immutable once built.
class CooccurrenceModel {
 public:
  CooccurrenceModel() = default;
  // weights: vocabulary.size() rows of vocabulary.size() + 1 entries, bias last.
  CooccurrenceModel(std::vector<std::string> vocabulary, std::vector<std::vector<double>> weights,
                    std::vector<std::string> degenerate = {});

  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  std::size_t size() const noexcept { return vocabulary_.size(); }
  std::span<const double> weights(std::size_t target) const { return weights_[target]; }
  // Parts whose regressor had no usable negatives (or positives) and kept the prior.
  const std::vector<std::string>& degenerate() const noexcept { return degenerate_; }

  std::optional<std::size_t> index_of(std::string_view label) const;
  // Indices of the known labels in `parts`; unknown labels are skipped.
  std::vector<std::size_t> indices_of(const PartSet& parts) const;

  // sigmoid(w_target . indicator(active) + b_target)
  double score(std::size_t target, std::span<const std::size_t> active) const;

 private:
  std::vector<std::string> vocabulary_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::string> degenerate_;
};

// Per-target log-loss after every full-batch step (entry 0 is the initial loss).
struct TrainingTrace {
  std::vector<std::vector<double>> losses;
};

// Leave-one-out positives (S \ {p} -> 1 for every S containing p) and one sampled
// negative per positive (T -> 0 for a uniformly drawn T not containing p), fit by
// full-batch gradient descent with an L2 penalty on the non-bias weights.
// Throws DegenerateData when the vocabulary has fewer than two parts.
CooccurrenceModel train_cooccurrence(const std::vector<PartSet>& part_sets,
                                     const CooccurrenceConfig& config,
                                     TrainingTrace* trace = nullptr);

struct RankedPart {
  std::string label;
  double score = 0.0;
};

// Every vocabulary part outside current and exclude, scored and sorted by
// descending score with lexicographic tiebreak, truncated to k.
std::vector<RankedPart> predict_likely_parts(const CooccurrenceModel& model, const PartSet& current,
                                             std::size_t k, const PartSet& exclude = {});

nlohmann::json cooccurrence_to_json(const CooccurrenceModel& model);
CooccurrenceModel cooccurrence_from_json(const nlohmann::json& j);

}  // namespace partonomy::genpipe
