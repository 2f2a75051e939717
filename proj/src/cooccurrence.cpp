#include "partonomy/cooccurrence.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "partonomy/errors.hpp"
#include "partonomy/rng.hpp"

namespace partonomy::genpipe {

using nlohmann::json;

namespace {

double sigmoid(double z) {
  if (z >= 0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-y z)) for y in {0, 1} mapped to -1/+1.
double log_loss(double z, double label) {
  const double m = label > 0.5 ? -z : z;
  return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

struct Sample {
  std::vector<std::size_t> active;
  double label = 0.0;
};

class TargetProblem {
 public:
  TargetProblem(std::vector<Sample> samples, std::size_t dim, double l2)
      : samples_(std::move(samples)), dim_(dim), l2_(l2) {}

  double margin(const Sample& s, const std::vector<double>& w) const {
    double z = w[dim_];
    for (auto j : s.active) {
      z += w[j];
    }
    return z;
  }

  double loss(const std::vector<double>& w) const {
    double sum = 0.0;
    for (const auto& s : samples_) {
      sum += log_loss(margin(s, w), s.label);
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      reg += w[j] * w[j];
    }
    const double data = samples_.empty() ? 0.0 : sum / static_cast<double>(samples_.size());
    return data + 0.5 * l2_ * reg;
  }

  void gradient(const std::vector<double>& w, std::vector<double>& g) const {
    std::fill(g.begin(), g.end(), 0.0);
    if (!samples_.empty()) {
      const double inv_n = 1.0 / static_cast<double>(samples_.size());
      for (const auto& s : samples_) {
        const double r = (sigmoid(margin(s, w)) - s.label) * inv_n;
        for (auto j : s.active) {
          g[j] += r;
        }
        g[dim_] += r;
      }
    }
    for (std::size_t j = 0; j < dim_; ++j) {
      g[j] += l2_ * w[j];
    }
  }

 private:
  std::vector<Sample> samples_;
  std::size_t dim_;
  double l2_;
};

}  // namespace

CooccurrenceModel::CooccurrenceModel(std::vector<std::string> vocabulary,
                                     std::vector<std::vector<double>> weights,
                                     std::vector<std::string> degenerate)
    : vocabulary_(std::move(vocabulary)), weights_(std::move(weights)),
      degenerate_(std::move(degenerate)) {
  if (!std::is_sorted(vocabulary_.begin(), vocabulary_.end()) ||
      std::adjacent_find(vocabulary_.begin(), vocabulary_.end()) != vocabulary_.end()) {
    throw SchemaViolation("cooccurrence", "vocabulary must be sorted and unique");
  }
  if (weights_.size() != vocabulary_.size()) {
    throw SchemaViolation("cooccurrence", "expected one weight row per vocabulary entry");
  }
  for (const auto& row : weights_) {
    if (row.size() != vocabulary_.size() + 1) {
      throw SchemaViolation("cooccurrence", "weight rows must have vocabulary size + 1 entries");
    }
    for (double w : row) {
      if (!std::isfinite(w)) {
        throw SchemaViolation("cooccurrence", "weights must be finite");
      }
    }
  }
}

std::optional<std::size_t> CooccurrenceModel::index_of(std::string_view label) const {
  auto it = std::lower_bound(vocabulary_.begin(), vocabulary_.end(), label);
  if (it == vocabulary_.end() || *it != label) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(it - vocabulary_.begin());
}

std::vector<std::size_t> CooccurrenceModel::indices_of(const PartSet& parts) const {
  std::vector<std::size_t> out;
  out.reserve(parts.size());
  for (const auto& p : parts) {
    if (auto idx = index_of(p)) {
      out.push_back(*idx);
    }
  }
  return out;
}

double CooccurrenceModel::score(std::size_t target, std::span<const std::size_t> active) const {
  const auto& w = weights_[target];
  double z = w.back();
  for (auto j : active) {
    z += w[j];
  }
  return sigmoid(z);
}

CooccurrenceModel train_cooccurrence(const std::vector<PartSet>& part_sets,
                                     const CooccurrenceConfig& config, TrainingTrace* trace) {
  PartSet all;
  for (const auto& s : part_sets) {
    all.insert(s.begin(), s.end());
  }
  if (all.size() < 2) {
    throw DegenerateData("co-occurrence training needs at least two distinct parts, got " +
                         std::to_string(all.size()));
  }
  std::vector<std::string> vocabulary(all.begin(), all.end());
  const std::size_t V = vocabulary.size();

  // Sets as sorted vocabulary indices.
  std::vector<std::vector<std::size_t>> encoded;
  encoded.reserve(part_sets.size());
  for (const auto& s : part_sets) {
    std::vector<std::size_t> idx;
    for (const auto& p : s) {
      idx.push_back(static_cast<std::size_t>(
          std::lower_bound(vocabulary.begin(), vocabulary.end(), p) - vocabulary.begin()));
    }
    encoded.push_back(std::move(idx));
  }

  std::vector<std::vector<double>> weights(V, std::vector<double>(V + 1, 0.0));
  std::vector<std::string> degenerate;
  if (trace) {
    trace->losses.assign(V, {});
  }

  for (std::size_t p = 0; p < V; ++p) {
    std::vector<std::size_t> with;
    std::vector<std::size_t> without;
    for (std::size_t s = 0; s < encoded.size(); ++s) {
      const auto& e = encoded[s];
      (std::binary_search(e.begin(), e.end(), p) ? with : without).push_back(s);
    }
    if (with.empty() || without.empty()) {
      degenerate.push_back(vocabulary[p]);
      spdlog::debug("stage=train-cooc part=\"{}\" degenerate ({} of {} sets)", vocabulary[p],
                    with.size(), encoded.size());
      continue;
    }

    Rng rng(derive_seed(config.seed, vocabulary[p]));
    std::vector<Sample> samples;
    samples.reserve(2 * with.size());
    for (auto s : with) {
      Sample pos;
      for (auto j : encoded[s]) {
        if (j != p) {
          pos.active.push_back(j);
        }
      }
      pos.label = 1.0;
      samples.push_back(std::move(pos));
      samples.push_back(Sample{encoded[without[rng.uniform_index(without.size())]], 0.0});
    }

    TargetProblem problem(std::move(samples), V, config.l2);
    auto& w = weights[p];
    std::vector<double> g(V + 1, 0.0);
    if (trace) {
      trace->losses[p].push_back(problem.loss(w));
    }
    for (int it = 0; it < config.max_iters; ++it) {
      problem.gradient(w, g);
      double gmax = 0.0;
      for (double v : g) {
        gmax = std::max(gmax, std::abs(v));
      }
      if (gmax < config.tolerance) {
        break;
      }
      for (std::size_t j = 0; j <= V; ++j) {
        w[j] -= config.learning_rate * g[j];
      }
      if (trace) {
        trace->losses[p].push_back(problem.loss(w));
      }
    }
  }
  return CooccurrenceModel(std::move(vocabulary), std::move(weights), std::move(degenerate));
}

std::vector<RankedPart> predict_likely_parts(const CooccurrenceModel& model, const PartSet& current,
                                             std::size_t k, const PartSet& exclude) {
  if (k == 0) {
    return {};
  }
  for (const auto& p : current) {
    if (!model.index_of(p)) {
      spdlog::warn("stage=predict part=\"{}\" not in co-occurrence vocabulary; ignored", p);
    }
  }
  const auto active = model.indices_of(current);
  std::vector<RankedPart> ranked;
  const auto& vocab = model.vocabulary();
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    if (current.count(vocab[t]) || exclude.count(vocab[t])) {
      continue;
    }
    ranked.push_back(RankedPart{vocab[t], model.score(t, active)});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedPart& a, const RankedPart& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return a.label < b.label;
  });
  if (ranked.size() > k) {
    ranked.resize(k);
  }
  return ranked;
}

json cooccurrence_to_json(const CooccurrenceModel& model) {
  json rows = json::array();
  for (std::size_t t = 0; t < model.size(); ++t) {
    const auto w = model.weights(t);
    rows.push_back(std::vector<double>(w.begin(), w.end()));
  }
  return json{{"vocabulary", model.vocabulary()},
              {"weights", rows},
              {"degenerate", model.degenerate()}};
}

CooccurrenceModel cooccurrence_from_json(const json& j) {
  try {
    auto vocab = j.at("vocabulary").get<std::vector<std::string>>();
    auto weights = j.at("weights").get<std::vector<std::vector<double>>>();
    std::vector<std::string> degenerate;
    if (j.contains("degenerate")) {
      degenerate = j.at("degenerate").get<std::vector<std::string>>();
    }
    return CooccurrenceModel(std::move(vocab), std::move(weights), std::move(degenerate));
  } catch (const json::exception& e) {
    throw SchemaViolation("cooccurrence", e.what());
  }
}

}  // namespace partonomy::genpipe
