#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "partonomy/maskio.hpp"

namespace partonomy::plumref {

enum class Tag : std::uint8_t { B = 0, I = 1, O = 2 };
using TagSequence = std::vector<Tag>;

// Accepts "BIIOB" or whitespace-separated "B I I O B". Throws SchemaViolation.
TagSequence parse_tags(std::string_view text);
std::string format_tags(const TagSequence& tags);

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  bool operator==(const Span&) const = default;
};

enum class BioMode {
  repair,  // an I with no open span opens one
  strict,  // such an I is dropped
};

std::vector<Span> merge_bio_spans(const TagSequence& tags, BioMode mode = BioMode::repair);

// Gradients are flattened row-major in the shape of the differentiated input.
struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

using Logits = std::vector<std::array<double, 3>>;

// Mean token-level softmax cross-entropy. Throws ShapeMismatch (also for N = 0).
LossGrad span_ce_loss(const Logits& logits, const TagSequence& gold);

// Mean of the token vectors inside each span. Throws EmptySpans, ShapeMismatch.
std::vector<std::vector<double>> mean_pool_spans(const std::vector<std::vector<double>>& tokens,
                                                 const std::vector<Span>& spans);

// (1/N) sum ||h - t||^2 / (2 sigma^2); gradient w.r.t. h.
LossGrad gaussian_kl_penalty(const std::vector<std::vector<double>>& spans,
                             const std::vector<std::vector<double>>& teacher, double sigma = 1.0);

struct ProbabilityMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<double> data;  // row-major, same layout as BinaryMask
};

struct TverskyParams {
  double alpha = 0.7;  // false-negative weight
  double beta = 0.3;   // false-positive weight
  double gamma = 4.0 / 3.0;
  double smooth = 1.0;
};

// Throws DimensionMismatch, ProbabilityOutOfRange, Error(invalid) on bad params.
LossGrad focal_tversky_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt,
                            const TverskyParams& params = {});

// scale * (1 - soft Dice). Fallback segmentation loss.
LossGrad dice_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt, double smooth = 1.0,
                   double scale = 1e3);

inline constexpr double kBceEpsilon = 1e-7;

// Mean per-pixel binary cross-entropy with predictions clamped to [eps, 1 - eps].
LossGrad bce_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt, double eps = kBceEpsilon);

struct LossWeights {
  double span = 2.0;
  double kl = 0.1;
  double seg = 8.0;
  double bce = 2.0;
  double alpha = 0.7;
  double beta = 0.3;
  double gamma = 4.0 / 3.0;
  double sigma = 1.0;
  double smooth = 1.0;
  double dice_scale = 1e3;

  // Throws ConfigError.
  void validate() const;
  TverskyParams tversky() const { return {alpha, beta, gamma, smooth}; }
};

// Missing keys keep their defaults; unknown keys are a ConfigError.
LossWeights loss_weights_from_json(const nlohmann::json& j);
nlohmann::json loss_weights_to_json(const LossWeights& w);

struct LossComponents {
  double lm = 0.0;
  double span = 0.0;
  double kl = 0.0;
  double seg = 0.0;
  double bce = 0.0;
};

// lm + span*w.span + kl*w.kl + seg*w.seg + bce*w.bce. Throws NonFiniteInput.
double combined_objective(const LossComponents& losses, const LossWeights& weights = {});

struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // [c][y][x]

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

// y[c] = gamma[c] * x[c] + beta[c]. Throws ShapeMismatch, NonFiniteInput.
FeatureMap film_modulate(const FeatureMap& x, std::span<const double> gamma,
                         std::span<const double> beta);

struct FilmGrads {
  FeatureMap dx;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

FilmGrads film_backward(const FeatureMap& x, std::span<const double> gamma,
                        const FeatureMap& upstream);

// Per pixel: softmax over k of <query, stack_k> / sqrt(C), then the weighted sum
// of the stack vectors. Throws EmptyStack, ShapeMismatch, NonFiniteInput.
FeatureMap attention_pool_stack(std::span<const FeatureMap> stack, const FeatureMap& query);

struct PoolGrads {
  std::vector<FeatureMap> dstack;
  FeatureMap dquery;
};

PoolGrads attention_pool_backward(std::span<const FeatureMap> stack, const FeatureMap& query,
                                  const FeatureMap& upstream);

using GradFunction = std::function<LossGrad(const std::vector<double>&)>;

// Max over coordinates of |central difference - analytic| / (|analytic| + 1e-12).
double finite_diff_grad_check(const GradFunction& f, const std::vector<double>& x, double eps);

struct GradCheckResult {
  std::string name;
  std::size_t trials = 0;
  double max_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

// Random-input gradient checks for every differentiable piece above.
std::vector<GradCheckResult> run_gradcheck_suite(std::size_t trials = 100, std::uint64_t seed = 42,
                                                 const LossWeights& weights = {});

}  // namespace partonomy::plumref
