#include "partonomy/plumref.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "partonomy/errors.hpp"
#include "partonomy/rng.hpp"

namespace partonomy::plumref {

TagSequence parse_tags(std::string_view text) {
  TagSequence tags;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i])));
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      continue;
    }
    switch (c) {
      case 'B': tags.push_back(Tag::B); break;
      case 'I': tags.push_back(Tag::I); break;
      case 'O': tags.push_back(Tag::O); break;
      default:
        throw SchemaViolation("tags", "unexpected character '" + std::string(1, text[i]) +
                                          "' at " + std::to_string(i));
    }
  }
  return tags;
}

std::string format_tags(const TagSequence& tags) {
  std::string out;
  for (Tag t : tags) {
    out.push_back(t == Tag::B ? 'B' : t == Tag::I ? 'I' : 'O');
  }
  return out;
}

std::vector<Span> merge_bio_spans(const TagSequence& tags, BioMode mode) {
  std::vector<Span> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case Tag::B:
        spans.push_back({i, i});
        open = true;
        break;
      case Tag::I:
        if (open) {
          spans.back().end = i;
        } else if (mode == BioMode::repair) {
          spans.push_back({i, i});
          open = true;
        }
        break;
      case Tag::O:
        open = false;
        break;
    }
  }
  return spans;
}

LossGrad span_ce_loss(const Logits& logits, const TagSequence& gold) {
  if (logits.size() != gold.size()) {
    throw ShapeMismatch("span_ce_loss: " + std::to_string(logits.size()) + " logit rows, " +
                        std::to_string(gold.size()) + " tags");
  }
  if (logits.empty()) {
    throw ShapeMismatch("span_ce_loss: empty sequence");
  }
  const auto n = static_cast<double>(logits.size());
  LossGrad out;
  out.grad.resize(logits.size() * 3);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& row = logits[i];
    const double mx = std::max({row[0], row[1], row[2]});
    double z = 0.0;
    for (double v : row) {
      z += std::exp(v - mx);
    }
    const double log_z = mx + std::log(z);
    const auto g = static_cast<std::size_t>(gold[i]);
    out.loss += (log_z - row[g]) / n;
    for (std::size_t k = 0; k < 3; ++k) {
      const double p = std::exp(row[k] - log_z);
      out.grad[i * 3 + k] = (p - (k == g ? 1.0 : 0.0)) / n;
    }
  }
  return out;
}

std::vector<std::vector<double>> mean_pool_spans(const std::vector<std::vector<double>>& tokens,
                                                 const std::vector<Span>& spans) {
  if (spans.empty()) {
    throw EmptySpans("mean_pool_spans: no spans");
  }
  std::vector<std::vector<double>> pooled;
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= tokens.size()) {
      throw ShapeMismatch("mean_pool_spans: span (" + std::to_string(s.start) + ", " +
                          std::to_string(s.end) + ") outside " + std::to_string(tokens.size()) +
                          " tokens");
    }
    std::vector<double> acc(tokens[s.start].size(), 0.0);
    for (std::size_t i = s.start; i <= s.end; ++i) {
      if (tokens[i].size() != acc.size()) {
        throw ShapeMismatch("mean_pool_spans: ragged token embeddings");
      }
      for (std::size_t d = 0; d < acc.size(); ++d) {
        acc[d] += tokens[i][d];
      }
    }
    const auto len = static_cast<double>(s.end - s.start + 1);
    for (double& v : acc) {
      v /= len;
    }
    pooled.push_back(std::move(acc));
  }
  return pooled;
}

LossGrad gaussian_kl_penalty(const std::vector<std::vector<double>>& spans,
                             const std::vector<std::vector<double>>& teacher, double sigma) {
  if (spans.empty()) {
    throw EmptySpans("gaussian_kl_penalty: no spans");
  }
  if (spans.size() != teacher.size()) {
    throw ShapeMismatch("gaussian_kl_penalty: " + std::to_string(spans.size()) + " spans, " +
                        std::to_string(teacher.size()) + " teacher embeddings");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorKind::invalid, "gaussian_kl_penalty: sigma must be positive");
  }
  const auto n = static_cast<double>(spans.size());
  const double var = sigma * sigma;
  LossGrad out;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    if (spans[s].size() != teacher[s].size() || spans[s].size() != spans[0].size()) {
      throw ShapeMismatch("gaussian_kl_penalty: dimension mismatch at span " + std::to_string(s));
    }
    for (std::size_t d = 0; d < spans[s].size(); ++d) {
      const double diff = spans[s][d] - teacher[s][d];
      out.loss += diff * diff / (2.0 * var * n);
      out.grad.push_back(diff / (n * var));
    }
  }
  return out;
}

namespace {

void check_probability_map(const ProbabilityMap& pred, const maskio::BinaryMask& gt,
                           const char* who) {
  if (pred.height != gt.height() || pred.width != gt.width() ||
      pred.data.size() != static_cast<std::size_t>(pred.height) * pred.width) {
    throw DimensionMismatch(std::string(who) + ": prediction " + std::to_string(pred.height) + "x" +
                            std::to_string(pred.width) + ", mask " + std::to_string(gt.height()) +
                            "x" + std::to_string(gt.width()));
  }
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p = pred.data[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ProbabilityOutOfRange(std::string(who) + ": pixel " + std::to_string(i) + " = " +
                                  std::to_string(p));
    }
  }
}

}  // namespace

LossGrad focal_tversky_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt,
                            const TverskyParams& params) {
  check_probability_map(pred, gt, "focal_tversky_loss");
  if (!(params.alpha >= 0.0) || !(params.beta >= 0.0) || !(params.gamma >= 1.0) ||
      !(params.smooth >= 0.0)) {
    throw Error(ErrorKind::invalid, "focal_tversky_loss: need alpha, beta, smooth >= 0 and gamma >= 1");
  }
  const auto& g = gt.data();
  double tp = 0.0;
  double fn = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double p = pred.data[i];
    tp += p * g[i];
    fn += (1.0 - p) * g[i];
    fp += p * (1.0 - g[i]);
  }
  const double num = tp + params.smooth;
  const double den = tp + params.alpha * fn + params.beta * fp + params.smooth;
  if (den == 0.0) {
    // empty mask, empty prediction and no smoothing: treat as a perfect match
    return {0.0, std::vector<double>(g.size(), 0.0)};
  }
  const double ti = num / den;
  const double base = std::max(0.0, 1.0 - ti);
  LossGrad out;
  out.loss = std::pow(base, params.gamma);
  const double outer = base > 0.0 ? -params.gamma * std::pow(base, params.gamma - 1.0) : 0.0;
  out.grad.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i];
    const double dnum = gi;
    const double dden = gi - params.alpha * gi + params.beta * (1.0 - gi);
    out.grad[i] = outer * (dnum * den - num * dden) / (den * den);
  }
  return out;
}

LossGrad dice_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt, double smooth,
                   double scale) {
  check_probability_map(pred, gt, "dice_loss");
  const auto& g = gt.data();
  double inter = 0.0;
  double psum = 0.0;
  double gsum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    inter += pred.data[i] * g[i];
    psum += pred.data[i];
    gsum += g[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = psum + gsum + smooth;
  if (den == 0.0) {
    return {0.0, std::vector<double>(g.size(), 0.0)};
  }
  LossGrad out;
  out.loss = scale * (1.0 - num / den);
  out.grad.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.grad[i] = -scale * (2.0 * g[i] * den - num) / (den * den);
  }
  return out;
}

LossGrad bce_loss(const ProbabilityMap& pred, const maskio::BinaryMask& gt, double eps) {
  check_probability_map(pred, gt, "bce_loss");
  const auto& g = gt.data();
  if (g.empty()) {
    throw EmptyInput("bce_loss: empty mask");
  }
  const auto n = static_cast<double>(g.size());
  LossGrad out;
  out.grad.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double raw = pred.data[i];
    const double p = std::clamp(raw, eps, 1.0 - eps);
    const double gi = g[i];
    out.loss -= (gi * std::log(p) + (1.0 - gi) * std::log(1.0 - p)) / n;
    // the clamp is flat outside (eps, 1 - eps)
    out.grad[i] = (raw > eps && raw < 1.0 - eps) ? (-gi / p + (1.0 - gi) / (1.0 - p)) / n : 0.0;
  }
  return out;
}

void LossWeights::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) {
      throw ConfigError(std::string("loss weights: ") + msg);
    }
  };
  need(span >= 0.0 && kl >= 0.0 && seg >= 0.0 && bce >= 0.0, "lambda weights must be non-negative");
  need(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0, "alpha and beta must lie in (0, 1)");
  need(gamma >= 1.0, "gamma must be >= 1");
  need(sigma > 0.0, "sigma must be positive");
  need(smooth >= 0.0, "smooth must be non-negative");
  need(dice_scale > 0.0, "dice_scale must be positive");
  for (double v : {span, kl, seg, bce, alpha, beta, gamma, sigma, smooth, dice_scale}) {
    need(std::isfinite(v), "weights must be finite");
  }
}

namespace {

struct WeightField {
  const char* key;
  double LossWeights::*member;
};

constexpr WeightField kWeightFields[] = {
    {"lambda_span", &LossWeights::span}, {"lambda_kl", &LossWeights::kl},
    {"lambda_seg", &LossWeights::seg},   {"lambda_bce", &LossWeights::bce},
    {"alpha", &LossWeights::alpha},      {"beta", &LossWeights::beta},
    {"gamma", &LossWeights::gamma},      {"sigma", &LossWeights::sigma},
    {"smooth", &LossWeights::smooth},    {"dice_scale", &LossWeights::dice_scale},
};

}  // namespace

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("loss weights: expected an object");
  }
  LossWeights w;
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(std::begin(kWeightFields), std::end(kWeightFields),
                           [&](const WeightField& f) { return key == f.key; });
    if (it == std::end(kWeightFields)) {
      throw ConfigError("loss weights: unknown key \"" + key + "\"");
    }
    if (!value.is_number()) {
      throw ConfigError("loss weights: \"" + key + "\" must be a number");
    }
    w.*(it->member) = value.get<double>();
  }
  w.validate();
  return w;
}

nlohmann::json loss_weights_to_json(const LossWeights& w) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : kWeightFields) {
    j[f.key] = w.*(f.member);
  }
  return j;
}

double combined_objective(const LossComponents& l, const LossWeights& w) {
  for (double v : {l.lm, l.span, l.kl, l.seg, l.bce}) {
    if (!std::isfinite(v)) {
      throw NonFiniteInput("combined_objective: non-finite component loss");
    }
  }
  for (double v : {w.span, w.kl, w.seg, w.bce}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw NonFiniteInput("combined_objective: weights must be finite and non-negative");
    }
  }
  return l.lm + w.span * l.span + w.kl * l.kl + w.seg * l.seg + w.bce * l.bce;
}

namespace {

void require_finite(const std::vector<double>& v, const char* who) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NonFiniteInput(std::string(who) + ": non-finite entry");
    }
  }
}

void require_shape(const FeatureMap& m, const char* who) {
  if (m.data.size() != m.channels * m.height * m.width) {
    throw ShapeMismatch(std::string(who) + ": data size does not match C*H*W");
  }
}

}  // namespace

FeatureMap film_modulate(const FeatureMap& x, std::span<const double> gamma,
                         std::span<const double> beta) {
  require_shape(x, "film_modulate");
  if (gamma.size() != x.channels || beta.size() != x.channels) {
    throw ShapeMismatch("film_modulate: " + std::to_string(x.channels) + " channels, gamma " +
                        std::to_string(gamma.size()) + ", beta " + std::to_string(beta.size()));
  }
  require_finite(x.data, "film_modulate");
  FeatureMap y(x.channels, x.height, x.width);
  const std::size_t plane = x.height * x.width;
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      y.data[c * plane + i] = gamma[c] * x.data[c * plane + i] + beta[c];
    }
  }
  return y;
}

FilmGrads film_backward(const FeatureMap& x, std::span<const double> gamma,
                        const FeatureMap& upstream) {
  if (!x.same_shape(upstream) || gamma.size() != x.channels) {
    throw ShapeMismatch("film_backward: shape mismatch");
  }
  FilmGrads g{FeatureMap(x.channels, x.height, x.width), std::vector<double>(x.channels, 0.0),
              std::vector<double>(x.channels, 0.0)};
  const std::size_t plane = x.height * x.width;
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double u = upstream.data[c * plane + i];
      g.dx.data[c * plane + i] = gamma[c] * u;
      g.dgamma[c] += u * x.data[c * plane + i];
      g.dbeta[c] += u;
    }
  }
  return g;
}

namespace {

void check_stack(std::span<const FeatureMap> stack, const FeatureMap& query, const char* who) {
  if (stack.empty()) {
    throw EmptyStack(std::string(who) + ": empty stack");
  }
  require_shape(query, who);
  if (query.channels == 0) {
    throw ShapeMismatch(std::string(who) + ": zero channels");
  }
  require_finite(query.data, who);
  for (std::size_t k = 0; k < stack.size(); ++k) {
    if (!stack[k].same_shape(query)) {
      throw ShapeMismatch(std::string(who) + ": stack map " + std::to_string(k) +
                          " does not match the query shape");
    }
    require_shape(stack[k], who);
    require_finite(stack[k].data, who);
  }
}

// Softmax weights over the stack at one pixel.
std::vector<double> pixel_weights(std::span<const FeatureMap> stack, const FeatureMap& query,
                                  std::size_t pixel) {
  const std::size_t plane = query.height * query.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.channels));
  std::vector<double> w(stack.size());
  for (std::size_t k = 0; k < stack.size(); ++k) {
    double dot = 0.0;
    for (std::size_t c = 0; c < query.channels; ++c) {
      dot += query.data[c * plane + pixel] * stack[k].data[c * plane + pixel];
    }
    w[k] = dot * scale;
  }
  const double mx = *std::max_element(w.begin(), w.end());
  double z = 0.0;
  for (double& v : w) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : w) {
    v /= z;
  }
  return w;
}

}  // namespace

FeatureMap attention_pool_stack(std::span<const FeatureMap> stack, const FeatureMap& query) {
  check_stack(stack, query, "attention_pool_stack");
  FeatureMap out(query.channels, query.height, query.width);
  const std::size_t plane = query.height * query.width;
  for (std::size_t p = 0; p < plane; ++p) {
    const auto w = pixel_weights(stack, query, p);
    for (std::size_t c = 0; c < query.channels; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < stack.size(); ++k) {
        acc += w[k] * stack[k].data[c * plane + p];
      }
      out.data[c * plane + p] = acc;
    }
  }
  return out;
}

PoolGrads attention_pool_backward(std::span<const FeatureMap> stack, const FeatureMap& query,
                                  const FeatureMap& upstream) {
  check_stack(stack, query, "attention_pool_backward");
  if (!upstream.same_shape(query)) {
    throw ShapeMismatch("attention_pool_backward: upstream shape mismatch");
  }
  const std::size_t plane = query.height * query.width;
  const std::size_t channels = query.channels;
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  PoolGrads g;
  g.dstack.assign(stack.size(), FeatureMap(channels, query.height, query.width));
  g.dquery = FeatureMap(channels, query.height, query.width);
  std::vector<double> a(stack.size());
  for (std::size_t p = 0; p < plane; ++p) {
    const auto w = pixel_weights(stack, query, p);
    double mean_a = 0.0;
    for (std::size_t k = 0; k < stack.size(); ++k) {
      a[k] = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        a[k] += upstream.data[c * plane + p] * stack[k].data[c * plane + p];
      }
      mean_a += w[k] * a[k];
    }
    for (std::size_t k = 0; k < stack.size(); ++k) {
      const double ds = w[k] * (a[k] - mean_a);
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = c * plane + p;
        g.dstack[k].data[idx] = w[k] * upstream.data[idx] + ds * scale * query.data[idx];
        g.dquery.data[idx] += ds * scale * stack[k].data[idx];
      }
    }
  }
  return g;
}

double finite_diff_grad_check(const GradFunction& f, const std::vector<double>& x, double eps) {
  if (!(eps > 0.0)) {
    throw Error(ErrorKind::invalid, "finite_diff_grad_check: eps must be positive");
  }
  const auto analytic = f(x).grad;
  if (analytic.size() != x.size()) {
    throw ShapeMismatch("finite_diff_grad_check: gradient has " + std::to_string(analytic.size()) +
                        " entries for " + std::to_string(x.size()) + " inputs");
  }
  double worst = 0.0;
  auto probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe).loss;
    probe[i] = x[i] - eps;
    const double down = f(probe).loss;
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(numeric - analytic[i]) / (std::abs(analytic[i]) + 1e-12));
  }
  return worst;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) {
    x = rng.normal();
  }
  return v;
}

// Probabilities kept away from 0 and 1 so the probes stay inside the domain.
std::vector<double> interior_probs(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) {
    x = 0.05 + 0.9 * rng.uniform01();
  }
  return v;
}

maskio::BinaryMask random_mask(Rng& rng, std::uint32_t h, std::uint32_t w) {
  maskio::BinaryMask m(h, w);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      m.set(y, x, rng.uniform_index(2) == 1);
    }
  }
  return m;
}

TagSequence random_tags(Rng& rng, std::size_t n) {
  TagSequence t(n);
  for (auto& tag : t) {
    tag = static_cast<Tag>(rng.uniform_index(3));
  }
  return t;
}

FeatureMap map_from(std::size_t c, std::size_t h, std::size_t w, std::vector<double> data) {
  FeatureMap m(c, h, w);
  m.data = std::move(data);
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

using Trial = std::function<double(Rng&)>;

struct Check {
  std::string name;
  Trial trial;
};

std::vector<Check> build_checks(const LossWeights& weights) {
  std::vector<Check> checks;

  checks.push_back({"span_ce_loss", [](Rng& rng) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const auto gold = random_tags(rng, n);
    const auto x = normals(rng, n * 3);
    return finite_diff_grad_check(
        [&](const std::vector<double>& v) {
          Logits logits(n);
          for (std::size_t i = 0; i < n; ++i) {
            logits[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
          }
          return span_ce_loss(logits, gold);
        },
        x, 1e-5);
  }});

  checks.push_back({"gaussian_kl_penalty", [sigma = weights.sigma](Rng& rng) {
    const std::size_t spans = 1 + rng.uniform_index(4);
    const std::size_t dim = 2 + rng.uniform_index(6);
    std::vector<std::vector<double>> teacher(spans);
    for (auto& t : teacher) {
      t = normals(rng, dim);
    }
    const auto x = normals(rng, spans * dim);
    return finite_diff_grad_check(
        [&](const std::vector<double>& v) {
          std::vector<std::vector<double>> h(spans);
          for (std::size_t s = 0; s < spans; ++s) {
            h[s].assign(v.begin() + static_cast<std::ptrdiff_t>(s * dim),
                        v.begin() + static_cast<std::ptrdiff_t>((s + 1) * dim));
          }
          return gaussian_kl_penalty(h, teacher, sigma);
        },
        x, 1e-5);
  }});

  auto pixel_check = [](auto loss) {
    return [loss](Rng& rng) {
      const auto h = static_cast<std::uint32_t>(2 + rng.uniform_index(4));
      const auto w = static_cast<std::uint32_t>(2 + rng.uniform_index(4));
      const auto gt = random_mask(rng, h, w);
      const auto x = interior_probs(rng, static_cast<std::size_t>(h) * w);
      return finite_diff_grad_check(
          [&](const std::vector<double>& v) { return loss(ProbabilityMap{h, w, v}, gt); }, x, 1e-6);
    };
  };

  const auto tversky = weights.tversky();
  checks.push_back({"focal_tversky_loss", pixel_check([tversky](const ProbabilityMap& p, const maskio::BinaryMask& g) {
                      return focal_tversky_loss(p, g, tversky);
                    })});
  checks.push_back({"bce_loss", pixel_check([](const ProbabilityMap& p, const maskio::BinaryMask& g) {
                      return bce_loss(p, g);
                    })});
  checks.push_back({"dice_loss", pixel_check([s = weights.smooth, k = weights.dice_scale](
                                                       const ProbabilityMap& p, const maskio::BinaryMask& g) {
                      return dice_loss(p, g, s, k);
                    })});

  checks.push_back({"film_modulate", [](Rng& rng) {
    const std::size_t c = 1 + rng.uniform_index(4);
    const std::size_t h = 1 + rng.uniform_index(3);
    const std::size_t w = 1 + rng.uniform_index(3);
    const std::size_t n = c * h * w;
    const auto upstream = map_from(c, h, w, normals(rng, n));
    // inputs: x, then gamma, then beta
    const auto x = normals(rng, n + 2 * c);
    return finite_diff_grad_check(
        [&](const std::vector<double>& v) {
          const auto fm = map_from(c, h, w, {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)});
          const std::span<const double> gamma(v.data() + n, c);
          const std::span<const double> beta(v.data() + n + c, c);
          const auto y = film_modulate(fm, gamma, beta);
          const auto g = film_backward(fm, gamma, upstream);
          LossGrad out{dot(y.data, upstream.data), g.dx.data};
          out.grad.insert(out.grad.end(), g.dgamma.begin(), g.dgamma.end());
          out.grad.insert(out.grad.end(), g.dbeta.begin(), g.dbeta.end());
          return out;
        },
        x, 1e-5);
  }});

  checks.push_back({"attention_pool_stack", [](Rng& rng) {
    const std::size_t k = 1 + rng.uniform_index(4);
    const std::size_t c = 1 + rng.uniform_index(4);
    const std::size_t h = 1 + rng.uniform_index(3);
    const std::size_t w = 1 + rng.uniform_index(3);
    const std::size_t n = c * h * w;
    const auto upstream = map_from(c, h, w, normals(rng, n));
    // inputs: the k stack maps, then the query
    const auto x = normals(rng, (k + 1) * n);
    return finite_diff_grad_check(
        [&](const std::vector<double>& v) {
          std::vector<FeatureMap> stack;
          for (std::size_t i = 0; i < k; ++i) {
            stack.push_back(map_from(c, h, w, {v.begin() + static_cast<std::ptrdiff_t>(i * n),
                                               v.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)}));
          }
          const auto query = map_from(c, h, w, {v.begin() + static_cast<std::ptrdiff_t>(k * n), v.end()});
          const auto y = attention_pool_stack(stack, query);
          const auto g = attention_pool_backward(stack, query, upstream);
          LossGrad out{dot(y.data, upstream.data), {}};
          for (const auto& ds : g.dstack) {
            out.grad.insert(out.grad.end(), ds.data.begin(), ds.data.end());
          }
          out.grad.insert(out.grad.end(), g.dquery.data.begin(), g.dquery.data.end());
          return out;
        },
        x, 1e-5);
  }});

  return checks;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::size_t trials, std::uint64_t seed,
                                                 const LossWeights& weights) {
  weights.validate();
  std::vector<GradCheckResult> results;
  for (const auto& check : build_checks(weights)) {
    GradCheckResult r;
    r.name = check.name;
    r.trials = trials;
    r.threshold = 1e-4;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, check.name, t));
      r.max_error = std::max(r.max_error, check.trial(rng));
    }
    r.passed = r.max_error < r.threshold;
    results.push_back(r);
  }
  return results;
}

}  // namespace partonomy::plumref
