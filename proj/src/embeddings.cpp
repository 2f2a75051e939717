#include "partonomy/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "partonomy/errors.hpp"
#include "partonomy/ontology.hpp"

namespace partonomy::genpipe {

EmbeddingTable::EmbeddingTable(std::map<std::string, std::vector<double>> vectors)
    : vectors_(std::move(vectors)) {
  bool first = true;
  for (const auto& [label, v] : vectors_) {
    if (first) {
      dimension_ = v.size();
      first = false;
    }
    if (v.size() != dimension_ || v.empty()) {
      throw SchemaViolation("embedding " + label, "dimension " + std::to_string(v.size()) +
                                                      " differs from " + std::to_string(dimension_));
    }
    double sq = 0.0;
    for (double x : v) {
      if (!std::isfinite(x)) {
        throw SchemaViolation("embedding " + label, "non-finite component");
      }
      sq += x * x;
    }
    if (sq == 0.0) {
      throw SchemaViolation("embedding " + label, "zero-norm vector");
    }
    norms_[label] = std::sqrt(sq);
  }
}

const std::vector<double>& EmbeddingTable::vector(const std::string& label) const {
  auto it = vectors_.find(label);
  if (it == vectors_.end()) {
    throw MissingEmbedding("no embedding for \"" + label + "\"");
  }
  return it->second;
}

double EmbeddingTable::cosine(const std::string& a, const std::string& b) const {
  const auto& va = vector(a);
  const auto& vb = vector(b);
  double dot = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
  }
  return dot / (norms_.at(a) * norms_.at(b));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::map<std::string, std::vector<double>> vectors;
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string record = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedFile(record + ": " + e.what(), line_start + e.byte);
    }
    try {
      auto label = normalize_label(j.at("label").get<std::string>());
      auto vec = j.at("vector").get<std::vector<double>>();
      if (!vectors.emplace(label, std::move(vec)).second) {
        throw SchemaViolation(record, "duplicate label \"" + label + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaViolation(record, e.what());
    }
  }
  return EmbeddingTable(std::move(vectors));
}

std::vector<std::string> object_distractors(const std::string& gt_label, const EmbeddingTable& table,
                                            std::size_t count) {
  if (!table.contains(gt_label)) {
    throw MissingEmbedding("no embedding for \"" + gt_label + "\"");
  }
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [label, v] : table.entries()) {
    if (label != gt_label) {
      scored.emplace_back(table.cosine(gt_label, label), label);
    }
  }
  if (scored.size() < count) {
    throw MissingEmbedding("need " + std::to_string(count) + " labels besides \"" + gt_label +
                           "\", table has " + std::to_string(scored.size()));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) {
      return a.first > b.first;
    }
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(scored[i].second);
  }
  return out;
}

}  // namespace partonomy::genpipe
