#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace partonomy::genpipe {

// Precomputed label embeddings, all of one dimension with non-zero norm.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  // Throws SchemaViolation on mixed dimensions, zero or non-finite vectors.
  explicit EmbeddingTable(std::map<std::string, std::vector<double>> vectors);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  bool contains(const std::string& label) const { return vectors_.count(label) > 0; }
  const std::vector<double>& vector(const std::string& label) const;
  const std::map<std::string, std::vector<double>>& entries() const noexcept { return vectors_; }

  double cosine(const std::string& a, const std::string& b) const;

 private:
  std::map<std::string, std::vector<double>> vectors_;
  std::map<std::string, double> norms_;
  std::size_t dimension_ = 0;
};

// JSONL, one {"label": str, "vector": [floats]} per line. Labels are normalized.
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// The `count` labels most cosine-similar to gt_label (excluding it), ties broken
// lexicographically. Throws MissingEmbedding if gt_label is absent or too few
// other labels exist.
std::vector<std::string> object_distractors(const std::string& gt_label, const EmbeddingTable& table,
                                            std::size_t count = 4);

}  // namespace partonomy::genpipe
