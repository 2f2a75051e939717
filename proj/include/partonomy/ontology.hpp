#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "partonomy/maskio.hpp"

namespace partonomy {

// Canonical part labels, always kept in lexicographic order.
using PartSet = std::set<std::string>;

PartSet shared_parts(const PartSet& a, const PartSet& b);
PartSet part_difference(const PartSet& a, const PartSet& b);

// Raw part string -> canonical label. Chains (a -> b -> c) are resolved at
// construction so every value is a fixed point.
class SynonymTable {
 public:
  SynonymTable() = default;
  // Throws SchemaViolation on cycles or empty entries.
  explicit SynonymTable(const std::map<std::string, std::string>& raw);

  // `key` must already be whitespace/case normalized.
  std::string_view resolve(std::string_view key) const;

  const std::map<std::string, std::string, std::less<>>& entries() const noexcept {
    return table_;
  }

 private:
  std::map<std::string, std::string, std::less<>> table_;
};

// Trim, lowercase, collapse interior whitespace. Throws EmptyLabel.
std::string normalize_label(std::string_view raw);

// normalize_label followed by synonym lookup. Idempotent.
std::string normalize_part_label(std::string_view raw, const SynonymTable& synonyms);

struct Ontology {
  std::vector<std::string> categories;                // sorted
  std::map<std::string, std::string> object_category;  // object -> category
  std::map<std::string, PartSet> object_parts;         // object -> canonical parts
  SynonymTable synonyms;

  bool has_object(const std::string& label) const { return object_category.count(label) > 0; }
  const PartSet& parts_of(const std::string& object) const;
  std::vector<std::string> objects_in(const std::string& category) const;
  // Union of the part sets of every object in the category.
  PartSet category_parts(const std::string& category) const;
  PartSet all_parts() const;
  std::size_t binding_count() const;
};

Ontology ontology_from_json(const nlohmann::json& j);
nlohmann::json ontology_to_json(const Ontology& ontology);
Ontology load_ontology(const std::filesystem::path& path);

struct PartInstance {
  std::string label;
  std::optional<std::array<double, 4>> bbox;  // x, y, w, h
  std::map<std::string, maskio::MaskRle> parts;

  PartSet part_labels() const;
  std::uint64_t total_area() const noexcept;
};

struct ImageEntry {
  std::string id;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<PartInstance> instances;
};

struct PartDataset {
  std::vector<ImageEntry> images;

  std::size_t mask_count() const noexcept;
};

enum class DatasetFormat { coco_parts, partonomy_native };

std::optional<DatasetFormat> parse_dataset_format(std::string_view name);

// Throws MalformedFile (with byte offset) or SchemaViolation (with record id).
PartDataset load_part_dataset(const std::filesystem::path& path, DatasetFormat format);
PartDataset dataset_from_native_json(const nlohmann::json& j);
PartDataset dataset_from_coco_json(const nlohmann::json& j);
nlohmann::json dataset_to_json(const PartDataset& ds);

// Reads a JSON document, mapping parser failures to MalformedFile.
nlohmann::json read_json_file(const std::filesystem::path& path);

// Normalizes object and part labels; parts that collapse onto the same
// canonical label are merged by mask union.
PartDataset canonicalize_labels(const PartDataset& ds, const SynonymTable& synonyms);

// Human-readable list of instance parts the ontology does not know about.
std::vector<std::string> find_ontology_violations(const PartDataset& ds, const Ontology& ontology);

// Annotation count per (object label, part label) across the dataset.
std::map<std::pair<std::string, std::string>, std::size_t> binding_counts(const PartDataset& ds);

// Drops every (object, part) binding with fewer than m annotations. m must be >= 1.
PartDataset prune_rare_parts(const PartDataset& ds, std::size_t m);

// Index of the instance with most annotated parts, then largest mask area, then lowest index.
std::size_t select_primary_instance_index(const ImageEntry& entry);
const PartInstance& select_primary_instance(const ImageEntry& entry);

struct SplitSpec {
  double ratio = 0.8;
  std::uint64_t seed = 42;
};

// Partition by image id. Images are ranked by a seeded hash of their id and the
// first round(ratio * n) go to train, so the split size is exact and stable.
std::pair<PartDataset, PartDataset> split_dataset(const PartDataset& ds, const SplitSpec& split);

struct DatasetStats {
  std::size_t objects = 0;
  std::size_t parts = 0;
  std::size_t bindings = 0;
  std::size_t images = 0;
  std::size_t masks = 0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

DatasetStats compute_stats(const PartDataset& ds);

}  // namespace partonomy
