#include "partonomy/ontology.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "partonomy/errors.hpp"
#include "partonomy/rng.hpp"

namespace partonomy {

using nlohmann::json;

PartSet shared_parts(const PartSet& a, const PartSet& b) {
  PartSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

PartSet part_difference(const PartSet& a, const PartSet& b) {
  PartSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

std::string normalize_label(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(uc)));
  }
  if (out.empty()) {
    throw EmptyLabel("label is empty after trimming: \"" + std::string(raw) + "\"");
  }
  return out;
}

SynonymTable::SynonymTable(const std::map<std::string, std::string>& raw) {
  std::map<std::string, std::string> direct;
  for (const auto& [from, to] : raw) {
    auto key = normalize_label(from);
    auto value = normalize_label(to);
    if (key != value) {
      direct[key] = value;
    }
  }
  for (const auto& [key, first] : direct) {
    std::string value = first;
    std::set<std::string> seen{key};
    for (auto it = direct.find(value); it != direct.end(); it = direct.find(value)) {
      if (!seen.insert(value).second) {
        throw SchemaViolation("synonyms", "synonym cycle through \"" + key + "\"");
      }
      value = it->second;
    }
    table_.emplace(key, std::move(value));
  }
}

std::string_view SynonymTable::resolve(std::string_view key) const {
  auto it = table_.find(key);
  return it == table_.end() ? key : std::string_view(it->second);
}

std::string normalize_part_label(std::string_view raw, const SynonymTable& synonyms) {
  const auto base = normalize_label(raw);
  return std::string(synonyms.resolve(base));
}

// ---------------------------------------------------------------------------
// Ontology

const PartSet& Ontology::parts_of(const std::string& object) const {
  static const PartSet kEmpty;
  auto it = object_parts.find(object);
  return it == object_parts.end() ? kEmpty : it->second;
}

std::vector<std::string> Ontology::objects_in(const std::string& category) const {
  std::vector<std::string> out;
  for (const auto& [object, cat] : object_category) {
    if (cat == category) {
      out.push_back(object);
    }
  }
  return out;
}

PartSet Ontology::category_parts(const std::string& category) const {
  PartSet out;
  for (const auto& object : objects_in(category)) {
    const auto& parts = parts_of(object);
    out.insert(parts.begin(), parts.end());
  }
  return out;
}

PartSet Ontology::all_parts() const {
  PartSet out;
  for (const auto& [object, parts] : object_parts) {
    out.insert(parts.begin(), parts.end());
  }
  return out;
}

std::size_t Ontology::binding_count() const {
  std::size_t n = 0;
  for (const auto& [object, parts] : object_parts) {
    n += parts.size();
  }
  return n;
}

namespace {

const json& require(const json& j, const char* key, const std::string& record) {
  if (!j.is_object() || !j.contains(key)) {
    throw SchemaViolation(record, std::string("missing field \"") + key + "\"");
  }
  return j.at(key);
}

std::string require_string(const json& j, const char* key, const std::string& record) {
  const auto& v = require(j, key, record);
  if (!v.is_string()) {
    throw SchemaViolation(record, std::string("field \"") + key + "\" must be a string");
  }
  return v.get<std::string>();
}

std::uint32_t require_dim(const json& j, const char* key, const std::string& record) {
  const auto& v = require(j, key, record);
  if (!v.is_number_unsigned()) {
    throw SchemaViolation(record, std::string("field \"") + key + "\" must be a non-negative integer");
  }
  return v.get<std::uint32_t>();
}

// COCO ids may be numbers or strings.
std::string id_string(const json& v, const std::string& record) {
  if (v.is_string()) {
    return v.get<std::string>();
  }
  if (v.is_number_integer()) {
    return std::to_string(v.get<std::int64_t>());
  }
  throw SchemaViolation(record, "id must be a string or integer");
}

std::optional<std::array<double, 4>> parse_bbox(const json& j, const std::string& record) {
  if (!j.contains("bbox") || j.at("bbox").is_null()) {
    return std::nullopt;
  }
  const auto& b = j.at("bbox");
  if (!b.is_array() || b.size() != 4) {
    throw SchemaViolation(record, "bbox must be [x, y, w, h]");
  }
  std::array<double, 4> box{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!b[i].is_number()) {
      throw SchemaViolation(record, "bbox entries must be numbers");
    }
    box[i] = b[i].get<double>();
  }
  return box;
}

void check_mask_dims(const maskio::MaskRle& rle, const ImageEntry& image, const std::string& record) {
  if (rle.height != image.height || rle.width != image.width) {
    throw SchemaViolation(record, "mask is " + std::to_string(rle.height) + "x" +
                                      std::to_string(rle.width) + " but image is " +
                                      std::to_string(image.height) + "x" +
                                      std::to_string(image.width));
  }
}

maskio::MaskRle mask_union(const maskio::MaskRle& a, const maskio::MaskRle& b) {
  auto da = maskio::rle_decode(a);
  const auto db = maskio::rle_decode(b);
  std::vector<std::uint8_t> data(da.data());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] |= db.data()[i];
  }
  return maskio::rle_encode(maskio::BinaryMask(a.height, a.width, std::move(data)));
}

}  // namespace

Ontology ontology_from_json(const json& j) {
  if (!j.is_object()) {
    throw SchemaViolation("ontology", "top level must be an object");
  }
  Ontology ontology;
  std::map<std::string, std::string> raw_synonyms;
  if (j.contains("synonyms")) {
    const auto& syn = j.at("synonyms");
    if (!syn.is_object()) {
      throw SchemaViolation("synonyms", "must be an object");
    }
    for (const auto& [raw, canonical] : syn.items()) {
      if (!canonical.is_string()) {
        throw SchemaViolation("synonyms", "value for \"" + raw + "\" must be a string");
      }
      raw_synonyms[raw] = canonical.get<std::string>();
    }
  }
  ontology.synonyms = SynonymTable(raw_synonyms);

  const auto& cats = require(j, "categories", "ontology");
  if (!cats.is_object()) {
    throw SchemaViolation("categories", "must be an object of category -> [objects]");
  }
  std::set<std::string> category_names;
  for (const auto& [raw_cat, objects] : cats.items()) {
    const auto cat = normalize_label(raw_cat);
    category_names.insert(cat);
    if (!objects.is_array()) {
      throw SchemaViolation("category " + cat, "objects must be a list");
    }
    for (const auto& o : objects) {
      if (!o.is_string()) {
        throw SchemaViolation("category " + cat, "object labels must be strings");
      }
      const auto object = normalize_label(o.get<std::string>());
      auto [it, inserted] = ontology.object_category.emplace(object, cat);
      if (!inserted && it->second != cat) {
        throw SchemaViolation("object " + object, "listed under categories \"" + it->second +
                                                      "\" and \"" + cat + "\"");
      }
    }
  }
  ontology.categories.assign(category_names.begin(), category_names.end());

  if (j.contains("parts")) {
    const auto& parts = j.at("parts");
    if (!parts.is_object()) {
      throw SchemaViolation("parts", "must be an object of object -> [parts]");
    }
    for (const auto& [raw_object, list] : parts.items()) {
      const auto object = normalize_label(raw_object);
      if (!ontology.has_object(object)) {
        throw SchemaViolation("object " + object, "has parts but belongs to no category");
      }
      if (!list.is_array()) {
        throw SchemaViolation("object " + object, "parts must be a list");
      }
      auto& set = ontology.object_parts[object];
      for (const auto& p : list) {
        if (!p.is_string()) {
          throw SchemaViolation("object " + object, "part labels must be strings");
        }
        set.insert(normalize_part_label(p.get<std::string>(), ontology.synonyms));
      }
    }
  }
  return ontology;
}

json ontology_to_json(const Ontology& ontology) {
  json cats = json::object();
  for (const auto& cat : ontology.categories) {
    cats[cat] = ontology.objects_in(cat);
  }
  json parts = json::object();
  for (const auto& [object, set] : ontology.object_parts) {
    parts[object] = std::vector<std::string>(set.begin(), set.end());
  }
  json syn = json::object();
  for (const auto& [k, v] : ontology.synonyms.entries()) {
    syn[k] = v;
  }
  return json{{"categories", cats}, {"parts", parts}, {"synonyms", syn}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw MalformedFile(path.string() + ": " + e.what(), e.byte);
  }
}

Ontology load_ontology(const std::filesystem::path& path) {
  return ontology_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Dataset

PartSet PartInstance::part_labels() const {
  PartSet out;
  for (const auto& [label, mask] : parts) {
    out.insert(label);
  }
  return out;
}

std::uint64_t PartInstance::total_area() const noexcept {
  std::uint64_t sum = 0;
  for (const auto& [label, mask] : parts) {
    sum += mask.area();
  }
  return sum;
}

std::size_t PartDataset::mask_count() const noexcept {
  std::size_t n = 0;
  for (const auto& image : images) {
    for (const auto& inst : image.instances) {
      n += inst.parts.size();
    }
  }
  return n;
}

std::optional<DatasetFormat> parse_dataset_format(std::string_view name) {
  if (name == "coco_parts" || name == "coco") {
    return DatasetFormat::coco_parts;
  }
  if (name == "partonomy_native" || name == "native") {
    return DatasetFormat::partonomy_native;
  }
  return std::nullopt;
}

PartDataset dataset_from_native_json(const json& j) {
  const auto& images = require(j, "images", "dataset");
  if (!images.is_array()) {
    throw SchemaViolation("dataset", "\"images\" must be a list");
  }
  PartDataset ds;
  ds.images.reserve(images.size());
  std::set<std::string> seen_ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& ji = images[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    ImageEntry image;
    image.id = require_string(ji, "id", where);
    const std::string record = "image " + image.id;
    if (!seen_ids.insert(image.id).second) {
      throw SchemaViolation(record, "duplicate image id");
    }
    image.height = require_dim(ji, "height", record);
    image.width = require_dim(ji, "width", record);
    const auto& instances = require(ji, "instances", record);
    if (!instances.is_array()) {
      throw SchemaViolation(record, "\"instances\" must be a list");
    }
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const auto& jk = instances[k];
      const std::string inst_record = record + " instance " + std::to_string(k);
      PartInstance inst;
      inst.label = require_string(jk, "label", inst_record);
      inst.bbox = parse_bbox(jk, inst_record);
      const auto& parts = require(jk, "parts", inst_record);
      if (!parts.is_object()) {
        throw SchemaViolation(inst_record, "\"parts\" must be an object of part -> RLE");
      }
      for (const auto& [part, rle_json] : parts.items()) {
        const std::string part_record = inst_record + " part \"" + part + "\"";
        auto rle = maskio::rle_from_json(rle_json, part_record);
        check_mask_dims(rle, image, part_record);
        inst.parts.emplace(part, std::move(rle));
      }
      image.instances.push_back(std::move(inst));
    }
    ds.images.push_back(std::move(image));
  }
  return ds;
}

PartDataset dataset_from_coco_json(const json& j) {
  const auto& images = require(j, "images", "dataset");
  const auto& annotations = require(j, "annotations", "dataset");
  const auto& categories = require(j, "categories", "dataset");
  if (!images.is_array() || !annotations.is_array() || !categories.is_array()) {
    throw SchemaViolation("dataset", "images, annotations and categories must be lists");
  }

  // category id -> (object label, part label or empty)
  std::map<std::string, std::pair<std::string, std::string>> category_names;
  for (const auto& c : categories) {
    const auto id = id_string(require(c, "id", "category"), "category");
    const auto name = require_string(c, "name", "category " + id);
    const auto colon = name.find(':');
    if (colon == std::string::npos) {
      category_names[id] = {name, {}};
    } else {
      category_names[id] = {name.substr(0, colon), name.substr(colon + 1)};
    }
  }

  PartDataset ds;
  std::map<std::string, std::size_t> image_index;
  for (const auto& ji : images) {
    ImageEntry image;
    image.id = id_string(require(ji, "id", "image"), "image");
    const std::string record = "image " + image.id;
    image.height = require_dim(ji, "height", record);
    image.width = require_dim(ji, "width", record);
    if (!image_index.emplace(image.id, ds.images.size()).second) {
      throw SchemaViolation(record, "duplicate image id");
    }
    ds.images.push_back(std::move(image));
  }

  struct Located {
    std::size_t image;
    std::size_t instance;
  };
  std::map<std::string, Located> object_annotations;

  auto resolve = [&](const json& a, const std::string& record) {
    const auto image_id = id_string(require(a, "image_id", record), record);
    auto it = image_index.find(image_id);
    if (it == image_index.end()) {
      throw SchemaViolation(record, "unknown image_id " + image_id);
    }
    const auto cat_id = id_string(require(a, "category_id", record), record);
    auto ct = category_names.find(cat_id);
    if (ct == category_names.end()) {
      throw SchemaViolation(record, "unknown category_id " + cat_id);
    }
    return std::make_pair(it->second, ct->second);
  };

  // Objects first so part annotations can refer to them regardless of file order.
  for (const auto& a : annotations) {
    const auto ann_id = id_string(require(a, "id", "annotation"), "annotation");
    const std::string record = "annotation " + ann_id;
    const auto [img, names] = resolve(a, record);
    if (!names.second.empty()) {
      continue;
    }
    PartInstance inst;
    inst.label = names.first;
    inst.bbox = parse_bbox(a, record);
    auto& image = ds.images[img];
    object_annotations[ann_id] = Located{img, image.instances.size()};
    image.instances.push_back(std::move(inst));
  }

  for (const auto& a : annotations) {
    const auto ann_id = id_string(require(a, "id", "annotation"), "annotation");
    const std::string record = "annotation " + ann_id;
    const auto [img, names] = resolve(a, record);
    if (names.second.empty()) {
      continue;
    }
    auto& image = ds.images[img];
    const auto& seg = require(a, "segmentation", record);
    if (seg.is_array()) {
      throw SchemaViolation(record, "polygon segmentations are not supported; expected RLE");
    }
    auto rle = maskio::rle_from_json(seg, record);
    check_mask_dims(rle, image, record);

    std::size_t target = 0;
    if (a.contains("obj_ann_id") && !a.at("obj_ann_id").is_null()) {
      const auto parent = id_string(a.at("obj_ann_id"), record);
      auto it = object_annotations.find(parent);
      if (it == object_annotations.end() || it->second.image != img) {
        throw SchemaViolation(record, "obj_ann_id " + parent + " does not name an object in this image");
      }
      target = it->second.instance;
      if (image.instances[target].label != names.first) {
        throw SchemaViolation(record, "part of \"" + names.first + "\" attached to \"" +
                                          image.instances[target].label + "\"");
      }
    } else {
      std::vector<std::size_t> matches;
      for (std::size_t k = 0; k < image.instances.size(); ++k) {
        if (image.instances[k].label == names.first) {
          matches.push_back(k);
        }
      }
      if (matches.size() > 1) {
        throw SchemaViolation(record, "ambiguous part annotation: several \"" + names.first +
                                          "\" instances and no obj_ann_id");
      }
      if (matches.empty()) {
        image.instances.push_back(PartInstance{names.first, std::nullopt, {}});
        target = image.instances.size() - 1;
      } else {
        target = matches.front();
      }
    }
    auto& parts = image.instances[target].parts;
    auto existing = parts.find(names.second);
    if (existing == parts.end()) {
      parts.emplace(names.second, std::move(rle));
    } else {
      existing->second = mask_union(existing->second, rle);
    }
  }
  return ds;
}

json dataset_to_json(const PartDataset& ds) {
  json images = json::array();
  for (const auto& image : ds.images) {
    json instances = json::array();
    for (const auto& inst : image.instances) {
      json parts = json::object();
      for (const auto& [label, rle] : inst.parts) {
        parts[label] = maskio::rle_to_json(rle);
      }
      json ji{{"label", inst.label}, {"parts", parts}};
      if (inst.bbox) {
        ji["bbox"] = *inst.bbox;
      }
      instances.push_back(std::move(ji));
    }
    images.push_back(json{{"id", image.id},
                          {"height", image.height},
                          {"width", image.width},
                          {"instances", instances}});
  }
  return json{{"images", images}};
}

PartDataset load_part_dataset(const std::filesystem::path& path, DatasetFormat format) {
  const auto j = read_json_file(path);
  try {
    return format == DatasetFormat::coco_parts ? dataset_from_coco_json(j)
                                               : dataset_from_native_json(j);
  } catch (const SchemaViolation& e) {
    throw SchemaViolation(e.record(), e.detail() + " (in " + path.string() + ")");
  } catch (const json::exception& e) {
    throw SchemaViolation("", path.string() + ": " + e.what());
  }
}

PartDataset canonicalize_labels(const PartDataset& ds, const SynonymTable& synonyms) {
  PartDataset out;
  out.images.reserve(ds.images.size());
  for (const auto& image : ds.images) {
    ImageEntry copy{image.id, image.height, image.width, {}};
    for (const auto& inst : image.instances) {
      PartInstance ci{normalize_label(inst.label), inst.bbox, {}};
      for (const auto& [label, rle] : inst.parts) {
        auto canonical = normalize_part_label(label, synonyms);
        auto it = ci.parts.find(canonical);
        if (it == ci.parts.end()) {
          ci.parts.emplace(std::move(canonical), rle);
        } else {
          it->second = mask_union(it->second, rle);
        }
      }
      copy.instances.push_back(std::move(ci));
    }
    out.images.push_back(std::move(copy));
  }
  return out;
}

std::vector<std::string> find_ontology_violations(const PartDataset& ds, const Ontology& ontology) {
  std::vector<std::string> out;
  for (const auto& image : ds.images) {
    for (std::size_t k = 0; k < image.instances.size(); ++k) {
      const auto& inst = image.instances[k];
      const std::string where = "image " + image.id + " instance " + std::to_string(k);
      if (!ontology.has_object(inst.label)) {
        out.push_back(where + ": unknown object \"" + inst.label + "\"");
        continue;
      }
      const auto& known = ontology.parts_of(inst.label);
      for (const auto& [part, rle] : inst.parts) {
        if (known.count(part) == 0) {
          out.push_back(where + ": part \"" + part + "\" not listed for \"" + inst.label + "\"");
        }
      }
    }
  }
  return out;
}

std::map<std::pair<std::string, std::string>, std::size_t> binding_counts(const PartDataset& ds) {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const auto& image : ds.images) {
    for (const auto& inst : image.instances) {
      for (const auto& [part, rle] : inst.parts) {
        ++counts[{inst.label, part}];
      }
    }
  }
  return counts;
}

PartDataset prune_rare_parts(const PartDataset& ds, std::size_t m) {
  if (m == 0) {
    throw Error(ErrorKind::invalid, "prune_rare_parts: m must be >= 1");
  }
  const auto counts = binding_counts(ds);
  PartDataset out = ds;
  for (auto& image : out.images) {
    for (auto& inst : image.instances) {
      std::erase_if(inst.parts, [&](const auto& entry) {
        return counts.at({inst.label, entry.first}) < m;
      });
    }
  }
  return out;
}

std::size_t select_primary_instance_index(const ImageEntry& entry) {
  if (entry.instances.empty()) {
    throw NoInstances("image " + entry.id + " has no instances");
  }
  std::size_t best = 0;
  auto key = [&](std::size_t i) {
    const auto& inst = entry.instances[i];
    return std::make_pair(inst.parts.size(), inst.total_area());
  };
  for (std::size_t i = 1; i < entry.instances.size(); ++i) {
    if (key(i) > key(best)) {
      best = i;
    }
  }
  return best;
}

const PartInstance& select_primary_instance(const ImageEntry& entry) {
  return entry.instances[select_primary_instance_index(entry)];
}

std::pair<PartDataset, PartDataset> split_dataset(const PartDataset& ds, const SplitSpec& split) {
  if (!(split.ratio > 0.0 && split.ratio < 1.0)) {
    throw ConfigError("split ratio must lie strictly between 0 and 1");
  }
  const std::size_t n = ds.images.size();
  std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
  ranked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ranked.emplace_back(mix64(fnv1a64(ds.images[i].id) ^ split.seed), i);
  }
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    return std::tie(a.first, ds.images[a.second].id) < std::tie(b.first, ds.images[b.second].id);
  });
  const auto n_train = static_cast<std::size_t>(std::llround(split.ratio * static_cast<double>(n)));
  std::vector<bool> in_train(n, false);
  for (std::size_t r = 0; r < n_train; ++r) {
    in_train[ranked[r].second] = true;
  }
  std::pair<PartDataset, PartDataset> out;
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? out.first : out.second).images.push_back(ds.images[i]);
  }
  return out;
}

DatasetStats compute_stats(const PartDataset& ds) {
  std::set<std::string> objects;
  std::set<std::string> parts;
  std::set<std::pair<std::string, std::string>> bindings;
  DatasetStats stats;
  stats.images = ds.images.size();
  for (const auto& image : ds.images) {
    for (const auto& inst : image.instances) {
      objects.insert(inst.label);
      for (const auto& [part, rle] : inst.parts) {
        parts.insert(part);
        bindings.emplace(inst.label, part);
        ++stats.masks;
      }
    }
  }
  stats.objects = objects.size();
  stats.parts = parts.size();
  stats.bindings = bindings.size();
  return stats;
}

}  // namespace partonomy
