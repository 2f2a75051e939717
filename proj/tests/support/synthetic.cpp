#include "synthetic.hpp"

#include <atomic>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include <json.hpp>

namespace partonomy::testkit {

namespace {

std::string padded(std::size_t v) {
  return (v < 10 ? "0" : "") + std::to_string(v);
}

}  // namespace

maskio::BinaryMask random_mask(Rng& rng, std::uint32_t height, std::uint32_t width, double density) {
  maskio::BinaryMask m(height, width);
  for (std::uint32_t y = 0; y < height; ++y) {
    for (std::uint32_t x = 0; x < width; ++x) {
      m.set(y, x, rng.uniform01() < density);
    }
  }
  return m;
}

maskio::BinaryMask random_rectangle(Rng& rng, std::uint32_t height, std::uint32_t width) {
  maskio::BinaryMask m(height, width);
  const auto y0 = static_cast<std::uint32_t>(rng.uniform_index(height));
  const auto x0 = static_cast<std::uint32_t>(rng.uniform_index(width));
  const auto y1 = y0 + static_cast<std::uint32_t>(rng.uniform_index(height - y0));
  const auto x1 = x0 + static_cast<std::uint32_t>(rng.uniform_index(width - x0));
  for (auto y = y0; y <= y1; ++y) {
    for (auto x = x0; x <= x1; ++x) {
      m.set(y, x, true);
    }
  }
  return m;
}

SyntheticWorld make_world(const SyntheticConfig& config) {
  Rng rng(config.seed);
  SyntheticWorld world;
  nlohmann::json categories = nlohmann::json::object();
  nlohmann::json parts = nlohmann::json::object();
  std::vector<std::string> objects;

  for (std::size_t c = 0; c < config.categories; ++c) {
    const std::string cat = "cat" + std::to_string(c);
    std::vector<std::string> pool;
    for (std::size_t p = 0; p < config.parts_per_category; ++p) {
      pool.push_back("c" + std::to_string(c) + "_part" + padded(p));
    }
    // every category shares a "body" part so comparators can cross categories
    pool.push_back("body");
    std::vector<double> centre(config.embedding_dim);
    for (double& v : centre) {
      v = rng.normal();
    }
    for (std::size_t o = 0; o < config.objects_per_category; ++o) {
      const std::string obj = "c" + std::to_string(c) + "_obj" + std::to_string(o);
      categories[cat].push_back(obj);
      objects.push_back(obj);
      auto shuffled = pool;
      rng.shuffle(shuffled);
      const std::size_t n = 5 + rng.uniform_index(4);
      std::vector<std::string> mine(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
      parts[obj] = mine;
      std::vector<double> v(config.embedding_dim);
      for (std::size_t d = 0; d < v.size(); ++d) {
        v[d] = centre[d] + 0.5 * rng.normal();
      }
      world.embeddings[obj] = v;
    }
  }
  world.ontology = ontology_from_json(nlohmann::json{{"categories", categories}, {"parts", parts}});

  for (std::size_t i = 0; i < config.images; ++i) {
    ImageEntry image;
    image.id = "img" + std::to_string(100000 + i);
    image.height = config.height;
    image.width = config.width;
    const std::size_t instances = 1 + (rng.uniform_index(4) == 0 ? 1 : 0);
    for (std::size_t k = 0; k < instances; ++k) {
      PartInstance inst;
      inst.label = rng.pick(objects);
      std::vector<std::string> own(world.ontology.parts_of(inst.label).begin(),
                                   world.ontology.parts_of(inst.label).end());
      rng.shuffle(own);
      const std::size_t n = 3 + rng.uniform_index(own.size() - 2);
      for (std::size_t p = 0; p < n; ++p) {
        inst.parts.emplace(own[p], maskio::rle_encode(random_rectangle(rng, image.height, image.width)));
      }
      image.instances.push_back(std::move(inst));
    }
    world.dataset.images.push_back(std::move(image));
  }
  return world;
}

std::vector<PartSet> instance_part_sets(const PartDataset& ds, std::size_t limit) {
  std::vector<PartSet> sets;
  for (const auto& image : ds.images) {
    for (const auto& inst : image.instances) {
      if (limit != 0 && sets.size() >= limit) {
        return sets;
      }
      sets.push_back(inst.part_labels());
    }
  }
  return sets;
}

genpipe::CooccurrenceModel train_model(const SyntheticWorld& world, std::size_t max_sets) {
  genpipe::CooccurrenceConfig config;
  config.max_iters = 500;
  return genpipe::train_cooccurrence(instance_part_sets(world.dataset, max_sets), config);
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<unsigned> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("partonomy-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::filesystem::path> write_world(const SyntheticWorld& world,
                                                         const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> paths{{"ontology", dir / "ontology.json"},
                                                     {"dataset", dir / "dataset.json"},
                                                     {"embeddings", dir / "embeddings.jsonl"},
                                                     {"cooc", dir / "cooc.json"}};
  write_text(paths["ontology"], ontology_to_json(world.ontology).dump() + "\n");
  write_text(paths["dataset"], dataset_to_json(world.dataset).dump() + "\n");
  std::ostringstream emb;
  for (const auto& [label, v] : world.embeddings) {
    emb << nlohmann::json{{"label", label}, {"vector", v}}.dump() << '\n';
  }
  write_text(paths["embeddings"], emb.str());
  write_text(paths["cooc"], genpipe::cooccurrence_to_json(train_model(world)).dump() + "\n");
  return paths;
}

std::filesystem::path data_dir() {
  return PARTONOMY_TEST_DATA_DIR;
}

}  // namespace partonomy::testkit
