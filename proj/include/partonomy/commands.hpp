#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "partonomy/errors.hpp"
#include "partonomy/ontology.hpp"

namespace partonomy::cli {

// 1 config, 2 parse (and bad input data), 3 generation, 4 evaluation mismatch.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 5;
inline constexpr int kExitInternal = 6;
int exit_code_for(ErrorKind kind) noexcept;

// Hex FNV-1a digest of a file's bytes. Throws ConfigError if unreadable.
std::string file_digest(const std::filesystem::path& path);
// Stable digest of a parameter object (keys are serialized in sorted order).
std::string config_hash(const nlohmann::json& params);
// {"tool", "stage", "seed", "config_hash"}
nlohmann::json provenance(const std::string& stage, std::uint64_t seed, const nlohmann::json& params);

struct IngestOptions {
  std::filesystem::path input;
  std::string format = "partonomy_native";
  std::optional<std::filesystem::path> ontology;
  std::size_t min_count = 5;
  std::filesystem::path out;
};

struct SplitOptions {
  std::filesystem::path dataset;
  double ratio = 0.8;
  std::uint64_t seed = 42;
  std::filesystem::path train_out;
  std::filesystem::path test_out;
};

struct TrainCoocOptions {
  std::filesystem::path dataset;
  std::uint64_t seed = 42;
  double learning_rate = 0.1;
  double l2 = 1e-3;
  double tolerance = 1e-6;
  int max_iters = 5000;
  std::filesystem::path out;
};

struct GenerateOptions {
  std::filesystem::path dataset;
  std::string format = "partonomy_native";
  std::filesystem::path ontology;
  std::filesystem::path cooc;
  std::optional<std::filesystem::path> embeddings;
  std::vector<std::string> types{"id", "int", "diff", "p2w", "w2p"};
  std::uint64_t seed = 42;
  std::size_t top_k = 10;
  std::size_t retry_budget = 32;
  unsigned jobs = 1;
  std::filesystem::path out;
};

struct EvaluateOptions {
  std::filesystem::path questions;
  std::filesystem::path responses;
  std::filesystem::path out;
  bool sum_logprob = false;
};

// Labels are normalized before counting; with an ontology its synonyms apply too.
struct StatsOptions {
  std::filesystem::path dataset;
  std::string format = "partonomy_native";
  std::optional<std::filesystem::path> ontology;
  bool json = false;
};

struct GradcheckOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 42;
  std::optional<std::filesystem::path> weights;  // JSON, or TOML by extension
};

void run_ingest(const IngestOptions& o);
void run_split(const SplitOptions& o);
void run_train_cooc(const TrainCoocOptions& o);
void run_generate(const GenerateOptions& o);
// Returns the number of per-record errors in the report.
std::size_t run_evaluate(const EvaluateOptions& o, std::ostream& out);
DatasetStats run_stats(const StatsOptions& o, std::ostream& out);
// Returns true when every check passes.
bool run_gradcheck(const GradcheckOptions& o, std::ostream& out);

std::string stats_table(const DatasetStats& stats);

// Whole command line, including argv[0]. Data goes to `out`, logs to stderr.
int run(int argc, const char* const* argv, std::ostream& out);

}  // namespace partonomy::cli
