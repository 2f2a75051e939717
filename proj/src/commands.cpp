#include "partonomy/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "partonomy/cooccurrence.hpp"
#include "partonomy/embeddings.hpp"
#include "partonomy/genpipe.hpp"
#include "partonomy/maskio.hpp"
#include "partonomy/metrics.hpp"
#include "partonomy/plumref.hpp"
#include "partonomy/rng.hpp"

namespace partonomy::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return 1;
    case ErrorKind::parse: return 2;
    case ErrorKind::generation: return 3;
    case ErrorKind::evaluation: return 4;
    case ErrorKind::invalid: return 2;
  }
  return kExitInternal;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_input(const fs::path& path, const char* flag) {
  if (path.empty()) {
    throw ConfigError(std::string(flag) + " is required");
  }
  if (!fs::exists(path)) {
    throw ConfigError(std::string(flag) + ": no such file " + path.string());
  }
}

void require_output(const fs::path& path, const char* flag) {
  if (path.empty()) {
    throw ConfigError(std::string(flag) + " is required");
  }
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ConfigError("cannot write " + path.string());
  }
  return out;
}

void write_json(const fs::path& path, const json& j, int indent = -1) {
  auto out = open_output(path);
  out << j.dump(indent) << '\n';
}

DatasetFormat dataset_format(const std::string& name) {
  auto f = parse_dataset_format(name);
  if (!f) {
    throw ConfigError("unknown dataset format \"" + name + "\" (expected coco_parts or partonomy_native)");
  }
  return *f;
}

}  // namespace

std::string file_digest(const fs::path& path) {
  return hex64(fnv1a64(slurp(path)));
}

std::string config_hash(const json& params) {
  return hex64(fnv1a64(params.dump()));
}

json provenance(const std::string& stage, std::uint64_t seed, const json& params) {
  return json{{"tool", "partonomy"}, {"stage", stage}, {"seed", seed}, {"config_hash", config_hash(params)}};
}

// ---------------------------------------------------------------------------

void run_ingest(const IngestOptions& o) {
  require_input(o.input, "--input");
  require_output(o.out, "--out");
  if (o.ontology) {
    require_input(*o.ontology, "--ontology");
  }
  if (o.min_count == 0) {
    throw ConfigError("--min-count must be at least 1");
  }
  const auto format = dataset_format(o.format);

  std::optional<Ontology> ontology;
  if (o.ontology) {
    ontology = load_ontology(*o.ontology);
  }
  auto ds = load_part_dataset(o.input, format);
  ds = canonicalize_labels(ds, ontology ? ontology->synonyms : SynonymTable{});
  const auto before = ds.mask_count();
  ds = prune_rare_parts(ds, o.min_count);
  spdlog::info("stage=ingest images={} masks={} pruned_masks={}", ds.images.size(), ds.mask_count(),
               before - ds.mask_count());
  if (ontology) {
    const auto violations = find_ontology_violations(ds, *ontology);
    if (!violations.empty()) {
      throw SchemaViolation(violations.front(), std::to_string(violations.size()) +
                                                    " annotation(s) not covered by the ontology");
    }
  }

  json params{{"stage", "ingest"},
              {"input", file_digest(o.input)},
              {"format", o.format},
              {"min_count", o.min_count}};
  if (o.ontology) {
    params["ontology"] = file_digest(*o.ontology);
  }
  auto j = dataset_to_json(ds);
  j["provenance"] = provenance("ingest", 0, params);
  write_json(o.out, j);
}

void run_split(const SplitOptions& o) {
  require_input(o.dataset, "--dataset");
  require_output(o.train_out, "--train-out");
  require_output(o.test_out, "--test-out");
  if (!(o.ratio > 0.0 && o.ratio < 1.0)) {
    throw ConfigError("--ratio must lie strictly between 0 and 1");
  }
  const auto ds = load_part_dataset(o.dataset, DatasetFormat::partonomy_native);
  const auto [train, test] = split_dataset(ds, {o.ratio, o.seed});
  spdlog::info("stage=split train={} test={}", train.images.size(), test.images.size());

  const json params{{"stage", "split"}, {"dataset", file_digest(o.dataset)}, {"ratio", o.ratio}, {"seed", o.seed}};
  auto jt = dataset_to_json(train);
  jt["provenance"] = provenance("split", o.seed, params);
  jt["provenance"]["subset"] = "train";
  auto je = dataset_to_json(test);
  je["provenance"] = provenance("split", o.seed, params);
  je["provenance"]["subset"] = "test";
  write_json(o.train_out, jt);
  write_json(o.test_out, je);
}

void run_train_cooc(const TrainCoocOptions& o) {
  require_input(o.dataset, "--dataset");
  require_output(o.out, "--out");
  const auto ds = canonicalize_labels(load_part_dataset(o.dataset, DatasetFormat::partonomy_native), SynonymTable{});
  std::vector<PartSet> sets;
  for (const auto& image : ds.images) {
    for (const auto& inst : image.instances) {
      auto parts = inst.part_labels();
      if (!parts.empty()) {
        sets.push_back(std::move(parts));
      }
    }
  }
  genpipe::CooccurrenceConfig config;
  config.learning_rate = o.learning_rate;
  config.l2 = o.l2;
  config.tolerance = o.tolerance;
  config.max_iters = o.max_iters;
  config.seed = o.seed;
  const auto model = genpipe::train_cooccurrence(sets, config);
  spdlog::info("stage=train-cooc sets={} vocabulary={} degenerate={}", sets.size(), model.size(),
               model.degenerate().size());

  const json params{{"stage", "train-cooc"},   {"dataset", file_digest(o.dataset)},
                    {"seed", o.seed},          {"learning_rate", o.learning_rate},
                    {"l2", o.l2},              {"tolerance", o.tolerance},
                    {"max_iters", o.max_iters}};
  auto j = genpipe::cooccurrence_to_json(model);
  j["provenance"] = provenance("train-cooc", o.seed, params);
  write_json(o.out, j);
}

void run_generate(const GenerateOptions& o) {
  // All validation happens before anything is loaded.
  require_input(o.dataset, "--dataset");
  require_input(o.ontology, "--ontology");
  require_input(o.cooc, "--cooc");
  require_output(o.out, "--out");
  const auto format = dataset_format(o.format);
  genpipe::GenerationConfig config;
  config.seed = o.seed;
  config.mutation.top_k = o.top_k;
  config.mutation.retry_budget = o.retry_budget;
  config.jobs = std::max(1u, o.jobs);
  config.types.clear();
  for (const auto& name : o.types) {
    auto t = genpipe::parse_question_type(name);
    if (!t) {
      throw ConfigError("--types: unknown question type \"" + name + "\"");
    }
    if (std::find(config.types.begin(), config.types.end(), *t) == config.types.end()) {
      config.types.push_back(*t);
    }
  }
  if (config.types.empty()) {
    throw ConfigError("--types: no question types enabled");
  }
  std::sort(config.types.begin(), config.types.end());
  const bool needs_table = std::any_of(config.types.begin(), config.types.end(), genpipe::is_part_whole);
  if (needs_table) {
    if (!o.embeddings) {
      throw ConfigError("--embeddings is required for part-whole question types (p2w, w2p)");
    }
    require_input(*o.embeddings, "--embeddings");
  }
  if (o.top_k == 0 || o.retry_budget == 0) {
    throw ConfigError("--top-k and --retry-budget must be positive");
  }

  const auto ontology = load_ontology(o.ontology);
  const auto ds = canonicalize_labels(load_part_dataset(o.dataset, format), ontology.synonyms);
  const auto model = genpipe::cooccurrence_from_json(read_json_file(o.cooc));
  std::optional<genpipe::EmbeddingTable> table;
  if (needs_table) {
    table = genpipe::load_embeddings(*o.embeddings);
  }

  genpipe::GenerationStats stats;
  const auto questions =
      genpipe::generate_questions(ds, ontology, model, table ? &*table : nullptr, config, &stats);
  for (const auto& [reason, count] : stats.skip_reasons) {
    spdlog::info("stage=generate skip_reason=\"{}\" count={}", reason, count);
  }
  spdlog::info("stage=generate images={} emitted={} skipped={}", stats.images, stats.emitted,
               stats.skipped);

  std::vector<std::string> type_names;
  for (auto t : config.types) {
    type_names.emplace_back(genpipe::short_name(t));
  }
  json params{{"stage", "generate"},
              {"dataset", file_digest(o.dataset)},
              {"format", o.format},
              {"ontology", file_digest(o.ontology)},
              {"cooc", file_digest(o.cooc)},
              {"types", type_names},
              {"seed", o.seed},
              {"top_k", o.top_k},
              {"retry_budget", o.retry_budget}};
  if (needs_table) {
    params["embeddings"] = file_digest(*o.embeddings);
  }
  auto out = open_output(o.out);
  out << json{{"provenance", provenance("generate", o.seed, params)}}.dump() << '\n';
  for (const auto& q : questions) {
    out << genpipe::question_to_json(q).dump() << '\n';
  }
}

std::size_t run_evaluate(const EvaluateOptions& o, std::ostream& out) {
  require_input(o.questions, "--questions");
  require_input(o.responses, "--responses");
  require_output(o.out, "--out");
  const auto questions = genpipe::read_questions(o.questions);
  auto responses = metrics::read_responses(o.responses);
  metrics::EvalOptions options;
  options.scoring = o.sum_logprob ? metrics::ChoiceScoring::sum_nll : metrics::ChoiceScoring::mean_nll;
  const auto report =
      metrics::evaluate(questions, responses.records, options, std::move(responses.errors));
  for (const auto& e : report.errors) {
    spdlog::warn("stage=evaluate qid=\"{}\" kind={} {}", e.question_id, e.kind, e.message);
  }

  const json params{{"stage", "evaluate"},
                    {"questions", file_digest(o.questions)},
                    {"responses", file_digest(o.responses)},
                    {"sum_logprob", o.sum_logprob}};
  auto j = metrics::report_to_json(report);
  j["provenance"] = provenance("evaluate", 0, params);
  write_json(o.out, j, 2);
  out << metrics::report_to_table(report);
  return report.errors.size();
}

std::string stats_table(const DatasetStats& s) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "objects" << std::setw(10) << "parts" << std::setw(10)
     << "bindings" << std::setw(10) << "images" << "masks\n";
  os << std::setw(10) << s.objects << std::setw(10) << s.parts << std::setw(10) << s.bindings
     << std::setw(10) << s.images << s.masks << '\n';
  return os.str();
}

DatasetStats run_stats(const StatsOptions& o, std::ostream& out) {
  require_input(o.dataset, "--dataset");
  if (o.ontology) {
    require_input(*o.ontology, "--ontology");
  }
  const auto format = dataset_format(o.format);
  const auto synonyms = o.ontology ? load_ontology(*o.ontology).synonyms : SynonymTable{};
  const auto stats = compute_stats(canonicalize_labels(load_part_dataset(o.dataset, format), synonyms));
  if (o.json) {
    out << json{{"objects", stats.objects},
                {"parts", stats.parts},
                {"bindings", stats.bindings},
                {"images", stats.images},
                {"masks", stats.masks}}
               .dump()
        << '\n';
  } else {
    out << stats_table(stats);
  }
  return stats;
}

namespace {

plumref::LossWeights load_weights(const fs::path& path) {
  require_input(path, "--weights");
  if (path.extension() == ".json") {
    return plumref::loss_weights_from_json(read_json_file(path));
  }
  // TOML: flat `key = number` table, parsed with CLI11's config reader.
  std::istringstream in(slurp(path));
  json j = json::object();
  try {
    for (const auto& item : CLI::ConfigTOML().from_config(in)) {
      if (item.name == "++" || item.name == "--") {
        continue;
      }
      if (!item.parents.empty() || item.inputs.size() != 1) {
        throw ConfigError("weights file: \"" + item.fullname() + "\" must be a top-level number");
      }
      try {
        std::size_t used = 0;
        j[item.name] = std::stod(item.inputs[0], &used);
        if (used != item.inputs[0].size()) {
          throw std::invalid_argument(item.inputs[0]);
        }
      } catch (const std::logic_error&) {
        throw ConfigError("weights file: \"" + item.name + "\" is not a number");
      }
    }
  } catch (const CLI::ParseError& e) {
    throw ConfigError("weights file: " + std::string(e.what()));
  }
  return plumref::loss_weights_from_json(j);
}

}  // namespace

bool run_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  if (o.trials == 0) {
    throw ConfigError("--trials must be positive");
  }
  const auto weights = o.weights ? load_weights(*o.weights) : plumref::LossWeights{};
  weights.validate();
  const auto results = plumref::run_gradcheck_suite(o.trials, o.seed, weights);
  bool ok = true;
  out << std::left << std::setw(24) << "check" << std::right << std::setw(8) << "trials"
      << std::setw(14) << "max_rel_err" << std::setw(10) << "limit"
      << "  result\n";
  for (const auto& r : results) {
    out << std::left << std::setw(24) << r.name << std::right << std::setw(8) << r.trials
        << std::setw(14) << std::scientific << std::setprecision(3) << r.max_error << std::setw(10)
        << r.threshold << std::defaultfloat << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  const double unit = plumref::combined_objective({1.0, 1.0, 1.0, 1.0, 1.0}, weights);
  out << "combined_objective(unit losses) = " << std::setprecision(17) << unit << '\n';
  return ok;
}

// ---------------------------------------------------------------------------

namespace {

// Reads a JSON config file into CLI11 items; nested objects map to subcommands.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    fill(app, default_also, j);
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file: ") + e.what());
    }
    if (!j.is_object()) {
      throw CLI::ConversionError("config file: top level must be an object");
    }
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static void fill(const CLI::App* app, bool default_also, json& j) {
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) {
        continue;
      }
      const auto& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& results = opt->results();
        if (opt->get_expected_max() > 1) {
          j[name] = results;
        } else if (!results.empty()) {
          j[name] = results.front();
        }
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      json child = json::object();
      fill(sub, default_also, child);
      if (!child.empty()) {
        j[sub->get_name()] = child;
      }
    }
  }

  static void collect(const json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        collect(value, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      auto scalar = [&key](const json& v) -> std::string {
        if (v.is_string()) {
          return v.get<std::string>();
        }
        if (v.is_boolean()) {
          return v.get<bool>() ? "true" : "false";
        }
        if (v.is_number()) {
          return v.dump();
        }
        throw CLI::ConversionError("config file: unsupported value for \"" + key + "\"");
      };
      if (value.is_array()) {
        for (const auto& v : value) {
          item.inputs.push_back(scalar(v));
        }
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

bool config_is_json(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    std::string_view arg = argv[i];
    std::string_view value;
    if (arg == "--config" && i + 1 < argc) {
      value = argv[i + 1];
    } else if (arg.starts_with("--config=")) {
      value = arg.substr(9);
    } else {
      continue;
    }
    return fs::path(value).extension() == ".json";
  }
  return false;
}

// Structured stderr lines for the duration of one command.
class StageLogger {
 public:
  explicit StageLogger(const std::string& level) {
    auto logger = std::make_shared<spdlog::logger>(
        "partonomy", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    logger->set_pattern("level=%l %v");
    logger->set_level(spdlog::level::from_str(level));
    previous_ = spdlog::default_logger();
    spdlog::set_default_logger(logger);
  }
  ~StageLogger() { spdlog::set_default_logger(previous_); }

  StageLogger(const StageLogger&) = delete;
  StageLogger& operator=(const StageLogger&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

// stdin when the path is "-".
std::string read_input(const std::string& path) {
  if (path == "-") {
    return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  }
  return slurp(path);
}

maskio::BinaryMask parse_grid(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string row;
    for (char c : line) {
      if (c == '0' || c == '1') {
        row.push_back(c);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        throw SchemaViolation("mask grid", std::string("unexpected character '") + c + "'");
      }
    }
    if (!row.empty()) {
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) {
    throw SchemaViolation("mask grid", "no rows");
  }
  maskio::BinaryMask mask(static_cast<std::uint32_t>(rows.size()),
                          static_cast<std::uint32_t>(rows.front().size()));
  for (std::size_t y = 0; y < rows.size(); ++y) {
    if (rows[y].size() != rows.front().size()) {
      throw SchemaViolation("mask grid", "row " + std::to_string(y) + " has a different width");
    }
    for (std::size_t x = 0; x < rows[y].size(); ++x) {
      mask.set(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x), rows[y][x] == '1');
    }
  }
  return mask;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out) {
  CLI::App app{"Part-segmentation benchmark construction and evaluation toolkit", "partonomy"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or JSON file mirroring the command-line flags");
  if (config_is_json(argc, argv)) {
    app.config_formatter(std::make_shared<JsonConfig>());
  }
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "Log verbosity on stderr")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Load a part dataset, normalize labels and prune rare parts");
  c_ingest->add_option("--input", ingest.input, "Annotation file")->required();
  c_ingest->add_option("--format", ingest.format, "coco_parts or partonomy_native")->capture_default_str();
  c_ingest->add_option("--ontology", ingest.ontology, "Ontology JSON (synonyms and validation)");
  c_ingest->add_option("--min-count", ingest.min_count, "Drop object-part bindings seen fewer times")
      ->capture_default_str();
  c_ingest->add_option("--out", ingest.out, "Output dataset JSON")->required();

  SplitOptions split;
  auto* c_split = app.add_subcommand("split", "Split a dataset by image id");
  c_split->add_option("--dataset", split.dataset)->required();
  c_split->add_option("--ratio", split.ratio, "Train fraction")->capture_default_str();
  c_split->add_option("--seed", split.seed)->capture_default_str();
  c_split->add_option("--train-out", split.train_out)->required();
  c_split->add_option("--test-out", split.test_out)->required();

  TrainCoocOptions cooc;
  auto* c_cooc = app.add_subcommand("train-cooc", "Fit the part co-occurrence regressors");
  c_cooc->add_option("--dataset", cooc.dataset)->required();
  c_cooc->add_option("--seed", cooc.seed)->capture_default_str();
  c_cooc->add_option("--lr", cooc.learning_rate)->capture_default_str();
  c_cooc->add_option("--l2", cooc.l2)->capture_default_str();
  c_cooc->add_option("--tol", cooc.tolerance)->capture_default_str();
  c_cooc->add_option("--max-iters", cooc.max_iters)->capture_default_str();
  c_cooc->add_option("--out", cooc.out)->required();

  GenerateOptions gen;
  gen.jobs = cores;
  auto* c_gen = app.add_subcommand("generate", "Generate multiple-choice questions");
  c_gen->add_option("--dataset", gen.dataset)->required();
  c_gen->add_option("--format", gen.format)->capture_default_str();
  c_gen->add_option("--ontology", gen.ontology)->required();
  c_gen->add_option("--cooc", gen.cooc, "Co-occurrence model JSON")->required();
  c_gen->add_option("--embeddings", gen.embeddings, "Object embedding JSONL (needed for p2w, w2p)");
  c_gen->add_option("--types", gen.types, "Comma-separated subset of id,int,diff,p2w,w2p")
      ->delimiter(',')
      ->capture_default_str();
  c_gen->add_option("--seed", gen.seed)->capture_default_str();
  c_gen->add_option("--top-k", gen.top_k, "Candidate parts considered for additions")->capture_default_str();
  c_gen->add_option("--retry-budget", gen.retry_budget)->capture_default_str();
  c_gen->add_option("--jobs", gen.jobs, "Worker threads")->capture_default_str();
  c_gen->add_option("--out", gen.out, "Question JSONL")->required();

  EvaluateOptions eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score model responses against questions");
  c_eval->add_option("--questions", eval.questions)->required();
  c_eval->add_option("--responses", eval.responses)->required();
  c_eval->add_option("--out", eval.out, "Report JSON")->required();
  c_eval->add_flag("--sum-logprob", eval.sum_logprob, "Rank choices by total instead of mean log-probability");

  StatsOptions stats;
  auto* c_stats = app.add_subcommand("stats", "Object, part, binding, image and mask counts");
  c_stats->add_option("--dataset", stats.dataset)->required();
  c_stats->add_option("--format", stats.format)->capture_default_str();
  c_stats->add_option("--ontology", stats.ontology, "Ontology whose synonyms apply before counting");
  c_stats->add_flag("--json", stats.json, "Print JSON instead of a table");

  GradcheckOptions grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference checks of the loss gradients");
  c_grad->add_option("--trials", grad.trials, "Random inputs per check")->capture_default_str();
  c_grad->add_option("--seed", grad.seed)->capture_default_str();
  c_grad->add_option("--weights", grad.weights, "Loss weights, JSON or TOML");

  std::string rle_input = "-";
  bool rle_string = false;
  auto* c_rle = app.add_subcommand("rle", "Convert between 0/1 text grids and RLE JSON");
  c_rle->require_subcommand(1);
  auto* c_encode = c_rle->add_subcommand("encode", "0/1 grid -> RLE JSON");
  c_encode->add_option("--input", rle_input, "Grid file, - for stdin")->capture_default_str();
  c_encode->add_flag("--string", rle_string, "Emit COCO compressed string counts");
  auto* c_decode = c_rle->add_subcommand("decode", "RLE JSON -> 0/1 grid");
  c_decode->add_option("--input", rle_input, "RLE JSON file, - for stdin")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream err;
    const int code = app.exit(e, out, err);
    if (!err.str().empty()) {
      std::cerr << "level=error stage=cli " << err.str();
    }
    return code == 0 ? kExitOk : exit_code_for(ErrorKind::config);
  }

  const StageLogger logger(log_level);
  std::string stage = "cli";
  try {
    if (*c_ingest) {
      stage = "ingest";
      run_ingest(ingest);
    } else if (*c_split) {
      stage = "split";
      run_split(split);
    } else if (*c_cooc) {
      stage = "train-cooc";
      run_train_cooc(cooc);
    } else if (*c_gen) {
      stage = "generate";
      run_generate(gen);
    } else if (*c_eval) {
      stage = "evaluate";
      if (run_evaluate(eval, out) > 0) {
        spdlog::error("stage=evaluate responses did not line up with the questions; report written");
        return exit_code_for(ErrorKind::evaluation);
      }
    } else if (*c_stats) {
      stage = "stats";
      run_stats(stats, out);
    } else if (*c_grad) {
      stage = "gradcheck";
      if (!run_gradcheck(grad, out)) {
        return kExitCheckFailed;
      }
    } else if (*c_rle) {
      stage = "rle";
      const std::string text = read_input(rle_input);
      if (*c_encode) {
        auto rle = maskio::rle_encode(parse_grid(text));
        auto j = maskio::rle_to_json(rle);
        if (rle_string) {
          j["counts"] = maskio::rle_to_string(rle);
        }
        out << j.dump() << '\n';
      } else {
        json j;
        try {
          j = json::parse(text);
        } catch (const json::parse_error& e) {
          throw MalformedFile(std::string("rle decode: ") + e.what(), e.byte);
        }
        const auto mask = maskio::rle_decode(maskio::rle_from_json(j, "rle decode"));
        for (std::uint32_t y = 0; y < mask.height(); ++y) {
          for (std::uint32_t x = 0; x < mask.width(); ++x) {
            out << (mask.at(y, x) ? '1' : '0');
          }
          out << '\n';
        }
      }
    }
  } catch (const Error& e) {
    spdlog::error("stage={} kind={} {}", stage, to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    spdlog::error("stage={} kind=parse {}", stage, e.what());
    return exit_code_for(ErrorKind::parse);
  } catch (const std::exception& e) {
    spdlog::error("stage={} kind=internal {}", stage, e.what());
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace partonomy::cli
