#pragma once

#include <cctype>
#include <climits>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedctx/engine.hpp"
#include "fedctx/idx.hpp"

namespace fedctx {

// Accuracy levels reported in summary.csv.
inline constexpr double kSummaryLevels[] = {0.5, 0.6, 0.7, 0.8};

struct DatasetSpec {
  enum class Kind { synthetic, idx, csv };
  Kind kind = Kind::synthetic;

  SyntheticSpec synthetic;
  bool synthetic_seed_set = false;

  std::string train_images, train_labels, test_images, test_labels;
  int idx_devices = 100;
  int shards_per_device = 2;
  std::uint64_t idx_seed = 0;
  bool idx_seed_set = false;

  std::string csv_dir;
};

struct NamedRun {
  std::string name;
  RunConfig config;
};

// A parsed experiment: one dataset, one shared master seed, several runs.
// Runs inherit the master seed so device selections and epoch draws line up
// across schemes.
struct ExperimentSpec {
  std::uint64_t seed = 1;
  std::string output_dir;  // empty until resolved by the caller
  bool trace_alphas = false;
  DatasetSpec dataset;
  std::vector<NamedRun> runs;
};

struct SpecReport {
  ExperimentSpec spec;
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r");
  if (from == std::string::npos) return "";
  const auto to = s.find_last_not_of(" \t\r");
  return s.substr(from, to - from + 1);
}

struct IniEntry {
  std::string key, value;
  int line = 0;
};

struct IniSection {
  std::string name;
  int line = 0;
  std::vector<IniEntry> entries;
};

// Line-oriented INI reader: [section] headers, key = value pairs, full-line
// comments starting with # or ;. Structural faults throw; semantic problems
// are the builder's job so they can all be reported at once.
inline std::vector<IniSection> parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::vector<IniSection> sections;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (text.empty() || text.front() == '#' || text.front() == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ParseError(where + ": unterminated section header");
      const std::string name = trim(text.substr(1, text.size() - 2));
      if (name.empty()) throw ParseError(where + ": empty section name");
      sections.push_back({name, line_no, {}});
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ParseError(where + ": expected 'key = value' or a [section] header");
    const std::string key = trim(text.substr(0, eq));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (sections.empty()) throw ParseError(where + ": key before any [section]");
    sections.back().entries.push_back({key, trim(text.substr(eq + 1)), line_no});
  }
  return sections;
}

// Typed key consumption over one section, appending a problem per fault and
// flagging leftovers as unknown keys.
class SectionReader {
 public:
  SectionReader(const std::string& path, const IniSection& sec,
                std::vector<std::string>& problems)
      : path_(path), section_(sec.name), problems_(problems) {
    for (const auto& e : sec.entries) {
      auto [it, inserted] = entries_.try_emplace(e.key, Slot{e.value, e.line, false});
      if (!inserted) note(e.line, "duplicate key '" + e.key + "'");
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> take_string(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    it->second.used = true;
    return it->second.value;
  }

  std::optional<std::string> take_required_string(const std::string& key) {
    auto v = take_string(key);
    if (!v) note("missing required key '" + key + "'");
    return v;
  }

  bool take_double(const std::string& key, double& target) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    it->second.used = true;
    char* end = nullptr;
    const double v = std::strtod(it->second.value.c_str(), &end);
    if (it->second.value.empty() || end != it->second.value.c_str() + it->second.value.size()) {
      note(it->second.line, "key '" + key + "' is not a number: '" + it->second.value + "'");
      return false;
    }
    target = v;
    return true;
  }

  bool take_int(const std::string& key, int& target) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    it->second.used = true;
    char* end = nullptr;
    const long v = std::strtol(it->second.value.c_str(), &end, 10);
    if (it->second.value.empty() || end != it->second.value.c_str() + it->second.value.size() ||
        v < INT_MIN || v > INT_MAX) {
      note(it->second.line, "key '" + key + "' is not an integer: '" + it->second.value + "'");
      return false;
    }
    target = int(v);
    return true;
  }

  bool take_u64(const std::string& key, std::uint64_t& target) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    it->second.used = true;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(it->second.value.c_str(), &end, 10);
    if (it->second.value.empty() || end != it->second.value.c_str() + it->second.value.size() ||
        it->second.value.front() == '-') {
      note(it->second.line, "key '" + key + "' is not a non-negative integer: '" +
                                it->second.value + "'");
      return false;
    }
    target = v;
    return true;
  }

  bool take_bool(const std::string& key, bool& target) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    it->second.used = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1" || v == "yes" || v == "on") target = true;
    else if (v == "false" || v == "0" || v == "no" || v == "off") target = false;
    else {
      note(it->second.line, "key '" + key + "' is not a boolean: '" + v + "'");
      return false;
    }
    return true;
  }

  void finish() {
    for (const auto& [key, slot] : entries_)
      if (!slot.used) note(slot.line, "unknown key '" + key + "'");
  }

  void note(const std::string& msg) { note(0, msg); }

  void note(int line, const std::string& msg) {
    std::string where = path_;
    if (line > 0) where += ":" + std::to_string(line);
    problems_.push_back(where + ": [" + section_ + "] " + msg);
  }

 private:
  struct Slot {
    std::string value;
    int line;
    bool used;
  };

  std::string path_;
  std::string section_;
  std::vector<std::string>& problems_;
  std::map<std::string, Slot> entries_;
};

inline bool filesystem_safe(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
      return false;
  return true;
}

inline void require_file(const std::string& path, SectionReader& reader) {
  if (!path.empty() && !std::filesystem::exists(path))
    reader.note("file not found: " + path);
}

inline DatasetSpec parse_dataset(SectionReader& reader) {
  DatasetSpec ds;
  const auto type = reader.take_required_string("type");
  if (!type) {
    reader.finish();
    return ds;
  }
  if (*type == "synthetic") {
    ds.kind = DatasetSpec::Kind::synthetic;
    reader.take_double("alpha", ds.synthetic.alpha);
    reader.take_double("beta", ds.synthetic.beta);
    reader.take_bool("iid", ds.synthetic.iid);
    reader.take_int("devices", ds.synthetic.num_devices);
    reader.take_int("features", ds.synthetic.num_features);
    reader.take_int("classes", ds.synthetic.num_classes);
    reader.take_double("sample_log_mean", ds.synthetic.sample_log_mean);
    reader.take_double("sample_log_sigma", ds.synthetic.sample_log_sigma);
    reader.take_int("min_samples", ds.synthetic.min_samples);
    reader.take_int("max_samples", ds.synthetic.max_samples);
    reader.take_double("train_fraction", ds.synthetic.train_fraction);
    ds.synthetic_seed_set = reader.take_u64("seed", ds.synthetic.seed);
    try {
      check_synthetic_spec(ds.synthetic);
    } catch (const InvalidInput& e) {
      reader.note(e.what());
    }
  } else if (*type == "idx") {
    ds.kind = DatasetSpec::Kind::idx;
    if (auto v = reader.take_required_string("train_images")) ds.train_images = *v;
    if (auto v = reader.take_required_string("train_labels")) ds.train_labels = *v;
    if (auto v = reader.take_required_string("test_images")) ds.test_images = *v;
    if (auto v = reader.take_required_string("test_labels")) ds.test_labels = *v;
    reader.take_int("devices", ds.idx_devices);
    reader.take_int("shards_per_device", ds.shards_per_device);
    ds.idx_seed_set = reader.take_u64("seed", ds.idx_seed);
    if (ds.idx_devices < 1) reader.note("devices must be >= 1");
    if (ds.shards_per_device < 1) reader.note("shards_per_device must be >= 1");
    for (const auto& p : {ds.train_images, ds.train_labels, ds.test_images, ds.test_labels})
      require_file(p, reader);
  } else if (*type == "csv") {
    ds.kind = DatasetSpec::Kind::csv;
    if (auto v = reader.take_required_string("dir")) ds.csv_dir = *v;
    if (!ds.csv_dir.empty() && !std::filesystem::is_directory(ds.csv_dir))
      reader.note("directory not found: " + ds.csv_dir);
  } else {
    reader.note("unknown dataset type '" + *type +
                "' (expected synthetic, idx, or csv)");
  }
  reader.finish();
  return ds;
}

inline RunConfig parse_run(SectionReader& reader) {
  RunConfig cfg;
  if (auto s = reader.take_required_string("scheme")) {
    if (auto scheme = parse_scheme(*s)) cfg.scheme = *scheme;
    else reader.note("unknown scheme '" + *s + "'");
  }
  reader.take_int("rounds", cfg.rounds);
  reader.take_int("devices_per_round", cfg.devices_per_round);
  reader.take_int("k2", cfg.k2);
  reader.take_int("pool_size", cfg.pool_size);
  reader.take_int("eval_every", cfg.eval_every);
  reader.take_double("learning_rate", cfg.local.learning_rate);
  reader.take_int("batch_size", cfg.local.batch_size);
  reader.take_double("mu", cfg.local.proximal_mu);
  reader.take_int("epochs_min", cfg.local.min_epochs);
  reader.take_int("epochs_max", cfg.local.max_epochs);
  double beta = 0.0;
  if (reader.take_double("beta", beta)) cfg.beta_override = beta;
  if (reader.has("seed")) {
    reader.take_string("seed");
    reader.note("per-run seed is not allowed; the experiment seed is shared so "
                "device selections stay comparable across runs");
  }
  reader.finish();
  return cfg;
}

// Fleet size knowable without building the dataset, for validating runs.
inline std::optional<int> declared_num_devices(const DatasetSpec& ds) {
  switch (ds.kind) {
    case DatasetSpec::Kind::synthetic:
      return ds.synthetic.num_devices;
    case DatasetSpec::Kind::idx:
      return ds.idx_devices;
    case DatasetSpec::Kind::csv: {
      if (!std::filesystem::is_directory(ds.csv_dir)) return std::nullopt;
      int n = 0;
      while (std::filesystem::exists(std::filesystem::path(ds.csv_dir) /
                                     ("device_" + std::to_string(n) + ".csv")))
        ++n;
      return n;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Parses and semantically validates an experiment spec without building the
// dataset or running anything. Every detectable violation lands in the
// report; only structural file faults throw.
inline SpecReport load_spec(const std::string& path) {
  SpecReport report;
  const auto sections = detail::parse_ini(path);

  bool saw_experiment = false, saw_dataset = false;
  for (const auto& sec : sections) {
    const std::string where = path + ":" + std::to_string(sec.line);
    if (sec.name == "experiment") {
      if (saw_experiment) {
        report.problems.push_back(where + ": duplicate [experiment] section");
        continue;
      }
      saw_experiment = true;
      detail::SectionReader reader(path, sec, report.problems);
      reader.take_u64("seed", report.spec.seed);
      if (auto v = reader.take_string("output")) report.spec.output_dir = *v;
      reader.take_bool("trace_alphas", report.spec.trace_alphas);
      reader.finish();
    } else if (sec.name == "dataset") {
      if (saw_dataset) {
        report.problems.push_back(where + ": duplicate [dataset] section");
        continue;
      }
      saw_dataset = true;
      detail::SectionReader reader(path, sec, report.problems);
      report.spec.dataset = detail::parse_dataset(reader);
    } else if (sec.name.rfind("run ", 0) == 0) {
      const std::string name = detail::trim(sec.name.substr(4));
      if (!detail::filesystem_safe(name)) {
        report.problems.push_back(where + ": run name '" + name +
                                  "' must be non-empty and filesystem-safe");
        continue;
      }
      for (const auto& existing : report.spec.runs)
        if (existing.name == name)
          report.problems.push_back(where + ": duplicate run name '" + name + "'");
      detail::SectionReader reader(path, sec, report.problems);
      report.spec.runs.push_back({name, detail::parse_run(reader)});
    } else {
      report.problems.push_back(where + ": unknown section [" + sec.name +
                                "] (expected [experiment], [dataset], or [run <name>])");
    }
  }

  if (!saw_dataset) report.problems.push_back(path + ": missing [dataset] section");
  if (report.spec.runs.empty())
    report.problems.push_back(path + ": no [run <name>] sections");

  const auto fleet = detail::declared_num_devices(report.spec.dataset);
  for (const auto& nr : report.spec.runs)
    for (const auto& problem :
         validate_run_config(nr.config, fleet.value_or(INT_MAX)))
      report.problems.push_back(path + ": [run " + nr.name + "] " + problem);
  return report;
}

inline std::vector<std::string> validate_spec(const std::string& path) {
  try {
    return load_spec(path).problems;
  } catch (const ParseError& e) {
    return {e.what()};
  }
}

inline ExperimentSpec load_spec_or_throw(const std::string& path) {
  SpecReport report = load_spec(path);
  if (!report.ok())
    throw ParseError(path + ": invalid spec:\n  " +
                     detail::join(report.problems, "\n  "));
  return std::move(report.spec);
}

// Materializes the dataset a spec describes. Synthetic and partition seeds
// default to the experiment master seed unless the spec pinned their own.
inline FederatedDataset build_dataset(const DatasetSpec& ds, std::uint64_t master_seed) {
  switch (ds.kind) {
    case DatasetSpec::Kind::synthetic: {
      SyntheticSpec s = ds.synthetic;
      if (!ds.synthetic_seed_set) s.seed = master_seed;
      return generate_synthetic(s);
    }
    case DatasetSpec::Kind::idx: {
      const LabeledDataset train = load_idx(ds.train_images, ds.train_labels);
      FederatedDataset fed =
          partition(train, ds.idx_devices, ds.shards_per_device,
                    ds.idx_seed_set ? ds.idx_seed : master_seed);
      fed.test = load_idx(ds.test_images, ds.test_labels);
      return fed;
    }
    case DatasetSpec::Kind::csv:
      return load_csv_dataset(ds.csv_dir);
  }
  throw InvalidInput("build_dataset: unknown dataset kind");
}

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  return out;
}

inline void write_metrics(const std::filesystem::path& path,
                          const std::vector<RoundRecord>& records) {
  auto out = open_for_write(path);
  out << "round,train_loss,test_accuracy,delta_norm,bound_value,selected\n";
  for (const auto& rec : records) {
    out << rec.round << ',' << csv::format_double(rec.train_loss) << ','
        << csv::format_double(rec.test_accuracy) << ','
        << csv::format_double(rec.combined_delta_norm) << ',';
    if (rec.bound_value) out << csv::format_double(*rec.bound_value);
    out << ',';
    for (std::size_t i = 0; i < rec.selected_devices.size(); ++i) {
      if (i) out << ' ';
      out << rec.selected_devices[i];
    }
    out << '\n';
  }
}

inline void write_alphas(const std::filesystem::path& path,
                         const std::vector<RoundRecord>& records) {
  auto out = open_for_write(path);
  out << "round,device_id,alpha\n";
  for (const auto& rec : records) {
    if (!rec.alphas) continue;
    for (const auto& [device_id, alpha] : *rec.alphas)
      out << rec.round << ',' << device_id << ',' << csv::format_double(alpha) << '\n';
  }
}

inline void write_summary(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, std::vector<RoundRecord>>>& finished) {
  auto out = open_for_write(path);
  out << "run";
  for (double level : kSummaryLevels) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",rounds_to_%g", level);
    out << buf;
  }
  out << '\n';
  for (const auto& [name, records] : finished) {
    out << name;
    for (double level : kSummaryLevels) {
      out << ',';
      if (const auto r = rounds_to_accuracy(records, level)) out << *r;
    }
    out << '\n';
  }
}

}  // namespace detail

// Executes every run against the shared dataset, writing per-run
// metrics.csv (and alphas.csv when traced) plus one summary.csv. A failing
// run has its partial output removed and the remaining runs still execute;
// the return value is nonzero iff any run failed.
inline int run_experiment(const ExperimentSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (out_dir.empty()) throw InvalidInput("run_experiment: empty output directory");
  const FederatedDataset data = build_dataset(spec.dataset, spec.seed);
  fs::create_directories(out_dir);

  bool any_failed = false;
  std::vector<std::pair<std::string, std::vector<RoundRecord>>> finished;
  for (const auto& nr : spec.runs) {
    RunConfig cfg = nr.config;
    cfg.seed = spec.seed;
    const fs::path run_dir = fs::path(out_dir) / nr.name;
    try {
      auto records = run(cfg, data);
      fs::create_directories(run_dir);
      detail::write_metrics(run_dir / "metrics.csv", records);
      bool any_alphas = false;
      for (const auto& rec : records) any_alphas |= rec.alphas.has_value();
      if (spec.trace_alphas && any_alphas)
        detail::write_alphas(run_dir / "alphas.csv", records);
      finished.emplace_back(nr.name, std::move(records));
    } catch (const std::exception& e) {
      std::cerr << "run '" << nr.name << "' failed: " << e.what() << '\n';
      std::error_code ec;
      fs::remove_all(run_dir, ec);
      any_failed = true;
    }
  }
  detail::write_summary(fs::path(out_dir) / "summary.csv", finished);
  return any_failed ? 1 : 0;
}

// Generates the spec's synthetic dataset as a CSV directory, the on-disk
// form the csv dataset type reads back.
inline void generate_dataset_files(const ExperimentSpec& spec, const std::string& out_dir) {
  if (spec.dataset.kind != DatasetSpec::Kind::synthetic)
    throw InvalidInput("gen-data: dataset type must be synthetic");
  save_csv_dataset(build_dataset(spec.dataset, spec.seed), out_dir);
}

// Output directory precedence: command line, then the spec's output key,
// then $FEDCTX_OUT, then ./fedctx-out.
inline std::string resolve_output_dir(const std::string& cli_out,
                                      const ExperimentSpec& spec) {
  if (!cli_out.empty()) return cli_out;
  if (!spec.output_dir.empty()) return spec.output_dir;
  if (const char* env = std::getenv("FEDCTX_OUT"); env && *env) return env;
  return "fedctx-out";
}

}  // namespace fedctx
