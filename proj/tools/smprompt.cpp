// Command-line front end. Exit codes: 0 success, 1 invalid input or
// configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smprompt/config.hpp"
#include "smprompt/error.hpp"
#include "smprompt/harness.hpp"
#include "smprompt/lm/tiny_mlm.hpp"

namespace fs = std::filesystem;
using namespace smprompt;

namespace {

struct Options {
  std::string config;
  std::string seed_list;
  std::string backend;
  std::string report;
  std::vector<std::string> overrides;
  std::string ks;
  std::vector<std::string> members;
  int verbosity = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ValidationError(std::string(what) + ": '" + item + "' is not an integer");
    out.push_back(static_cast<T>(v));
  }
  if (out.empty()) throw ValidationError(std::string(what) + " is empty");
  return out;
}

class Session {
 public:
  explicit Session(const Options& o) : opts_(o) {
    if (o.config.empty()) throw ValidationError("--config is required");
    auto overrides = o.overrides;
    if (!o.backend.empty()) overrides.push_back("lm.backend=\"" + o.backend + "\"");
    settings_ = load_settings(o.config, overrides);
    if (!o.seed_list.empty()) {
      settings_.experiment.seeds = parse_numbers<std::uint64_t>(o.seed_list, "--seed-list");
      settings_.experiment.validate();
    }
  }

  Settings& settings() { return settings_; }
  const ExperimentConfig& experiment() const { return settings_.experiment; }

  Workspace& workspace() {
    if (!workspace_) {
      log("loading task '" + settings_.task.schema.name + "'");
      workspace_ = std::make_unique<Workspace>(open_workspace(settings_));
      log("backend " + workspace_->backend->name() + ", vocabulary " +
          std::to_string(workspace_->tokenizer->size()));
    }
    return *workspace_;
  }

  /// Resolves an output file inside the output directory.
  fs::path output(const std::string& fallback) const {
    const fs::path dir = fs::weakly_canonical(fs::absolute(settings_.output_dir));
    fs::path p = opts_.report.empty() ? fs::path(fallback) : fs::path(opts_.report);
    p = fs::weakly_canonical(p.is_absolute() ? p : dir / p);
    const auto rel = p.lexically_relative(dir);
    if (rel.empty() || *rel.begin() == "..")
      throw ValidationError("report path " + p.string() + " is outside the output directory " + dir.string());
    fs::create_directories(p.parent_path());
    return p;
  }

  fs::path sibling(const fs::path& report, const std::string& suffix) const {
    auto p = report;
    p.replace_extension(suffix);
    return p;
  }

  void log(const std::string& line) const {
    if (opts_.verbosity > 0) std::cerr << "[smprompt] " << line << '\n';
  }
  void trace(const std::vector<std::string>& lines) const {
    if (opts_.verbosity > 1)
      for (const auto& l : lines) std::cerr << "[smprompt]   " << l << '\n';
  }

 private:
  const Options& opts_;
  Settings settings_;
  std::unique_ptr<Workspace> workspace_;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_json_report(const fs::path& path, const EvalReport& report) {
  auto out = open_out(path);
  write_report(out, report);
}

int cmd_sample(const Options& o) {
  Session s(o);
  const auto data = load_task(s.settings().task);
  std::vector<KShotSplit> splits;
  for (auto seed : s.experiment().seeds) splits.push_back(sample_kshot(data.pool, data.labels, s.experiment().k, seed));
  const auto path = s.output("splits.json");
  auto out = open_out(path);
  write_split_manifest(out, splits);
  std::cout << "wrote " << splits.size() << " splits of k=" << s.experiment().k << " to " << path.string() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  Session s(o);
  const auto& e = s.experiment();
  auto& ws = s.workspace();
  const auto seed = e.seeds.front();
  auto c = e;
  c.training.max_steps = e.sweep.max_steps;
  s.log("training seed " + std::to_string(seed) + ", bs " + std::to_string(e.sweep.batch_size));
  auto cell = train_cell(c, ws.resources(), seed, e.sweep.batch_size, e.sweep.learning_rate);
  s.trace(cell.audit);

  const auto report = s.output("train.json");
  nlohmann::json j;
  j["seed"] = cell.result.seed;
  j["batch_size"] = cell.result.batch_size;
  j["learning_rate"] = cell.result.learning_rate;
  j["selected_step"] = cell.result.selected_step;
  j["steps_run"] = cell.result.steps_run;
  j["dev_accuracy"] = cell.result.dev_accuracy;
  j["test_accuracy"] = cell.result.test_accuracy;
  j["final_loss"] = cell.result.final_loss;
  if (auto* tiny = dynamic_cast<const lm::TinyMlm*>(cell.model.get())) {
    const auto ckpt = s.sibling(report, ".ckpt");
    tiny->save(ckpt);
    j["checkpoint"] = ckpt.filename().string();
  }
  open_out(report) << j.dump(1) << '\n';
  std::cout << "seed " << seed << ": dev " << cell.result.dev_accuracy << ", test " << cell.result.test_accuracy
            << " at step " << cell.result.selected_step << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  Session s(o);
  auto& ws = s.workspace();
  const auto report = run_experiment(s.experiment(), ws.resources());
  s.trace(report.audit);
  const auto path = s.output("report.json");
  write_json_report(path, report);
  write_report_table(std::cout, {report});
  return report.seeds.empty() ? 2 : 0;
}

int cmd_search(const Options& o) {
  Session s(o);
  auto& ws = s.workspace();
  auto candidates = s.settings().candidates;
  if (candidates.empty()) candidates = s.experiment().prompt.catalog.filters();
  s.log("searching " + std::to_string(candidates.size()) + " filters");
  const auto result = grid_search(candidates, s.experiment(), ws.resources());

  const auto path = s.output("search.json");
  nlohmann::json j;
  j["ranking"] = nlohmann::json::array();
  for (std::size_t i = 0; i < result.ranking.size(); ++i) {
    const auto& r = result.ranking[i];
    j["ranking"].push_back({{"filter", r.filter.label()},
                            {"mean", r.mean},
                            {"variance", r.variance},
                            {"catalog_index", r.catalog_index},
                            {"config_hash", result.reports[i].config_hash}});
  }
  j["failed"] = nlohmann::json::array();
  for (const auto& f : result.failed) j["failed"].push_back({{"filter", f.filter.label()}, {"error", f.error}});
  open_out(path) << j.dump(1) << '\n';

  auto table = open_out(s.sibling(path, ".tsv"));
  for (auto* out : {static_cast<std::ostream*>(&std::cout), static_cast<std::ostream*>(&table)}) {
    *out << "rank\tfilter\tmean\tvariance\taccuracy\n";
    for (std::size_t i = 0; i < result.ranking.size(); ++i) {
      const auto& r = result.ranking[i];
      *out << i + 1 << '\t' << r.filter.label() << '\t' << r.mean << '\t' << r.variance << '\t'
           << format_cell(r.mean, r.variance) << '\n';
    }
  }
  for (const auto& f : result.failed) std::cerr << "filter " << f.filter.label() << " failed: " << f.error << '\n';
  return result.ranking.empty() ? 2 : 0;
}

int cmd_k_sweep(const Options& o) {
  Session s(o);
  const auto ks = o.ks.empty() ? s.settings().ks : parse_numbers<int>(o.ks, "--ks");
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (ks[i] <= ks[i - 1]) throw ValidationError("k values must be strictly increasing");
  auto& ws = s.workspace();
  const auto rows = k_sweep(s.experiment(), ws.resources(), ks);
  const auto path = s.output("k_sweep.json");
  nlohmann::json j = nlohmann::json::array();
  std::cout << "k\taccuracy\tgain\n";
  for (const auto& r : rows) {
    std::cout << r.k << '\t' << format_cell(r.mean, r.variance) << '\t' << format_gain(r.gain) << '\n';
    j.push_back({{"k", r.k},
                 {"mean", r.mean},
                 {"variance", r.variance},
                 {"gain", r.gain},
                 {"config_hash", r.report.config_hash}});
  }
  open_out(path) << j.dump(1) << '\n';
  return 0;
}

int cmd_ensemble(const Options& o) {
  Session s(o);
  if (o.members.empty()) throw ValidationError("ensemble needs at least one member report");
  std::vector<EvalReport> members;
  for (const auto& m : o.members) {
    std::ifstream in(m);
    if (!in) throw ValidationError("cannot open report: " + m);
    members.push_back(read_report(in));
  }
  auto joint = ensemble_report(members);
  const auto path = s.output("ensemble.json");
  write_json_report(path, joint);
  members.push_back(joint);
  write_report_table(std::cout, members);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dependency, metadata and multi-label prompts for few-shot classification.", "smprompt"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string("smprompt ") + SMPROMPT_VERSION);

  Options o;
  app.add_option("-c,--config", o.config, "Experiment config file (JSON)");
  app.add_option("--seed-list", o.seed_list, "Comma-separated seeds, replacing harness.seeds");
  app.add_option("--backend", o.backend, "Masked LM backend")->check(CLI::IsMember({"tiny", "remote"}));
  app.add_option("--report", o.report, "Report path, inside the output directory");
  app.add_option("--set", o.overrides, "Config override key=value (repeatable)")->allow_extra_args(false);
  app.add_flag("-v,--verbose", o.verbosity, "Progress on stderr; twice for the audit log");

  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
  commands.emplace_back(app.add_subcommand("sample", "Write the K-shot split manifest"), cmd_sample);
  commands.emplace_back(app.add_subcommand("train", "Fine-tune one cell and save the checkpoint"), cmd_train);
  commands.emplace_back(app.add_subcommand("eval", "Run the full few-shot protocol"), cmd_eval);
  commands.emplace_back(app.add_subcommand("search-filters", "Grid-search dependency filters"), cmd_search);
  auto* ksweep = app.add_subcommand("k-sweep", "Evaluate a sequence of K values");
  ksweep->add_option("--ks", o.ks, "Comma-separated increasing K values");
  commands.emplace_back(ksweep, cmd_k_sweep);
  auto* ens = app.add_subcommand("ensemble", "Joint inference over member reports");
  ens->add_option("members", o.members, "Member report files")->check(CLI::ExistingFile);
  commands.emplace_back(ens, cmd_ensemble);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (const auto& [cmd, run] : commands)
      if (cmd->parsed()) return run(o);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
