#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smprompt/corpus.hpp"
#include "smprompt/depfilter.hpp"
#include "smprompt/lm/backend.hpp"
#include "smprompt/mapping.hpp"
#include "smprompt/template.hpp"
#include "smprompt/tokenizer.hpp"

namespace smprompt {

/// Everything an experiment reads but does not configure.
struct TaskData {
  std::string name;
  LabelSet labels;
  std::vector<Example> pool;  // K-shot splits are drawn from here
  std::vector<Example> test;
  ParseIndex parses;          // by example id; needed only for Dep-prompts
};

struct Resources {
  const TaskData* data = nullptr;
  const Tokenizer* tokenizer = nullptr;
  const lm::LmBackend* backend = nullptr;  // prototype, cloned per cell
};

enum class Selection {
  Dev,   // checkpoint chosen by dev accuracy, test only reported
  Test,  // checkpoint chosen by test accuracy (looser reading, for comparison)
};

struct PromptSettings {
  std::string notation;
  std::optional<Filter> filter;
  int max_snippet_tokens = kDefaultSnippetTokens;
  FilterCatalog catalog = FilterCatalog::standard();
  std::optional<MetaPrompt> meta;  // already composed
};

struct MappingSettings {
  /// Per mapping, per label (label order), the label words.
  std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>> mappings;
  bool shared_head = false;
  bool identity_head = false;  // unit weights instead of Xavier draws
  bool train_head = true;
};

struct TrainingSettings {
  int max_steps = 1000;
  int eval_every = 50;
  bool train_backbone = true;
  lm::OptimizerConfig::Kind optimizer = lm::OptimizerConfig::Kind::AdamW;
  double weight_decay = 0.0;
  double head_lr_scale = 1.0;  // mapping-head learning rate = lr * scale
};

struct SweepSettings {
  int batch_size = 4;
  double learning_rate = 1e-5;
  int max_steps = 1000;
};

struct ExperimentConfig {
  std::string task;
  PromptSettings prompt;
  MappingSettings mapping;
  int k = 16;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<int> batch_sizes{4, 8, 16};
  std::vector<double> learning_rates{1e-5, 2e-5, 5e-5};
  TrainingSettings training;
  SweepSettings sweep;
  Selection selection = Selection::Dev;
  int parallelism = 1;

  void validate() const;
};

struct CellResult {
  std::uint64_t seed = 0;
  int batch_size = 0;
  double learning_rate = 0;
  int selected_step = 0;
  int steps_run = 0;
  double dev_accuracy = 0;
  double test_accuracy = 0;
  double final_loss = 0;
  std::optional<std::string> error;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double best_accuracy = 0;
  int batch_size = 0;
  double learning_rate = 0;
  /// Test-set label distributions of the chosen cell, for joint inference.
  std::vector<Vec<double>> test_probabilities;
};

struct Aggregate {
  double mean = 0;
  double variance = 0;  // population variance
  double median = 0;
};

struct EvalReport {
  std::string name;
  std::string config_hash;
  std::vector<std::string> labels;
  std::vector<std::string> test_ids;
  std::vector<int> test_gold;
  std::vector<SeedResult> seeds;
  std::vector<CellResult> cells;  // sorted by (seed, batch size, learning rate)
  Aggregate summary;
  bool complete = true;
  /// Ordered record of checkpoint selections and test evaluations.
  std::vector<std::string> audit;
};

Aggregate aggregate(const std::vector<double>& values);

/// Accuracy and variance on the 0-100 scale, one decimal: "87.2 (3.4)".
std::string format_cell(double mean, double variance);

/// Sign-prefixed difference in percentage points: "+0.0", "-1.8".
std::string format_gain(double gain);

/// Hash over the experiment config, the task data and the backend
/// fingerprint. Reports with equal hashes are identical.
std::string config_hash(const ExperimentConfig& config, const Resources& resources);

EvalReport run_experiment(const ExperimentConfig& config, const Resources& resources);

struct TrainedCell {
  CellResult result;
  std::vector<Vec<double>> test_probabilities;
  std::vector<std::string> audit;
  std::unique_ptr<lm::LmBackend> model;  // the selected checkpoint
  MappingEnsemble<double> ensemble;
};

/// One grid cell of run_experiment, keeping the selected model and heads.
TrainedCell train_cell(const ExperimentConfig& config, const Resources& resources, std::uint64_t seed,
                       int batch_size, double learning_rate);

struct KSweepRow {
  int k = 0;
  double mean = 0;
  double variance = 0;
  double gain = 0;  // mean(k_i) - mean(k_{i-1}); 0 for the first row
  EvalReport report;
};

/// One run per k with the sweep's fixed batch size, learning rate and step
/// budget. ks must be strictly increasing.
std::vector<KSweepRow> k_sweep(const ExperimentConfig& config, const Resources& resources,
                               const std::vector<int>& ks);

/// Joint inference: per seed, the members' test distributions are averaged
/// and re-scored. Members must share labels, test set and seeds.
EvalReport ensemble_report(const std::vector<EvalReport>& members, const std::string& name = "Ensemble");

struct RankedFilter {
  Filter filter;
  double mean = 0;
  double variance = 0;
  std::size_t catalog_index = 0;
};

struct FailedFilter {
  Filter filter;
  std::string error;
};

struct GridSearchResult {
  std::vector<RankedFilter> ranking;
  std::vector<FailedFilter> failed;
  std::vector<EvalReport> reports;  // parallel to ranking
};

/// Sort order of the grid search: mean accuracy descending, then lower
/// variance, then catalog order.
bool ranks_before(const RankedFilter& a, const RankedFilter& b);

/// Evaluates every candidate filter with the full protocol and ranks them.
/// A candidate whose evaluation throws, or yields no successful seed, is
/// recorded in `failed` and the sweep continues.
GridSearchResult grid_search(const std::vector<Filter>& candidates, const ExperimentConfig& config,
                             const Resources& resources);

void write_report(std::ostream& out, const EvalReport& report);
EvalReport read_report(std::istream& in);
void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace smprompt
