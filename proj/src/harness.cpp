#include "smprompt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "fnv.hpp"
#include "smprompt/error.hpp"

namespace smprompt {

using nlohmann::json;

namespace {

template <typename F>
void parallel_for(std::size_t n, int workers, F&& f) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) f(i);
    });
  for (auto& t : pool) t.join();
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

std::string cell_key(std::uint64_t seed, int bs, double lr) {
  return "seed=" + std::to_string(seed) + " bs=" + std::to_string(bs) + " lr=" + fmt("%g", lr);
}

int argmax(const Vec<double>& p) {
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return static_cast<int>(best);
}

double accuracy(const std::vector<Vec<double>>& probs, const std::vector<int>& gold) {
  if (probs.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hits += argmax(probs[i]) == gold[i];
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

std::vector<int> gold_of(const std::vector<Example>& examples) {
  std::vector<int> g;
  g.reserve(examples.size());
  for (const auto& e : examples) g.push_back(e.label);
  return g;
}

// Renders examples under the configured prompt.
class PromptRenderer {
 public:
  PromptRenderer(const ExperimentConfig& config, const Resources& res)
      : tpl_(parse_template(config.prompt.notation)), config_(config), res_(res) {
    if (tpl_.has_dep_slot() != config.prompt.filter.has_value())
      throw ValidationError(tpl_.has_dep_slot() ? "template has a *dep* slot but no filter is configured"
                                                : "a filter is configured but the template has no *dep* slot");
    if (tpl_.has_meta() != config.prompt.meta.has_value())
      throw ValidationError(tpl_.has_meta() ? "template has meta blocks but no meta prompt is configured"
                                            : "a meta prompt is configured but the template has no meta blocks");
    if (config.prompt.filter && !config.prompt.catalog.contains(*config.prompt.filter))
      throw ValidationError("filter " + config.prompt.filter->label() + " is not in the catalog");
  }

  RenderedInput operator()(const Example& e) const {
    RenderOptions opts;
    opts.max_length = res_.backend->max_length();
    if (config_.prompt.meta) opts.meta = &*config_.prompt.meta;
    DepSnippet snippet;
    if (config_.prompt.filter) {
      auto it = res_.data->parses.find(e.id);
      if (it == res_.data->parses.end())
        throw ValidationError("no dependency annotation for example '" + e.id + "'");
      const auto& f = *config_.prompt.filter;
      const int cap = config_.prompt.max_snippet_tokens;
      snippet = extract(it->second.sent0, f, cap, config_.prompt.catalog);
      if (it->second.sent1) {
        auto more = extract(*it->second.sent1, f, cap, config_.prompt.catalog);
        for (auto& w : more.tokens) {
          if (static_cast<int>(snippet.tokens.size()) >= cap) break;
          snippet.tokens.push_back(std::move(w));
        }
      }
      opts.dep = &snippet;
    }
    return render(tpl_, e, *res_.tokenizer, opts);
  }

  std::vector<RenderedInput> all(const std::vector<Example>& examples) const {
    std::vector<RenderedInput> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back((*this)(e));
    return out;
  }

  const Template& tpl() const { return tpl_; }

 private:
  Template tpl_;
  const ExperimentConfig& config_;
  const Resources& res_;
};

std::vector<MaskLogits> score_all(const lm::LmBackend& backend, const std::vector<RenderedInput>& inputs,
                                  int workers) {
  std::vector<MaskLogits> out(inputs.size());
  std::vector<std::string> errors(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) {
    try {
      out[i] = backend.score(inputs[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);
  return out;
}

std::vector<Vec<double>> predict_all(const std::vector<MaskLogits>& logits,
                                     const MappingEnsemble<double>& ensemble) {
  std::vector<Vec<double>> out;
  out.reserve(logits.size());
  for (const auto& h : logits) out.push_back(predict_ensemble(h, ensemble));
  return out;
}

std::vector<std::span<double>> head_spans(MappingEnsemble<double>& e) {
  std::vector<std::span<double>> s;
  for (auto& h : e.heads) {
    for (auto& w : h.weights) s.emplace_back(w.data(), static_cast<std::size_t>(w.size()));
    s.emplace_back(h.bias.data(), static_cast<std::size_t>(h.bias.size()));
  }
  return s;
}

std::vector<std::span<const double>> head_spans(const std::vector<MappingHead<double>>& heads) {
  std::vector<std::span<const double>> s;
  for (const auto& h : heads) {
    for (const auto& w : h.weights) s.emplace_back(w.data(), static_cast<std::size_t>(w.size()));
    s.emplace_back(h.bias.data(), static_cast<std::size_t>(h.bias.size()));
  }
  return s;
}

struct SeedInputs {
  std::uint64_t seed = 0;
  std::vector<RenderedInput> train, dev;
  std::vector<int> train_gold, dev_gold;
  std::vector<MaskLogits> train_logits, dev_logits;  // frozen backbone only
  std::string error;
};

struct Shared {
  const ExperimentConfig* config = nullptr;
  const lm::LmBackend* backend = nullptr;
  std::vector<LabelMapping> mappings;
  std::vector<RenderedInput> test;
  std::vector<int> test_gold;
  std::vector<MaskLogits> test_logits;  // frozen backbone only
  bool frozen = false;
};

struct CellJob {
  std::size_t seed_index = 0;
  int batch_size = 0;
  double learning_rate = 0;
};

struct CellRun {
  CellResult result;
  std::vector<Vec<double>> test_probabilities;
  std::vector<std::string> audit;
  std::unique_ptr<lm::LmBackend> model;  // selected checkpoint; null when frozen
  MappingEnsemble<double> ensemble;
};

std::uint64_t cell_stream(const CellJob& job, std::uint64_t seed) {
  detail::Fnv1a h;
  h.add(cell_key(seed, job.batch_size, job.learning_rate));
  return h.value();
}

CellRun run_cell(const CellJob& job, const SeedInputs& in, const Shared& sh) {
  const auto& cfg = *sh.config;
  const auto& tr = cfg.training;
  const std::string key = cell_key(in.seed, job.batch_size, job.learning_rate);
  CellRun run;
  auto& r = run.result;
  r.seed = in.seed;
  r.batch_size = job.batch_size;
  r.learning_rate = job.learning_rate;

  auto ensemble = make_ensemble<double>(sh.mappings, in.seed, cfg.mapping.shared_head);
  if (cfg.mapping.identity_head)
    for (std::size_t b = 0; b < ensemble.heads.size(); ++b)
      ensemble.heads[b] = MappingHead<double>::identity(ensemble.mappings[b]);

  std::unique_ptr<lm::LmBackend> model;
  if (!sh.frozen) model = sh.backend->clone();

  lm::OptimizerConfig oc;
  oc.kind = tr.optimizer;
  oc.learning_rate = job.learning_rate;
  oc.weight_decay = tr.weight_decay;
  lm::Optimizer backbone_opt(oc);
  oc.learning_rate = job.learning_rate * tr.head_lr_scale;
  lm::Optimizer head_opt(oc);

  const bool by_test = cfg.selection == Selection::Test;
  auto logits_of = [&](const std::vector<RenderedInput>& inputs, const std::vector<MaskLogits>& cached) {
    return sh.frozen ? cached : score_all(*model, inputs, 1);
  };

  double best = -1;
  std::unique_ptr<lm::LmBackend> best_model;
  MappingEnsemble<double> best_ensemble;
  auto evaluate_at = [&](int step) {
    const double dev = accuracy(predict_all(logits_of(in.dev, in.dev_logits), ensemble), in.dev_gold);
    double metric = dev;
    std::string line = key + " step=" + std::to_string(step) + " select dev=" + fmt("%.4f", dev);
    if (by_test) {
      metric = accuracy(predict_all(logits_of(sh.test, sh.test_logits), ensemble), sh.test_gold);
      line += " test=" + fmt("%.4f", metric);
    }
    run.audit.push_back(line);
    if (metric > best) {
      best = metric;
      r.selected_step = step;
      r.dev_accuracy = dev;
      best_ensemble = ensemble;
      if (model) best_model = model->clone();
    }
  };

  const std::size_t n = in.train.size();
  if (n == 0) throw ValidationError("empty training split");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  std::mt19937_64 rng(cell_stream(job, in.seed));
  auto next_batch = [&] {
    std::vector<std::size_t> batch;
    const auto size = std::min<std::size_t>(static_cast<std::size_t>(job.batch_size), n);
    while (batch.size() < size) {
      if (cursor == n) {
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_below(rng, i + 1)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    return batch;
  };

  evaluate_at(0);
  for (int step = 1; step <= tr.max_steps && best < 1.0; ++step) {
    const auto batch = next_batch();
    std::vector<int> gold;
    for (auto i : batch) gold.push_back(in.train_gold[i]);

    EnsembleGradients<double> grads;
    double loss = 0;
    auto loss_fn = [&](const std::vector<MaskLogits>& logits) {
      grads = ensemble_gradients(logits, ensemble, gold);
      lm::LossAndGrad out;
      out.loss = ensemble_loss(logits, ensemble, gold).value;
      out.d_logits = grads.logits;
      return out;
    };
    if (sh.frozen) {
      std::vector<MaskLogits> logits;
      for (auto i : batch) logits.push_back(in.train_logits[i]);
      loss = loss_fn(logits).loss;
    } else {
      std::vector<RenderedInput> inputs;
      for (auto i : batch) inputs.push_back(in.train[i]);
      loss = model->train_step(inputs, loss_fn, backbone_opt);
    }
    if (cfg.mapping.train_head) head_opt.step(head_spans(ensemble), head_spans(grads.heads));

    r.steps_run = step;
    r.final_loss = loss;
    if (!std::isfinite(loss)) throw Error("training loss diverged at step " + std::to_string(step));
    if (step % tr.eval_every == 0 || step == tr.max_steps) evaluate_at(step);
  }

  const auto test_logits = sh.frozen ? sh.test_logits : score_all(*best_model, sh.test, 1);
  run.test_probabilities = predict_all(test_logits, best_ensemble);
  r.test_accuracy = accuracy(run.test_probabilities, sh.test_gold);
  run.audit.push_back(key + " step=" + std::to_string(r.selected_step) +
                      " test acc=" + fmt("%.4f", r.test_accuracy));
  run.model = std::move(best_model);
  run.ensemble = std::move(best_ensemble);
  return run;
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["task"] = c.task;
  j["notation"] = c.prompt.notation;
  j["filter"] = c.prompt.filter ? c.prompt.filter->label() : "";
  j["max_snippet_tokens"] = c.prompt.max_snippet_tokens;
  std::vector<std::string> catalog;
  for (const auto& f : c.prompt.catalog.filters()) catalog.push_back(f.label());
  j["catalog"] = catalog;
  if (c.prompt.meta) j["meta"] = {c.prompt.meta->od, c.prompt.meta->sd, c.prompt.meta->td};
  for (const auto& [name, words] : c.mapping.mappings) j["mappings"].push_back({{"name", name}, {"words", words}});
  j["shared_head"] = c.mapping.shared_head;
  j["identity_head"] = c.mapping.identity_head;
  j["train_head"] = c.mapping.train_head;
  j["k"] = c.k;
  j["seeds"] = c.seeds;
  j["batch_sizes"] = c.batch_sizes;
  j["learning_rates"] = c.learning_rates;
  j["max_steps"] = c.training.max_steps;
  j["eval_every"] = c.training.eval_every;
  j["train_backbone"] = c.training.train_backbone;
  j["optimizer"] = c.training.optimizer == lm::OptimizerConfig::Kind::Sgd ? "sgd" : "adamw";
  j["weight_decay"] = c.training.weight_decay;
  j["head_lr_scale"] = c.training.head_lr_scale;
  j["selection"] = c.selection == Selection::Dev ? "dev" : "test";
  return j;
}

void hash_example(detail::Fnv1a& h, const Example& e) {
  h.add(e.id);
  h.add("\x1f");
  h.add(e.sent0);
  h.add(e.sent1 ? "\x1e" + *e.sent1 : "\x1d");
  h.add(std::to_string(e.label));
  h.add("\n");
}

void hash_sentence(detail::Fnv1a& h, const AnnotatedSentence& s) {
  for (const auto& t : s.tokens) h.add(t.form + "\t" + t.pos + "\t" + std::to_string(t.head) + "\t" + t.deprel + "\n");
  h.add("\n");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ValidationError("at least one seed is required");
  if (batch_sizes.empty()) throw ValidationError("at least one batch size is required");
  if (learning_rates.empty()) throw ValidationError("at least one learning rate is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ValidationError("seeds must be distinct");
  for (int bs : batch_sizes)
    if (bs < 1) throw ValidationError("batch sizes must be positive");
  for (double lr : learning_rates)
    if (!(lr >= 0) || !std::isfinite(lr)) throw ValidationError("learning rates must be finite and non-negative");
  if (k < 1) throw ValidationError("k must be at least 1");
  if (training.max_steps < 0) throw ValidationError("max_steps must be non-negative");
  if (training.eval_every < 1) throw ValidationError("eval_every must be at least 1");
  if (mapping.mappings.empty()) throw ValidationError("at least one label mapping is required");
  if (prompt.max_snippet_tokens < 1) throw ValidationError("max_snippet_tokens must be at least 1");
  if (parallelism < 1) throw ValidationError("parallelism must be at least 1");
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  const double n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  a.mean = sum / n;
  double sq = 0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.variance = sq / n;
  auto sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto m = sorted.size() / 2;
  a.median = sorted.size() % 2 ? sorted[m] : (sorted[m - 1] + sorted[m]) / 2.0;
  return a;
}

std::string format_cell(double mean, double variance) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f (%.1f)", mean * 100.0, variance * 1e4);
  return buf;
}

std::string format_gain(double gain) {
  double points = gain * 100.0;
  if (std::fabs(points) < 0.05) points = 0.0;
  return fmt("%+.1f", points);
}

std::string config_hash(const ExperimentConfig& config, const Resources& res) {
  detail::Fnv1a h;
  h.add(config_json(config).dump());
  const auto& d = *res.data;
  h.add(d.name);
  for (const auto& l : d.labels.names()) h.add(l + "\n");
  for (const auto& e : d.pool) hash_example(h, e);
  h.add("\x02");
  for (const auto& e : d.test) hash_example(h, e);
  std::vector<std::string> ids;
  for (const auto& [id, _] : d.parses) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    const auto& p = d.parses.at(id);
    h.add(id);
    hash_sentence(h, p.sent0);
    if (p.sent1) hash_sentence(h, *p.sent1);
  }
  for (std::size_t i = 0; i < res.tokenizer->size(); ++i) h.add(res.tokenizer->word(static_cast<TokenId>(i)) + "\n");
  h.add(res.backend->fingerprint());
  return h.hex();
}

namespace {

void check_resources(const ExperimentConfig& config, const Resources& res) {
  if (!res.data || !res.tokenizer || !res.backend) throw ValidationError("experiment resources are incomplete");
  config.validate();
  if (res.data->test.empty()) throw ValidationError("task '" + res.data->name + "' has no test examples");
  if (res.backend->mask_id() != Tokenizer::kMask)
    throw ValidationError("backend mask id " + std::to_string(res.backend->mask_id()) +
                          " differs from the tokenizer's " + std::to_string(Tokenizer::kMask));
  if (res.tokenizer->size() > res.backend->vocab_size())
    throw ValidationError("tokenizer vocabulary is larger than the backend's");
}

Shared prepare_shared(const ExperimentConfig& config, const Resources& res, const PromptRenderer& renderer) {
  const auto& data = *res.data;
  Shared sh;
  sh.config = &config;
  sh.backend = res.backend;
  sh.frozen = !config.training.train_backbone || !res.backend->trainable();
  for (const auto& [name, words] : config.mapping.mappings) {
    if (words.size() != data.labels.size())
      throw ValidationError("mapping '" + name + "' covers " + std::to_string(words.size()) + " labels, task has " +
                            std::to_string(data.labels.size()));
    sh.mappings.push_back(make_mapping(name, words, *res.tokenizer));
  }
  sh.test = renderer.all(data.test);
  sh.test_gold = gold_of(data.test);
  if (sh.frozen) sh.test_logits = score_all(*res.backend, sh.test, config.parallelism);
  return sh;
}

SeedInputs prepare_seed(std::uint64_t seed, const ExperimentConfig& config, const Resources& res,
                        const PromptRenderer& renderer, const Shared& sh) {
  SeedInputs in;
  in.seed = seed;
  const auto split = sample_kshot(res.data->pool, res.data->labels, config.k, seed);
  in.train = renderer.all(split.train);
  in.dev = renderer.all(split.dev);
  in.train_gold = gold_of(split.train);
  in.dev_gold = gold_of(split.dev);
  if (sh.frozen) {
    in.train_logits = score_all(*res.backend, in.train, config.parallelism);
    in.dev_logits = score_all(*res.backend, in.dev, config.parallelism);
  }
  return in;
}

}  // namespace

TrainedCell train_cell(const ExperimentConfig& config, const Resources& res, std::uint64_t seed, int batch_size,
                       double learning_rate) {
  check_resources(config, res);
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  const PromptRenderer renderer(config, res);
  const Shared sh = prepare_shared(config, res, renderer);
  const SeedInputs in = prepare_seed(seed, config, res, renderer, sh);
  auto run = run_cell({0, batch_size, learning_rate}, in, sh);
  TrainedCell out;
  out.result = run.result;
  out.test_probabilities = std::move(run.test_probabilities);
  out.audit = std::move(run.audit);
  out.model = run.model ? std::move(run.model) : res.backend->clone();
  out.ensemble = std::move(run.ensemble);
  return out;
}

EvalReport run_experiment(const ExperimentConfig& config, const Resources& res) {
  check_resources(config, res);
  const auto& data = *res.data;
  const PromptRenderer renderer(config, res);
  const Shared sh = prepare_shared(config, res, renderer);

  EvalReport report;
  report.name = config.task;
  report.config_hash = config_hash(config, res);
  report.labels = data.labels.names();
  for (const auto& e : data.test) report.test_ids.push_back(e.id);
  report.test_gold = sh.test_gold;

  auto seeds = config.seeds;
  std::sort(seeds.begin(), seeds.end());
  auto batch_sizes = config.batch_sizes;
  std::sort(batch_sizes.begin(), batch_sizes.end());
  auto lrs = config.learning_rates;
  std::sort(lrs.begin(), lrs.end());

  std::vector<SeedInputs> inputs(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    try {
      inputs[s] = prepare_seed(seeds[s], config, res, renderer, sh);
    } catch (const std::exception& e) {
      inputs[s].seed = seeds[s];
      inputs[s].error = e.what();
    }
  }

  std::vector<CellJob> jobs;
  for (std::size_t s = 0; s < seeds.size(); ++s)
    for (int bs : batch_sizes)
      for (double lr : lrs) jobs.push_back({s, bs, lr});

  std::vector<CellRun> runs(jobs.size());
  parallel_for(jobs.size(), config.parallelism, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& in = inputs[job.seed_index];
    auto& run = runs[j];
    if (!in.error.empty()) {
      run.result = {in.seed, job.batch_size, job.learning_rate, 0, 0, 0, 0, 0, in.error};
      return;
    }
    try {
      run = run_cell(job, in, sh);
      run.model.reset();
    } catch (const std::exception& e) {
      run = CellRun{};
      run.result = {in.seed, job.batch_size, job.learning_rate, 0, 0, 0, 0, 0, std::string(e.what())};
    }
  });

  std::vector<double> bests;
  std::size_t j = 0;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::optional<std::size_t> chosen;
    for (std::size_t c = 0; c < batch_sizes.size() * lrs.size(); ++c, ++j) {
      auto& run = runs[j];
      report.cells.push_back(run.result);
      for (auto& line : run.audit) report.audit.push_back(std::move(line));
      if (run.result.error) {
        report.complete = false;
        report.audit.push_back(cell_key(run.result.seed, run.result.batch_size, run.result.learning_rate) +
                               " failed: " + *run.result.error);
        continue;
      }
      if (!chosen || run.result.test_accuracy > runs[*chosen].result.test_accuracy) chosen = j;
    }
    if (!chosen) continue;
    auto& best = runs[*chosen];
    SeedResult sr;
    sr.seed = seeds[s];
    sr.best_accuracy = best.result.test_accuracy;
    sr.batch_size = best.result.batch_size;
    sr.learning_rate = best.result.learning_rate;
    sr.test_probabilities = std::move(best.test_probabilities);
    bests.push_back(sr.best_accuracy);
    report.seeds.push_back(std::move(sr));
  }
  report.summary = aggregate(bests);
  return report;
}

std::vector<KSweepRow> k_sweep(const ExperimentConfig& config, const Resources& res, const std::vector<int>& ks) {
  if (ks.empty()) throw ValidationError("k-sweep needs at least one k");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1) throw ValidationError("k values must be positive");
    if (i > 0 && ks[i] <= ks[i - 1]) throw ValidationError("k values must be strictly increasing");
  }
  std::vector<KSweepRow> rows;
  for (int k : ks) {
    auto c = config;
    c.k = k;
    c.batch_sizes = {config.sweep.batch_size};
    c.learning_rates = {config.sweep.learning_rate};
    c.training.max_steps = config.sweep.max_steps;
    KSweepRow row;
    row.k = k;
    row.report = run_experiment(c, res);
    row.mean = row.report.summary.mean;
    row.variance = row.report.summary.variance;
    row.gain = rows.empty() ? 0.0 : row.mean - rows.back().mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

EvalReport ensemble_report(const std::vector<EvalReport>& members, const std::string& name) {
  if (members.empty()) throw ValidationError("an ensemble needs at least one report");
  const auto& first = members.front();
  detail::Fnv1a h;
  for (const auto& m : members) {
    if (m.labels != first.labels) throw ValidationError("report '" + m.name + "' has a different label set");
    if (m.test_ids != first.test_ids || m.test_gold != first.test_gold)
      throw ValidationError("report '" + m.name + "' was evaluated on a different test set");
    if (m.seeds.size() != first.seeds.size())
      throw ValidationError("report '" + m.name + "' has a different set of completed seeds");
    for (std::size_t s = 0; s < m.seeds.size(); ++s)
      if (m.seeds[s].seed != first.seeds[s].seed)
        throw ValidationError("report '" + m.name + "' has a different set of completed seeds");
    h.add(m.config_hash);
  }

  EvalReport out;
  out.name = name;
  out.config_hash = members.size() == 1 ? first.config_hash : h.hex();
  out.labels = first.labels;
  out.test_ids = first.test_ids;
  out.test_gold = first.test_gold;
  out.complete = std::all_of(members.begin(), members.end(), [](const auto& m) { return m.complete; });
  std::vector<double> bests;
  for (std::size_t s = 0; s < first.seeds.size(); ++s) {
    SeedResult sr;
    sr.seed = first.seeds[s].seed;
    for (std::size_t i = 0; i < first.test_ids.size(); ++i) {
      std::vector<Vec<double>> dists;
      for (const auto& m : members) {
        const auto& probs = m.seeds[s].test_probabilities;
        if (probs.size() != first.test_ids.size())
          throw ValidationError("report '" + m.name + "' lacks test distributions");
        dists.push_back(probs[i]);
      }
      sr.test_probabilities.push_back(average_distributions(dists));
    }
    sr.best_accuracy = accuracy(sr.test_probabilities, out.test_gold);
    if (members.size() == 1) {
      sr.batch_size = first.seeds[s].batch_size;
      sr.learning_rate = first.seeds[s].learning_rate;
    }
    bests.push_back(sr.best_accuracy);
    out.audit.push_back("seed=" + std::to_string(sr.seed) + " joint inference over " +
                        std::to_string(members.size()) + " reports acc=" + fmt("%.4f", sr.best_accuracy));
    out.seeds.push_back(std::move(sr));
  }
  if (members.size() == 1) out.cells = first.cells;
  out.summary = aggregate(bests);
  return out;
}

bool ranks_before(const RankedFilter& a, const RankedFilter& b) {
  if (a.mean != b.mean) return a.mean > b.mean;
  if (a.variance != b.variance) return a.variance < b.variance;
  return a.catalog_index < b.catalog_index;
}

GridSearchResult grid_search(const std::vector<Filter>& candidates, const ExperimentConfig& config,
                             const Resources& res) {
  if (candidates.empty()) throw ValidationError("grid search needs at least one candidate filter");
  if (!parse_template(config.prompt.notation).has_dep_slot())
    throw ValidationError("grid search needs a template with a *dep* slot");

  GridSearchResult out;
  std::vector<std::pair<RankedFilter, EvalReport>> done;
  for (const auto& f : candidates) {
    if (!config.prompt.catalog.contains(f)) {
      out.failed.push_back({f, "filter " + f.label() + " is not in the catalog"});
      continue;
    }
    auto c = config;
    c.prompt.filter = f;
    try {
      auto report = run_experiment(c, res);
      if (report.seeds.empty()) {
        std::string why = "no seed completed";
        for (const auto& cell : report.cells)
          if (cell.error) {
            why += ": " + *cell.error;
            break;
          }
        out.failed.push_back({f, why});
        continue;
      }
      RankedFilter r{f, report.summary.mean, report.summary.variance, config.prompt.catalog.index_of(f)};
      done.emplace_back(r, std::move(report));
    } catch (const std::exception& e) {
      out.failed.push_back({f, e.what()});
    }
  }
  std::stable_sort(done.begin(), done.end(),
                   [](const auto& a, const auto& b) { return ranks_before(a.first, b.first); });
  for (auto& [r, report] : done) {
    out.ranking.push_back(r);
    out.reports.push_back(std::move(report));
  }
  return out;
}

void write_report(std::ostream& out, const EvalReport& r) {
  json j;
  j["format"] = "smprompt-report 1";
  j["name"] = r.name;
  j["config_hash"] = r.config_hash;
  j["labels"] = r.labels;
  j["test_ids"] = r.test_ids;
  j["test_gold"] = r.test_gold;
  j["complete"] = r.complete;
  j["summary"] = {{"mean", r.summary.mean}, {"variance", r.summary.variance}, {"median", r.summary.median}};
  j["seeds"] = json::array();
  for (const auto& s : r.seeds) {
    json p = json::array();
    for (const auto& v : s.test_probabilities) p.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    j["seeds"].push_back({{"seed", s.seed},
                          {"best_accuracy", s.best_accuracy},
                          {"batch_size", s.batch_size},
                          {"learning_rate", s.learning_rate},
                          {"test_probabilities", p}});
  }
  j["cells"] = json::array();
  for (const auto& c : r.cells) {
    json cj = {{"seed", c.seed},
               {"batch_size", c.batch_size},
               {"learning_rate", c.learning_rate},
               {"selected_step", c.selected_step},
               {"steps_run", c.steps_run},
               {"dev_accuracy", c.dev_accuracy},
               {"test_accuracy", c.test_accuracy},
               {"final_loss", c.final_loss}};
    if (c.error) cj["error"] = *c.error;
    j["cells"].push_back(cj);
  }
  j["audit"] = r.audit;
  out << j.dump(1) << '\n';
}

EvalReport read_report(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("report is not valid JSON: ") + e.what(), 0);
  }
  try {
    if (j.value("format", "") != "smprompt-report 1") throw ValidationError("not an smprompt report");
    EvalReport r;
    r.name = j.at("name");
    r.config_hash = j.at("config_hash");
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    r.test_gold = j.at("test_gold").get<std::vector<int>>();
    r.complete = j.at("complete");
    r.summary = {j.at("summary").at("mean"), j.at("summary").at("variance"), j.at("summary").at("median")};
    for (const auto& s : j.at("seeds")) {
      SeedResult sr;
      sr.seed = s.at("seed");
      sr.best_accuracy = s.at("best_accuracy");
      sr.batch_size = s.at("batch_size");
      sr.learning_rate = s.at("learning_rate");
      for (const auto& p : s.at("test_probabilities")) {
        auto v = p.get<std::vector<double>>();
        sr.test_probabilities.push_back(Eigen::Map<Vec<double>>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      r.seeds.push_back(std::move(sr));
    }
    for (const auto& c : j.at("cells")) {
      CellResult cr;
      cr.seed = c.at("seed");
      cr.batch_size = c.at("batch_size");
      cr.learning_rate = c.at("learning_rate");
      cr.selected_step = c.at("selected_step");
      cr.steps_run = c.at("steps_run");
      cr.dev_accuracy = c.at("dev_accuracy");
      cr.test_accuracy = c.at("test_accuracy");
      cr.final_loss = c.at("final_loss");
      if (c.contains("error")) cr.error = c.at("error").get<std::string>();
      r.cells.push_back(std::move(cr));
    }
    r.audit = j.at("audit").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "name\taccuracy\tmedian\tseeds\n";
  for (const auto& r : reports)
    out << r.name << '\t' << format_cell(r.summary.mean, r.summary.variance) << '\t'
        << fmt("%.1f", r.summary.median * 100.0) << '\t' << r.seeds.size() << (r.complete ? "" : " (incomplete)")
        << '\n';
}

}  // namespace smprompt
