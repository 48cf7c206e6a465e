#pragma once

// Small end-to-end setups on the generated tasks.

#include <memory>

#include "smprompt/harness.hpp"
#include "smprompt/lm/tiny_mlm.hpp"
#include "smprompt/synthetic.hpp"

namespace fixture {

struct Toy {
  smprompt::synthetic::Task task;
  std::unique_ptr<smprompt::Tokenizer> tokenizer;
  std::unique_ptr<smprompt::lm::TinyMlm> model;
  smprompt::ExperimentConfig config;

  smprompt::Resources resources() const { return {&task.data, tokenizer.get(), model.get()}; }
};

inline std::unique_ptr<smprompt::Tokenizer> vocabulary(const smprompt::TaskData& data) {
  std::vector<std::string> texts{"It was . terrible great"};
  for (const auto* split : {&data.pool, &data.test})
    for (const auto& e : *split) texts.push_back(e.sent0);
  return std::make_unique<smprompt::Tokenizer>(smprompt::Tokenizer::build(texts));
}

inline smprompt::lm::TinyMlmConfig tiny(std::size_t vocab, int dim, std::size_t max_length) {
  smprompt::lm::TinyMlmConfig c;
  c.vocab_size = vocab;
  c.dim = dim;
  c.ff_dim = 2 * dim;
  c.max_length = max_length;
  c.seed = 1;
  return c;
}

/// Sentiment-like task where one adjective decides the label.
inline Toy signal(int pool_per_label = 32, int test_per_label = 40) {
  Toy t;
  smprompt::synthetic::Options o;
  o.name = "signal";
  o.pool_per_label = pool_per_label;
  o.test_per_label = test_per_label;
  t.task = smprompt::synthetic::signal_task(o);
  t.tokenizer = vocabulary(t.task.data);
  t.model = std::make_unique<smprompt::lm::TinyMlm>(tiny(t.tokenizer->size(), 16, 24));
  auto& c = t.config;
  c.task = "signal";
  c.prompt.notation = "*cls**sent_0*_It_was*mask*.*sep+*";
  c.mapping.mappings = {{"default", smprompt::synthetic::label_words()}};
  c.k = 4;
  c.seeds = {1, 2, 3};
  c.batch_sizes = {2, 4};
  c.learning_rates = {3e-3};
  c.training.max_steps = 40;
  c.training.eval_every = 10;
  c.sweep = {4, 3e-3, 40};
  return t;
}

/// Long inputs truncated before their informative tail; a dependency
/// snippet has to carry it.
inline Toy filter(int pool_per_label = 32, int test_per_label = 60) {
  Toy t;
  smprompt::synthetic::Options o;
  o.name = "filter";
  o.pool_per_label = pool_per_label;
  o.test_per_label = test_per_label;
  o.seed = 11;
  t.task = smprompt::synthetic::filter_task(o);
  t.tokenizer = vocabulary(t.task.data);
  t.model = std::make_unique<smprompt::lm::TinyMlm>(tiny(t.tokenizer->size(), 16, 24));
  auto& c = t.config;
  c.task = "filter";
  c.prompt.notation = "*cls**sent_0**dep*_It_was*mask*.*sep+*";
  c.prompt.filter = smprompt::Filter::parse("POS:JJ");
  c.mapping.mappings = {{"default", smprompt::synthetic::label_words()}};
  c.k = 16;
  c.seeds = {1, 2, 3};
  c.batch_sizes = {8};
  c.learning_rates = {3e-3};
  c.training.max_steps = 150;
  c.training.eval_every = 25;
  return t;
}

}  // namespace fixture
