#pragma once

// Experiment configuration files. A config is a JSON document with one
// section per module (task, template, depfilter, mapping, lm, harness,
// k_sweep, output); see data/synthetic/signal.json. Relative paths are
// resolved against the config file's directory. Overrides use dotted keys,
// "harness.k=8"; the value is read as JSON when it parses, else as a string.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smprompt/harness.hpp"
#include "smprompt/lm/remote.hpp"
#include "smprompt/lm/tiny_mlm.hpp"

namespace smprompt {

struct TaskFiles {
  TaskSchema schema;  // name is the task name; ids come from per-file names
  std::filesystem::path pool;
  std::filesystem::path test;
  std::vector<std::filesystem::path> pool_annotations;  // sent0[, sent1]
  std::vector<std::filesystem::path> test_annotations;
};

struct BackendSettings {
  std::string kind = "tiny";  // "tiny" or "remote"
  lm::TinyMlmConfig tiny;     // vocab_size taken from the tokenizer
  std::optional<std::filesystem::path> checkpoint;
  lm::Endpoint endpoint;
  lm::RemoteOptions remote;
};

struct Settings {
  std::filesystem::path source;
  TaskFiles task;
  std::optional<std::filesystem::path> vocabulary;  // else built from the data
  bool lowercase = true;
  ExperimentConfig experiment;
  BackendSettings backend;
  std::vector<int> ks{8, 16};
  std::vector<Filter> candidates;  // empty: the whole catalog
  std::filesystem::path output_dir;
};

/// Reads and validates a config file. Throws ValidationError naming the file
/// when it is missing, and naming the key for unknown or mistyped entries.
Settings load_settings(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Data, tokenizer and backend for a run. Keeps the backend alive.
struct Workspace {
  TaskData data;
  std::unique_ptr<Tokenizer> tokenizer;
  std::unique_ptr<lm::LmBackend> backend;

  Resources resources() const { return {&data, tokenizer.get(), backend.get()}; }
};

TaskData load_task(const TaskFiles& files);
Workspace open_workspace(const Settings& settings);

}  // namespace smprompt
