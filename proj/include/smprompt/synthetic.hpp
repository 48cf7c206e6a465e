#pragma once

// Generated toy tasks with known answers, used by the tests, the acceptance
// suite and the bundled example configs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smprompt/harness.hpp"

namespace smprompt::synthetic {

struct Options {
  std::string name = "synthetic";
  int pool_per_label = 64;
  int test_per_label = 100;
  std::uint64_t seed = 7;
};

struct Task {
  TaskData data;
  std::vector<AnnotatedSentence> pool_parses;  // aligned with data.pool
  std::vector<AnnotatedSentence> test_parses;  // aligned with data.test
};

/// Two labels (negative, positive). Each sentence is a handful of filler
/// words plus exactly one signal adjective, "bad" or "good", which alone
/// determines the label. The signal is tagged JJ and attached by amod.
Task signal_task(const Options& options = {});

/// Two labels. Sentences are long filler runs ending in three informative
/// words: a random past-tense verb (VBD, no information), a name (NNP,
/// matching the label three times in four) and the signal adjective (JJ).
/// Under a short max length the tail is truncated away, so only a
/// dependency snippet can carry it: POS:JJ > POS:NNP > POS:VBD.
Task filter_task(const Options& options = {});

/// Label words used by both tasks, per label.
std::vector<std::vector<std::string>> label_words();

/// Writes <dir>/pool.tsv, test.tsv, pool.conllu and test.conllu.
void write_task(const Task& task, const std::filesystem::path& dir);

}  // namespace smprompt::synthetic
