#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ancor/data.hpp"
#include "ancor/fewshot.hpp"
#include "ancor/trainer.hpp"

namespace ancor {

// Everything a run needs. One seed feeds every component through named
// sub-streams, so the sub-config seed fields are overwritten by resolve().
struct ExperimentConfig {
  std::uint64_t seed = 0;
  HierarchySpec data;
  TrainConfig train;
  EvalConfig eval;

  // Copies the root seed and shared augmentation into the sub-configs.
  void resolve();
  void validate() const;
};

// Plain-text nested key-value format:
//
//   # comment
//   seed = 7
//   [train]
//   epochs = 50
//   contrastive.temperature = 0.2
//
// A [section] header prefixes the keys that follow it. Unknown keys and
// malformed values are errors that name the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets one dotted key ("train.epochs") from its text form.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

// Full snapshot in the same format; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& cfg);

}  // namespace ancor
