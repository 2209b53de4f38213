#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ancor/fewshot.hpp"
#include "ancor/trainer.hpp"

namespace ancor {

// Summary CSV: one row per report.
std::string eval_summary_csv(const std::vector<EvalReport>& reports);
// Per-episode CSV: label,mode,episode,accuracy.
std::string eval_episodes_csv(const std::vector<EvalReport>& reports);
std::string eval_markdown(const std::vector<EvalReport>& reports);

// "0.6123 ± 0.0061"
std::string format_acc(const EvalReport& r);

// One ablation cell: a training configuration scored in every eval mode.
struct AblationRow {
  std::string name;
  std::string variant;
  std::string queue;
  std::string angular;
  std::vector<std::optional<EvalReport>> results;  // indexed like ablation_modes()
  std::string error;                               // set when the cell failed
};

const std::vector<EvalMode>& ablation_modes();
std::string ablation_markdown(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct SweepPoint {
  std::size_t epochs = 0;
  std::optional<EvalReport> report;
  std::string error;
};
std::string sweep_markdown(const std::string& title, const std::vector<SweepPoint>& points);

// Line plot of the loss terms and the learning rate against epoch. The lr
// curve uses its own axis on the right.
std::string metrics_svg(const std::vector<MetricsRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ancor
