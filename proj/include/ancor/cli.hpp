#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ancor/data.hpp"

namespace ancor {

// Written next to every command's outputs. The config snapshot and argv are
// enough to rerun the command.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::string config;        // to_text() snapshot
  std::string dataset_hash;  // hex, empty when no dataset was read
  std::string checkpoint;
  std::string metrics;
  std::vector<std::string> eval_reports;
  std::vector<std::string> artifacts;
  double wall_clock_seconds = 0.0;
};

// Fails with IoError if a referenced file does not exist.
void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

struct LoadedData {
  DatasetSplit split;
  std::string hash;
};

void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);
LoadedData load_dataset(const std::filesystem::path& dir);

// Entry point of the ancor tool; returns the process exit code
// (0 ok, 2 config, 3 numeric, 4 io).
int run_cli(int argc, const char* const* argv);

}  // namespace ancor
