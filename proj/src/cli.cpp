#include "ancor/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "ancor/checkpoint.hpp"
#include "ancor/config.hpp"
#include "ancor/error.hpp"
#include "ancor/fewshot.hpp"
#include "ancor/kernels.hpp"
#include "ancor/report.hpp"
#include "ancor/trainer.hpp"

namespace ancor {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const char* kSplitFiles[] = {"train.csv", "val.csv", "test.csv", "hierarchy.json"};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Globals {
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string config_path;
  std::string out_dir = "runs";
  int threads = 0;
  std::vector<std::string> overrides;
  std::vector<std::string> argv;
};

ExperimentConfig build_config(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed_opt->count()) cfg.seed = g.seed;
  cfg.resolve();
  return cfg;
}

RunManifest start_manifest(const std::string& command, const Globals& g, const ExperimentConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.argv = g.argv;
  m.seed = cfg.seed;
  m.config = to_text(cfg);
  return m;
}

TrainingSet supervision_for(const TrainConfig& cfg, const DatasetSplit& split) {
  return resolve_preset(cfg).fine_labels ? fine_supervision(split.train, split.hierarchy)
                                         : coarse_supervision(split.train, split.hierarchy);
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::size_t samples_per_fine = 0, coarse_classes = 0, input_dim = 0;
  std::vector<std::size_t> subclasses;
  double coarse_radius = 0, fine_radius = 0, noise_std = 0;
  std::string data_dir;
  CLI::App* app = nullptr;
};

template <typename T>
void take(CLI::App* app, const char* flag, const T& value, T& target) {
  if (app->get_option(flag)->count()) target = value;
}

int cmd_gen(const Globals& g, const GenArgs& a) {
  Stopwatch clock;
  ExperimentConfig cfg = build_config(g);
  take(a.app, "--samples-per-fine", a.samples_per_fine, cfg.data.samples_per_fine);
  take(a.app, "--coarse-classes", a.coarse_classes, cfg.data.coarse_classes);
  take(a.app, "--subclasses", a.subclasses, cfg.data.subclasses);
  take(a.app, "--input-dim", a.input_dim, cfg.data.input_dim);
  take(a.app, "--coarse-radius", a.coarse_radius, cfg.data.coarse_radius);
  take(a.app, "--fine-radius", a.fine_radius, cfg.data.fine_radius);
  take(a.app, "--noise-std", a.noise_std, cfg.data.noise_std);
  if (a.app->get_option("--coarse-classes")->count() && !a.app->get_option("--subclasses")->count())
    cfg.data.subclasses.assign(cfg.data.coarse_classes, cfg.data.subclasses.empty() ? 4 : cfg.data.subclasses.front());
  cfg.data.validate();

  const fs::path dir = a.data_dir.empty() ? fs::path(g.out_dir) / "data" : fs::path(a.data_dir);
  const DatasetSplit split = generate_synthetic(cfg.data);
  save_dataset(split, dir);
  const LoadedData check = load_dataset(dir);

  RunManifest m = start_manifest("gen", g, cfg);
  m.dataset_hash = check.hash;
  for (const char* f : kSplitFiles) m.artifacts.push_back((dir / f).string());
  m.wall_clock_seconds = clock.seconds();
  write_manifest(m, dir / "manifest.json");
  std::cout << "wrote " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
            << " train/val/test samples, " << split.hierarchy.num_fine() << " fine classes to " << dir.string()
            << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string preset, data_dir, name, resume;
  std::size_t epochs = 0, stop_after = 0;
  CLI::App* app = nullptr;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  Stopwatch clock;
  ExperimentConfig cfg = build_config(g);
  if (!a.preset.empty()) cfg.train.preset = parse_preset(a.preset);
  take(a.app, "--epochs", a.epochs, cfg.train.epochs);
  cfg.validate();
  resolve_preset(cfg.train);

  const fs::path data_dir = a.data_dir.empty() ? fs::path(g.out_dir) / "data" : fs::path(a.data_dir);
  const LoadedData data = load_dataset(data_dir);
  const TrainingSet ts = supervision_for(cfg.train, data.split);
  const fs::path dir = fs::path(g.out_dir) / (a.name.empty() ? to_string(cfg.train.preset) : a.name);
  fs::create_directories(dir);

  TrainOptions opts;
  if (a.app->get_option("--stop-after")->count()) opts.stop_after_epoch = a.stop_after;
  opts.on_epoch = [&](const MetricsRow& r) {
    std::fprintf(stderr, "epoch %zu/%zu lr %.5f ce %.4f cont %.4f total %.4f acc %.4f\n", r.epoch + 1,
                 cfg.train.epochs, r.lr, r.loss_ce, r.loss_cont, r.loss_total, r.coarse_acc);
  };

  std::vector<MetricsRow> history;
  TrainResult result = [&] {
    if (a.resume.empty()) return train(ts, cfg.train, opts);
    TrainState state = load_train_state(a.resume);
    const fs::path prior = fs::path(a.resume).parent_path() / "metrics.csv";
    if (fs::exists(prior))
      for (const auto& r : read_metrics_csv(prior))
        if (r.epoch < state.epoch) history.push_back(r);
    return resume(std::move(state), ts, cfg.train, opts);
  }();
  history.insert(history.end(), result.history.begin(), result.history.end());

  const fs::path ckpt = dir / "checkpoint.ancr", metrics = dir / "metrics.csv", svg = dir / "metrics.svg",
                 snapshot = dir / "config.txt";
  save_train_state(result.state, ckpt);
  write_metrics_csv(history, metrics);
  write_text(svg, metrics_svg(history));
  write_text(snapshot, to_text(cfg));

  RunManifest m = start_manifest("train", g, cfg);
  m.dataset_hash = data.hash;
  m.checkpoint = ckpt.string();
  m.metrics = metrics.string();
  m.artifacts = {svg.string(), snapshot.string()};
  m.wall_clock_seconds = clock.seconds();
  write_manifest(m, dir / "manifest.json");

  std::cout << "trained " << to_string(cfg.train.preset) << " for " << result.state.epoch << " epochs";
  if (!history.empty()) std::printf(", final loss %.4f, coarse acc %.4f", history.back().loss_total, history.back().coarse_acc);
  std::cout << "\ncheckpoint: " << ckpt.string() << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, second, combine, mode, data_dir, label, split = "test";
  std::size_t episodes = 0, shot = 0;
  CLI::App* app = nullptr;
};

EvalReport evaluate_combined(const std::string& combine, const AncorModel& a, const AncorModel* b,
                             const DatasetSplit& split, const Dataset& pool, const EvalConfig& ec) {
  if (combine.empty()) return evaluate(a, pool, split.hierarchy, ec);
  if (!b) throw ConfigError("--combine " + combine + " needs --second <checkpoint>");
  const FeatureFn fa = model_features(a), fb = model_features(*b);
  if (combine == "ensemble")
    return run_episodes(pool, split.hierarchy, ec,
                        [&](const Episode& ep, Rng& rng) { return combine_ensemble(fa, fb, ep, pool, ec, rng); });
  if (combine == "concat")
    return run_episodes(pool, split.hierarchy, ec,
                        [&](const Episode& ep, Rng& rng) { return combine_concat(fa, fb, ep, pool, ec, rng); });
  if (combine == "cascade") {
    if (a.classifier.rows() != split.hierarchy.num_coarse)
      throw ConfigError("cascade: the first checkpoint's classifier has " + std::to_string(a.classifier.rows()) +
                        " outputs, expected the " + std::to_string(split.hierarchy.num_coarse) + " coarse classes");
    const CoarsePredictor coarse = model_coarse_predictor(a);
    return run_episodes(pool, split.hierarchy, ec, [&](const Episode& ep, Rng& rng) {
      return combine_cascade(coarse, fb, ep, pool, split.hierarchy, ec, rng);
    });
  }
  throw ConfigError("unknown --combine '" + combine + "' (ensemble, cascade, concat)");
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  Stopwatch clock;
  ExperimentConfig cfg = build_config(g);
  take(a.app, "--episodes", a.episodes, cfg.eval.episodes);
  take(a.app, "--shot", a.shot, cfg.eval.shot);
  std::vector<EvalMode> modes{cfg.eval.mode};
  if (a.mode == "all") modes = ablation_modes();
  else if (!a.mode.empty()) modes = {parse_eval_mode(a.mode)};
  cfg.eval.validate();

  const fs::path data_dir = a.data_dir.empty() ? fs::path(g.out_dir) / "data" : fs::path(a.data_dir);
  const LoadedData data = load_dataset(data_dir);
  const Dataset* pool = nullptr;
  if (a.split == "test") pool = &data.split.test;
  else if (a.split == "val") pool = &data.split.val;
  else throw ConfigError("--split must be test or val");

  const AncorModel model = load_checkpoint(a.checkpoint);
  std::optional<AncorModel> second;
  if (!a.second.empty()) second = load_checkpoint(a.second);

  std::string label = a.label;
  if (label.empty()) {
    label = fs::path(a.checkpoint).parent_path().filename().string();
    if (label.empty()) label = fs::path(a.checkpoint).stem().string();
    if (!a.combine.empty()) label += "-" + a.combine;
  }

  std::vector<EvalReport> reports;
  for (EvalMode mode : modes) {
    EvalConfig ec = cfg.eval;
    ec.mode = mode;
    EvalReport r = evaluate_combined(a.combine, model, second ? &*second : nullptr, data.split, *pool, ec);
    r.label = label;
    reports.push_back(std::move(r));
  }

  const fs::path dir = fs::path(g.out_dir) / "eval" / label;
  fs::create_directories(dir);
  const fs::path summary = dir / "summary.csv", episodes = dir / "episodes.csv", md = dir / "report.md";
  write_text(summary, eval_summary_csv(reports));
  write_text(episodes, eval_episodes_csv(reports));
  const std::string table = eval_markdown(reports);
  write_text(md, table);

  RunManifest m = start_manifest("eval", g, cfg);
  m.dataset_hash = data.hash;
  m.checkpoint = a.checkpoint;
  if (!a.second.empty()) m.artifacts.push_back(a.second);
  m.eval_reports = {summary.string(), episodes.string(), md.string()};
  m.wall_clock_seconds = clock.seconds();
  write_manifest(m, dir / "manifest.json");
  std::cout << table;
  return 0;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string data_dir;
  std::size_t epochs = 0, episodes = 0;
  std::vector<std::size_t> sweep;
  CLI::App* app = nullptr;
};

struct Cell {
  std::string name;
  TrainConfig cfg;
};

std::vector<Cell> ablation_cells(const TrainConfig& base) {
  std::vector<Cell> cells;
  auto variant_cell = [&](ModelVariant v, QueueMode q, bool angular) {
    Cell c{to_string(v) + "-" + to_string(q) + (angular ? "-angular" : ""), base};
    c.cfg.preset = Preset::Ancor;
    c.cfg.variant = v;
    c.cfg.contrastive.queue_mode = q;
    c.cfg.contrastive.angular_enabled = angular;
    cells.push_back(c);
  };
  for (QueueMode q : {QueueMode::Single, QueueMode::Multi})
    for (bool angular : {false, true}) variant_cell(ModelVariant::Seq, q, angular);
  for (QueueMode q : {QueueMode::Single, QueueMode::Multi}) variant_cell(ModelVariant::Fork, q, false);
  for (Preset p : {Preset::Coarse, Preset::CoarsePlus, Preset::ContrastiveOnly, Preset::NaiveCombo, Preset::SupCon,
                   Preset::Fine, Preset::FinePlus}) {
    Cell c{to_string(p), base};
    c.cfg.preset = p;
    c.cfg.variant = ModelVariant::Seq;
    cells.push_back(c);
  }
  return cells;
}

AblationRow describe(const Cell& cell) {
  AblationRow row;
  row.name = cell.name;
  try {
    const PresetPlan plan = resolve_preset(cell.cfg);
    row.variant = to_string(plan.variant);
    row.queue = plan.contrastive ? to_string(plan.queue_mode) : "-";
    row.angular = plan.contrastive ? (plan.angular ? "on" : "off") : "-";
  } catch (const Error&) {
    row.variant = to_string(cell.cfg.variant);
    row.queue = to_string(cell.cfg.contrastive.queue_mode);
    row.angular = cell.cfg.contrastive.angular_enabled ? "on" : "off";
  }
  return row;
}

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  Stopwatch clock;
  ExperimentConfig cfg = build_config(g);
  take(a.app, "--epochs", a.epochs, cfg.train.epochs);
  take(a.app, "--episodes", a.episodes, cfg.eval.episodes);
  cfg.validate();

  const fs::path data_dir = a.data_dir.empty() ? fs::path(g.out_dir) / "data" : fs::path(a.data_dir);
  const LoadedData data = load_dataset(data_dir);
  const fs::path dir = fs::path(g.out_dir) / "ablation";
  fs::create_directories(dir);

  std::vector<Cell> cells = ablation_cells(cfg.train);
  const std::size_t grid = cells.size();
  // Extra cell outside the grid: the default Ancor cell with the angular
  // anchor held constant in the contrastive term.
  const auto anchor_on = std::find_if(cells.begin(), cells.end(), [](const Cell& c) {
    return c.cfg.variant == ModelVariant::Seq && c.cfg.preset == Preset::Ancor &&
           c.cfg.contrastive.queue_mode == QueueMode::Multi && c.cfg.contrastive.angular_enabled;
  });
  const std::size_t anchor_on_index = static_cast<std::size_t>(anchor_on - cells.begin());
  {
    Cell off = *anchor_on;
    off.name += "-fixed-anchor";
    off.cfg.contrastive.anchor_gradient = false;
    cells.push_back(std::move(off));
  }
  std::vector<AblationRow> rows(cells.size());
  std::vector<std::string> checkpoints(cells.size());
  // Cells are independent; each owns its directory. Rows keep grid order.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cells.size()); ++i) {
    const Cell& cell = cells[i];
    AblationRow row = describe(cell);
    row.results.assign(ablation_modes().size(), std::nullopt);
    try {
      const TrainResult res = train(supervision_for(cell.cfg, data.split), cell.cfg);
      const fs::path cell_dir = dir / cell.name;
      fs::create_directories(cell_dir);
      save_train_state(res.state, cell_dir / "checkpoint.ancr");
      write_metrics_csv(res.history, cell_dir / "metrics.csv");
      checkpoints[i] = (cell_dir / "checkpoint.ancr").string();
      for (std::size_t k = 0; k < ablation_modes().size(); ++k) {
        EvalConfig ec = cfg.eval;
        ec.mode = ablation_modes()[k];
        EvalReport r = evaluate(res.state.model, data.split.test, data.split.hierarchy, ec);
        r.label = cell.name;
        row.results[k] = std::move(r);
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows[i] = std::move(row);
  }

  std::vector<AblationRow> anchor_rows{rows[anchor_on_index], rows[grid]};
  anchor_rows[0].name += " (anchor gradient on)";
  anchor_rows[1].name = rows[anchor_on_index].name + " (anchor gradient off)";
  rows.resize(grid);
  std::string md = "## Ablation\n\n" + ablation_markdown(rows);
  md += "\n## Anchor gradient\n\n" + ablation_markdown(anchor_rows);

  std::vector<SweepPoint> points;
  if (!a.sweep.empty()) {
    std::vector<std::size_t> epochs = a.sweep;
    std::sort(epochs.begin(), epochs.end());
    epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
    // The schedule depends only on the epoch index, so each point is a
    // prefix of one longer run.
    TrainConfig tc = cfg.train;
    tc.preset = Preset::Ancor;
    tc.epochs = epochs.back();
    const TrainingSet ts = supervision_for(tc, data.split);
    std::optional<TrainState> state;
    for (std::size_t e : epochs) {
      SweepPoint p;
      p.epochs = e;
      try {
        TrainOptions opts;
        opts.stop_after_epoch = e;
        TrainResult res = state ? resume(std::move(*state), ts, tc, opts) : train(ts, tc, opts);
        EvalConfig ec = cfg.eval;
        ec.mode = EvalMode::AllWay;
        p.report = evaluate(res.state.model, data.split.test, data.split.hierarchy, ec);
        state = std::move(res.state);
      } catch (const std::exception& ex) {
        p.error = ex.what();
      }
      points.push_back(std::move(p));
      if (!state) break;
    }
    const std::string sweep = sweep_markdown("ancor", points);
    write_text(dir / "sweep.md", sweep);
    md += "\n## Longer training\n\n" + sweep;
  }

  write_text(dir / "ablation.md", md);
  write_text(dir / "ablation.csv", ablation_csv(rows));
  write_text(dir / "anchor.csv", ablation_csv(anchor_rows));

  RunManifest m = start_manifest("ablate", g, cfg);
  m.dataset_hash = data.hash;
  m.eval_reports = {(dir / "ablation.md").string(), (dir / "ablation.csv").string(), (dir / "anchor.csv").string()};
  if (!points.empty()) m.eval_reports.push_back((dir / "sweep.md").string());
  for (const auto& c : checkpoints)
    if (!c.empty()) m.artifacts.push_back(c);
  m.wall_clock_seconds = clock.seconds();
  write_manifest(m, dir / "manifest.json");
  std::cout << md;
  return 0;
}

// ---- report ----------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else cur += c;
  }
  out.push_back(cur);
  return out;
}

int cmd_report(const Globals& g, const std::vector<std::string>& dirs_in) {
  Stopwatch clock;
  const ExperimentConfig cfg = build_config(g);
  std::vector<fs::path> roots;
  for (const auto& d : dirs_in) roots.emplace_back(d);
  if (roots.empty()) roots.emplace_back(g.out_dir);

  std::vector<fs::path> metric_files, summary_files;
  for (const auto& root : roots) {
    if (!fs::exists(root)) throw IoError("no such directory " + root.string());
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename();
      if (name == "metrics.csv") metric_files.push_back(entry.path());
      if (name == "summary.csv") summary_files.push_back(entry.path());
    }
  }
  std::sort(metric_files.begin(), metric_files.end());
  std::sort(summary_files.begin(), summary_files.end());

  std::string md = "# Run report\n\n## Training runs\n\n";
  md += "| run | epochs | loss_ce | loss_cont | loss_total | coarse_acc | plot |\n|---|---|---|---|---|---|---|\n";
  RunManifest m = start_manifest("report", g, cfg);
  for (const auto& f : metric_files) {
    const auto rows = read_metrics_csv(f);
    const fs::path svg = f.parent_path() / "metrics.svg";
    write_text(svg, metrics_svg(rows));
    m.artifacts.push_back(svg.string());
    char buf[256];
    if (rows.empty()) std::snprintf(buf, sizeof buf, "| 0 | - | - | - | - |");
    else
      std::snprintf(buf, sizeof buf, "| %zu | %.4f | %.4f | %.4f | %.4f |", rows.size(), rows.back().loss_ce,
                    rows.back().loss_cont, rows.back().loss_total, rows.back().coarse_acc);
    md += "| " + f.parent_path().string() + " " + buf + " " + svg.filename().string() + " |\n";
  }

  md += "\n## Evaluations\n\n| model | mode | way | episodes | mean | ci95 |\n|---|---|---|---|---|---|\n";
  for (const auto& f : summary_files) {
    const std::string text = read_text(f);
    std::size_t pos = text.find('\n');
    while (pos != std::string::npos && pos + 1 < text.size()) {
      const std::size_t next = text.find('\n', pos + 1);
      const auto cols = split_csv_line(text.substr(pos + 1, next - pos - 1));
      pos = next;
      if (cols.size() < 7) throw SchemaError(f.string() + ": malformed summary row");
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.4f | %.4f", std::stod(cols[5]), std::stod(cols[6]));
      md += "| " + cols[0] + " | " + cols[1] + " | " + cols[2] + " | " + cols[4] + " | " + buf + " |\n";
    }
    m.eval_reports.push_back(f.string());
  }

  fs::create_directories(g.out_dir);
  const fs::path out = fs::path(g.out_dir) / "report.md";
  write_text(out, md);
  m.artifacts.push_back(out.string());
  m.wall_clock_seconds = clock.seconds();
  write_manifest(m, fs::path(g.out_dir) / "report_manifest.json");
  std::cout << md;
  return 0;
}

// ---- rerun -----------------------------------------------------------------

// Recorded argv with --config/--set removed; the snapshot replaces them.
std::vector<std::string> replay_args(const std::vector<std::string>& argv) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < argv.size(); ++i) {
    const std::string& a = argv[i];
    if (a == "--config") {
      ++i;
    } else if (a.rfind("--config=", 0) == 0 || a.rfind("--set=", 0) == 0) {
    } else if (a == "--set") {
      while (i + 1 < argv.size() && argv[i + 1].rfind("--", 0) != 0 && argv[i + 1].find('=') != std::string::npos) ++i;
    } else {
      out.push_back(a);
    }
  }
  return out;
}

int cmd_rerun(const std::string& manifest_path) {
  const RunManifest m = read_manifest(manifest_path);
  if (m.argv.empty()) throw SchemaError(manifest_path + ": empty argv");
  const std::vector<std::string> rest = replay_args(m.argv);
  if (!rest.empty() && rest.front() == "rerun") throw ConfigError("refusing to rerun a rerun manifest");
  const fs::path snapshot =
      fs::temp_directory_path() / ("ancor-rerun-" + hex(mix64(std::hash<std::string>{}(m.config) ^ m.seed)) + ".txt");
  write_text(snapshot, m.config);
  std::vector<std::string> args{m.argv.front(), "--config", snapshot.string()};
  args.insert(args.end(), rest.begin(), rest.end());
  std::vector<const char*> raw;
  for (const auto& a : args) raw.push_back(a.c_str());
  std::cerr << "rerun:";
  for (const auto& a : args) std::cerr << ' ' << a;
  std::cerr << "\n";
  const int rc = run_cli(static_cast<int>(raw.size()), raw.data());
  fs::remove(snapshot);
  return rc;
}

}  // namespace

// ---- manifest and dataset IO ------------------------------------------------

void write_manifest(const RunManifest& m, const fs::path& path) {
  std::vector<std::string> files = m.eval_reports;
  files.insert(files.end(), m.artifacts.begin(), m.artifacts.end());
  if (!m.checkpoint.empty()) files.push_back(m.checkpoint);
  if (!m.metrics.empty()) files.push_back(m.metrics);
  for (const auto& f : files)
    if (!fs::exists(f)) throw IoError("manifest references missing file " + f);
  const json j = {{"command", m.command},
                  {"argv", m.argv},
                  {"seed", m.seed},
                  {"config", m.config},
                  {"dataset_hash", m.dataset_hash},
                  {"checkpoint", m.checkpoint},
                  {"metrics", m.metrics},
                  {"eval_reports", m.eval_reports},
                  {"artifacts", m.artifacts},
                  {"wall_clock_seconds", m.wall_clock_seconds}};
  write_text(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.at("config").get<std::string>();
    m.dataset_hash = j.at("dataset_hash").get<std::string>();
    m.checkpoint = j.at("checkpoint").get<std::string>();
    m.metrics = j.at("metrics").get<std::string>();
    m.eval_reports = j.at("eval_reports").get<std::vector<std::string>>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void save_dataset(const DatasetSplit& split, const fs::path& dir) {
  fs::create_directories(dir);
  save_csv(split.train, dir / "train.csv");
  save_csv(split.val, dir / "val.csv");
  save_csv(split.test, dir / "test.csv");
  save_hierarchy(split.hierarchy, dir / "hierarchy.json");
}

LoadedData load_dataset(const fs::path& dir) {
  for (const char* f : kSplitFiles)
    if (!fs::exists(dir / f)) throw IoError("dataset file " + (dir / f).string() + " not found (run 'ancor gen' first)");
  LoadedData d;
  d.split.train = load_csv(dir / "train.csv");
  d.split.val = load_csv(dir / "val.csv");
  d.split.test = load_csv(dir / "test.csv");
  d.split.hierarchy = load_hierarchy(dir / "hierarchy.json");
  std::uint64_t h = 0;
  for (const char* f : kSplitFiles) h = mix64(h ^ hash_file(dir / f));
  d.hash = hex(h);
  for (const Dataset* part : {&d.split.train, &d.split.val, &d.split.test})
    for (std::size_t i = 0; i < part->size(); ++i)
      if (part->fine[i] >= d.split.hierarchy.num_fine() ||
          d.split.hierarchy.fine_to_coarse[part->fine[i]] != part->coarse[i])
        throw SchemaError("dataset in " + dir.string() + " disagrees with its hierarchy at sample " + std::to_string(i));
  return d;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Coarse-to-fine few-shot lab: data generation, training, evaluation and ablations"};
  app.require_subcommand(1);
  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  g.seed_opt = app.add_option("--seed", g.seed, "Root seed for every random stream")->capture_default_str();
  app.add_option("--config", g.config_path, "Config file (key = value with [sections])");
  app.add_option("--out-dir", g.out_dir, "Directory for all outputs")->capture_default_str();
  app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default)");
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set train.epochs=25")->take_all();

  GenArgs gen;
  gen.app = app.add_subcommand("gen", "Generate a synthetic hierarchical dataset");
  gen.app->add_option("--samples-per-fine", gen.samples_per_fine);
  gen.app->add_option("--coarse-classes", gen.coarse_classes);
  gen.app->add_option("--subclasses", gen.subclasses, "Sub-class count per coarse class")->delimiter(',');
  gen.app->add_option("--input-dim", gen.input_dim);
  gen.app->add_option("--coarse-radius", gen.coarse_radius);
  gen.app->add_option("--fine-radius", gen.fine_radius);
  gen.app->add_option("--noise-std", gen.noise_std);
  gen.app->add_option("--data-dir", gen.data_dir, "Output directory (default <out-dir>/data)");

  TrainArgs tr;
  tr.app = app.add_subcommand("train", "Train one preset");
  tr.app->add_option("--preset", tr.preset, "ancor, coarse, coarse+, contrastive, supcon, fine, fine+, naive");
  tr.app->add_option("--epochs", tr.epochs);
  tr.app->add_option("--data-dir", tr.data_dir);
  tr.app->add_option("--name", tr.name, "Run directory name under --out-dir (default: preset)");
  tr.app->add_option("--resume", tr.resume, "Continue from a training checkpoint");
  tr.app->add_option("--stop-after", tr.stop_after, "Stop once this many epochs are complete");

  EvalArgs ev;
  ev.app = app.add_subcommand("eval", "Few-shot evaluation of a checkpoint");
  ev.app->add_option("--checkpoint", ev.checkpoint)->required();
  ev.app->add_option("--mode", ev.mode, "5-way, all-way, intra-class, coarse, or all");
  ev.app->add_option("--episodes", ev.episodes);
  ev.app->add_option("--shot", ev.shot);
  ev.app->add_option("--combine", ev.combine, "ensemble, cascade or concat");
  ev.app->add_option("--second", ev.second, "Second checkpoint for --combine");
  ev.app->add_option("--data-dir", ev.data_dir);
  ev.app->add_option("--split", ev.split, "test or val")->capture_default_str();
  ev.app->add_option("--label", ev.label);

  AblateArgs ab;
  ab.app = app.add_subcommand("ablate", "Variant grid plus presets, scored in every eval mode");
  ab.app->add_option("--epochs", ab.epochs);
  ab.app->add_option("--episodes", ab.episodes);
  ab.app->add_option("--epochs-sweep", ab.sweep, "Epoch counts for the longer-training curve")->delimiter(',');
  ab.app->add_option("--data-dir", ab.data_dir);

  std::vector<std::string> report_dirs;
  CLI::App* rep = app.add_subcommand("report", "Collect metrics and eval reports into markdown and SVG");
  rep->add_option("dirs", report_dirs, "Run directories (default: --out-dir)");

  std::string rerun_manifest;
  CLI::App* rerun = app.add_subcommand("rerun", "Repeat a command from its manifest.json (run from the same directory)");
  rerun->add_option("manifest", rerun_manifest)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (g.threads < 0) throw ConfigError("--threads must be >= 0");
    if (g.threads > 0) kernels::set_threads(g.threads);
    if (gen.app->parsed()) return cmd_gen(g, gen);
    if (tr.app->parsed()) return cmd_train(g, tr);
    if (ev.app->parsed()) return cmd_eval(g, ev);
    if (ab.app->parsed()) return cmd_ablate(g, ab);
    if (rep->parsed()) return cmd_report(g, report_dirs);
    if (rerun->parsed()) return cmd_rerun(rerun_manifest);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ancor
