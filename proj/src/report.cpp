#include "ancor/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ancor/error.hpp"

namespace ancor {
namespace {

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_acc(const EvalReport& r) { return num(r.mean) + " ± " + num(r.ci95); }

std::string eval_summary_csv(const std::vector<EvalReport>& reports) {
  std::string out = "label,mode,way,shot,episodes,mean,ci95,head_iterations,head_step,head_l2,support_copies,seed\n";
  for (const auto& r : reports) {
    const auto& c = r.config;
    out += r.label + "," + to_string(r.mode) + "," + std::to_string(r.way) + "," + std::to_string(c.shot) + "," +
           std::to_string(r.accuracies.size()) + "," + exact(r.mean) + "," + exact(r.ci95) + "," +
           std::to_string(c.head.iterations) + "," + exact(c.head.step) + "," + exact(c.head.l2) + "," +
           std::to_string(c.support_augment_copies) + "," + std::to_string(c.seed) + "\n";
  }
  return out;
}

std::string eval_episodes_csv(const std::vector<EvalReport>& reports) {
  std::string out = "label,mode,episode,accuracy\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.accuracies.size(); ++i)
      out += r.label + "," + to_string(r.mode) + "," + std::to_string(i) + "," + exact(r.accuracies[i]) + "\n";
  return out;
}

std::string eval_markdown(const std::vector<EvalReport>& reports) {
  std::string out = "| model | mode | way | shot | episodes | accuracy |\n|---|---|---|---|---|---|\n";
  for (const auto& r : reports)
    out += "| " + r.label + " | " + to_string(r.mode) + " | " + std::to_string(r.way) + " | " +
           std::to_string(r.config.shot) + " | " + std::to_string(r.accuracies.size()) + " | " + format_acc(r) +
           " |\n";
  return out;
}

const std::vector<EvalMode>& ablation_modes() {
  static const std::vector<EvalMode> modes{EvalMode::FiveWay, EvalMode::AllWay, EvalMode::IntraClass,
                                           EvalMode::CoarseAllWay};
  return modes;
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string out = "| model | variant | queue | angular |";
  for (EvalMode m : ablation_modes()) out += " " + to_string(m) + " |";
  out += "\n|---|---|---|---|";
  for (std::size_t i = 0; i < ablation_modes().size(); ++i) out += "---|";
  out += "\n";
  for (const auto& row : rows) {
    out += "| " + row.name + " | " + row.variant + " | " + row.queue + " | " + row.angular + " |";
    for (std::size_t i = 0; i < ablation_modes().size(); ++i) {
      if (i < row.results.size() && row.results[i]) out += " " + format_acc(*row.results[i]) + " |";
      else out += " failed: " + row.error + " |";
    }
    out += "\n";
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "model,variant,queue,angular,mode,mean,ci95,error\n";
  for (const auto& row : rows)
    for (std::size_t i = 0; i < ablation_modes().size(); ++i) {
      out += row.name + "," + row.variant + "," + row.queue + "," + row.angular + "," + to_string(ablation_modes()[i]);
      if (i < row.results.size() && row.results[i])
        out += "," + exact(row.results[i]->mean) + "," + exact(row.results[i]->ci95) + ",\n";
      else
        out += ",,,\"" + row.error + "\"\n";
    }
  return out;
}

std::string sweep_markdown(const std::string& title, const std::vector<SweepPoint>& points) {
  std::string out = "| " + title + " epochs | all-way |\n|---|---|\n";
  for (const auto& p : points)
    out += "| " + std::to_string(p.epochs) + " | " + (p.report ? format_acc(*p.report) : "failed: " + p.error) + " |\n";
  return out;
}

std::string metrics_svg(const std::vector<MetricsRow>& rows) {
  const double W = 640, H = 360, left = 60, right = 60, top = 20, bottom = 40;
  const double pw = W - left - right, ph = H - top - bottom;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  if (rows.empty()) {
    svg << "<text x=\"" << W / 2 << "\" y=\"" << H / 2 << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return svg.str();
  }

  double max_loss = 0.0, max_lr = 0.0;
  for (const auto& r : rows) {
    max_loss = std::max({max_loss, r.loss_total, r.loss_ce, r.loss_cont});
    max_lr = std::max(max_lr, r.lr);
  }
  if (max_loss <= 0.0) max_loss = 1.0;
  if (max_lr <= 0.0) max_lr = 1.0;
  const double e0 = static_cast<double>(rows.front().epoch), e1 = static_cast<double>(rows.back().epoch);
  const double span = e1 > e0 ? e1 - e0 : 1.0;
  auto px = [&](std::size_t epoch) { return left + pw * (static_cast<double>(epoch) - e0) / span; };

  auto line = [&](const char* color, double scale, auto value) {
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& r : rows) svg << px(r.epoch) << "," << top + ph * (1.0 - value(r) / scale) << " ";
    svg << "\"/>\n";
  };
  line("#1f77b4", max_loss, [](const MetricsRow& r) { return r.loss_total; });
  line("#2ca02c", max_loss, [](const MetricsRow& r) { return r.loss_ce; });
  line("#d62728", max_loss, [](const MetricsRow& r) { return r.loss_cont; });
  line("#999999", max_lr, [](const MetricsRow& r) { return r.lr; });

  svg << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << num(max_loss, 3) << "</text>\n";
  svg << "<text x=\"" << left - 6 << "\" y=\"" << top + ph << "\" text-anchor=\"end\">0</text>\n";
  svg << "<text x=\"" << left + pw + 6 << "\" y=\"" << top + 4 << "\">" << num(max_lr, 4) << "</text>\n";
  svg << "<text x=\"" << left + pw + 6 << "\" y=\"" << top + ph << "\">0</text>\n";
  svg << "<text x=\"" << left << "\" y=\"" << H - 12 << "\">" << rows.front().epoch << "</text>\n";
  svg << "<text x=\"" << left + pw << "\" y=\"" << H - 12 << "\" text-anchor=\"end\">" << rows.back().epoch << "</text>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">epoch</text>\n";

  const char* names[] = {"loss_total", "loss_ce", "loss_cont", "lr (right axis)"};
  const char* colors[] = {"#1f77b4", "#2ca02c", "#d62728", "#999999"};
  for (int i = 0; i < 4; ++i) {
    const double y = top + 14 + 14 * i;
    svg << "<line x1=\"" << left + 10 << "\" y1=\"" << y - 4 << "\" x2=\"" << left + 28 << "\" y2=\"" << y - 4
        << "\" stroke=\"" << colors[i] << "\" stroke-width=\"2\"/>";
    svg << "<text x=\"" << left + 32 << "\" y=\"" << y << "\">" << names[i] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ancor
