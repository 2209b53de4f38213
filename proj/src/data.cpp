#include "ancor/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

namespace ancor {

void HierarchySpec::validate() const {
  if (coarse_classes == 0) throw ConfigError("data: coarse class count must be >= 1");
  if (subclasses.size() != coarse_classes)
    throw ConfigError("data: need one sub-class count per coarse class (" + std::to_string(coarse_classes) +
                      "), got " + std::to_string(subclasses.size()));
  for (std::size_t k : subclasses)
    if (k == 0) throw ConfigError("data: every coarse class needs >= 1 sub-class");
  if (input_dim == 0) throw ConfigError("data: input_dim must be >= 1");
  if (samples_per_fine < 10)
    throw ConfigError("data: samples_per_fine must be >= 10 for an 80/10/10 stratified split");
  if (!(coarse_radius > 0.0 && fine_radius > 0.0 && noise_std > 0.0))
    throw ConfigError("data: radii and noise_std must be positive");
  if (!(fine_radius < coarse_radius)) throw ConfigError("data: fine_radius must be < coarse_radius");
}

std::vector<std::size_t> Hierarchy::subclasses_of(std::size_t coarse) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < fine_to_coarse.size(); ++f)
    if (fine_to_coarse[f] == coarse) out.push_back(f);
  return out;
}

TrainingSet coarse_supervision(const Dataset& d, const Hierarchy& h) {
  return {d.features, d.coarse, h.num_coarse};
}

TrainingSet fine_supervision(const Dataset& d, const Hierarchy& h) { return {d.features, d.fine, h.num_fine()}; }

namespace {

std::vector<double> random_direction(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(dim);
  double s = 0.0;
  do {
    s = 0.0;
    for (double& x : v) {
      x = n01(rng);
      s += x * x;
    }
  } while (s == 0.0);
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

struct Centroids {
  Matrix fine;
  Hierarchy hierarchy;
};

Centroids make_centroids(const HierarchySpec& spec, Rng& rng) {
  Centroids c;
  c.hierarchy.num_coarse = spec.coarse_classes;
  const std::size_t total = std::accumulate(spec.subclasses.begin(), spec.subclasses.end(), std::size_t{0});
  c.fine = Matrix(total, spec.input_dim);
  std::size_t f = 0;
  for (std::size_t r = 0; r < spec.coarse_classes; ++r) {
    auto parent = random_direction(spec.input_dim, rng);
    for (double& x : parent) x *= spec.coarse_radius;
    for (std::size_t k = 0; k < spec.subclasses[r]; ++k, ++f) {
      const auto dir = random_direction(spec.input_dim, rng);
      auto row = c.fine.row(f);
      for (std::size_t i = 0; i < spec.input_dim; ++i) row[i] = parent[i] + spec.fine_radius * dir[i];
      c.hierarchy.fine_to_coarse.push_back(r);
    }
  }
  return c;
}

}  // namespace

Matrix generate_synthetic_centroids(const HierarchySpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "data");
  return make_centroids(spec, rng).fine;
}

DatasetSplit generate_synthetic(const HierarchySpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "data");
  Centroids c = make_centroids(spec, rng);
  const std::size_t dim = spec.input_dim;
  const std::size_t n = spec.samples_per_fine;
  const std::size_t n_train = (n * 8 + 5) / 10;
  const std::size_t n_val = (n + 5) / 10;

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  std::vector<std::vector<double>> rows[3];
  std::vector<std::size_t> coarse[3], fine[3];
  for (std::size_t f = 0; f < c.fine.rows(); ++f) {
    std::vector<std::vector<double>> samples(n, std::vector<double>(dim));
    for (auto& s : samples) {
      auto centroid = c.fine.row(f);
      for (std::size_t i = 0; i < dim; ++i) s[i] = centroid[i] + noise(rng);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < n; ++j) {
      const int part = j < n_train ? 0 : (j < n_train + n_val ? 1 : 2);
      rows[part].push_back(std::move(samples[order[j]]));
      coarse[part].push_back(c.hierarchy.fine_to_coarse[f]);
      fine[part].push_back(f);
    }
  }

  auto build = [&](int part) {
    Dataset d;
    d.features = Matrix(rows[part].size(), dim);
    for (std::size_t i = 0; i < rows[part].size(); ++i)
      std::copy(rows[part][i].begin(), rows[part][i].end(), d.features.row(i).begin());
    d.coarse = std::move(coarse[part]);
    d.fine = std::move(fine[part]);
    return d;
  };
  DatasetSplit split;
  split.train = build(0);
  split.val = build(1);
  split.test = build(2);
  split.hierarchy = std::move(c.hierarchy);
  return split;
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::string line = "coarse,fine";
  for (std::size_t i = 0; i < d.features.cols(); ++i) line += ",f" + std::to_string(i);
  out << line << '\n';
  char buf[64];
  for (std::size_t r = 0; r < d.size(); ++r) {
    line = std::to_string(d.coarse[r]) + "," + std::to_string(d.fine[r]);
    for (double v : d.features.row(r)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      line += ',';
      line.append(buf, res.ptr);
    }
    out << line << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw SchemaError(path.string() + ": empty file, expected a header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[0] != "coarse" || header[1] != "fine")
    throw SchemaError(path.string() + ":1: header must be coarse,fine,f0,...");
  for (std::size_t i = 2; i < header.size(); ++i)
    if (header[i] != "f" + std::to_string(i - 2))
      throw SchemaError(path.string() + ":1: unexpected column '" + header[i] + "'");
  const std::size_t width = header.size() - 2;

  std::vector<double> values;
  Dataset d;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t col = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      const char* comma = std::find(p, end, ',');
      if (col < 2) {
        std::size_t v = 0;
        auto r = std::from_chars(p, comma, v);
        if (r.ec != std::errc() || r.ptr != comma)
          throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad label in column " + std::to_string(col + 1),
                           lineno);
        (col == 0 ? d.coarse : d.fine).push_back(v);
      } else {
        double v = 0.0;
        auto r = std::from_chars(p, comma, v);
        if (r.ec != std::errc() || r.ptr != comma || !std::isfinite(v))
          throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number in column " +
                               std::to_string(col + 1),
                           lineno);
        values.push_back(v);
      }
      ++col;
      if (comma == end) break;
      p = comma + 1;
    }
    if (col != width + 2)
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width + 2) +
                        " columns, found " + std::to_string(col));
  }
  d.features = Matrix(d.coarse.size(), width, std::move(values));
  return d;
}

void save_hierarchy(const Hierarchy& h, const std::filesystem::path& path) {
  nlohmann::json j;
  j["coarse_classes"] = h.num_coarse;
  j["fine_to_coarse"] = h.fine_to_coarse;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

Hierarchy load_hierarchy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    Hierarchy h;
    h.num_coarse = j.at("coarse_classes").get<std::size_t>();
    h.fine_to_coarse = j.at("fine_to_coarse").get<std::vector<std::size_t>>();
    for (std::size_t c : h.fine_to_coarse)
      if (c >= h.num_coarse) throw SchemaError(path.string() + ": fine class maps to unknown coarse class");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void AugmentStrength::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("augment: noise_std must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("augment: dropout must lie in [0, 1)");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw ConfigError("augment: need 0 < scale_lo <= scale_hi");
}

std::vector<double> augment(std::span<const double> x, Rng& rng, const AugmentStrength& st) {
  st.validate();
  std::vector<double> out(x.begin(), x.end());
  if (st.is_identity()) return out;
  const double s = st.scale_lo == st.scale_hi ? st.scale_lo : std::uniform_real_distribution<double>(st.scale_lo, st.scale_hi)(rng);
  std::bernoulli_distribution drop(st.dropout);
  std::normal_distribution<double> eps(0.0, st.noise_std > 0.0 ? st.noise_std : 1.0);
  for (double& v : out) {
    const bool keep = st.dropout == 0.0 || !drop(rng);
    v = keep ? s * v : 0.0;
    if (st.noise_std > 0.0) v += eps(rng);
  }
  return out;
}

Matrix augment_rows(const Matrix& x, Rng& rng, const AugmentStrength& st) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto v = augment(x.row(r), rng, st);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace ancor
