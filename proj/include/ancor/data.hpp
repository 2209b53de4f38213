#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ancor/matrix.hpp"
#include "ancor/rng.hpp"

namespace ancor {

struct HierarchySpec {
  std::size_t coarse_classes = 4;                 // R
  std::vector<std::size_t> subclasses{4, 4, 4, 4};  // k_i per coarse class
  std::size_t input_dim = 64;
  std::size_t samples_per_fine = 200;
  double coarse_radius = 10.0;
  double fine_radius = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// fine class -> parent coarse class. Fine ids are global over sum(k_i).
struct Hierarchy {
  std::size_t num_coarse = 0;
  std::vector<std::size_t> fine_to_coarse;

  std::size_t num_fine() const { return fine_to_coarse.size(); }
  std::vector<std::size_t> subclasses_of(std::size_t coarse) const;
};

// Samples are rows; fine labels always travel with the data.
struct Dataset {
  Matrix features;
  std::vector<std::size_t> coarse;
  std::vector<std::size_t> fine;

  std::size_t size() const { return coarse.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  Hierarchy hierarchy;
};

// What the trainer sees: inputs and a single supervision column.
struct TrainingSet {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
};

TrainingSet coarse_supervision(const Dataset& d, const Hierarchy& h);
// Fine labels are exposed only for the Fine/Fine+ upper bounds.
TrainingSet fine_supervision(const Dataset& d, const Hierarchy& h);

// Coarse centroids uniform on the coarse_radius sphere, fine sub-centroids at
// fine_radius in a uniform direction from the parent, isotropic Gaussian
// samples. Split 80/10/10 stratified by fine class.
DatasetSplit generate_synthetic(const HierarchySpec& spec);

// Nearest-centroid helper used by sanity checks: true sub-centroids are
// returned by generate_synthetic_centroids with the same spec.
Matrix generate_synthetic_centroids(const HierarchySpec& spec);

// CSV with header "coarse,fine,f0,...,f{d-1}".
void save_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

void save_hierarchy(const Hierarchy& h, const std::filesystem::path& path);
Hierarchy load_hierarchy(const std::filesystem::path& path);

struct AugmentStrength {
  double noise_std = 0.5;
  double dropout = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.25;

  void validate() const;
  bool is_identity() const { return noise_std == 0.0 && dropout == 0.0 && scale_lo == 1.0 && scale_hi == 1.0; }
};

// x' = mask * (s x) + eps with mask ~ Bernoulli(1 - p), s ~ U[lo, hi],
// eps ~ N(0, noise_std^2).
std::vector<double> augment(std::span<const double> x, Rng& rng, const AugmentStrength& strength);
Matrix augment_rows(const Matrix& x, Rng& rng, const AugmentStrength& strength);

}  // namespace ancor
