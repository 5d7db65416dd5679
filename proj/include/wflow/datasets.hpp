#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wflow/density.hpp"
#include "wflow/ensemble.hpp"

namespace wflow {

/// Named sampler (or inline isotropic Gaussian mixture) plus sample count and
/// seed. Samples are mapped through x -> scale * x + shift.
struct DatasetSpec {
  std::string preset = "standard-gaussian";
  std::size_t dim = 2;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::vector<double> shift;

  // Inline mixture (preset "mixture"): weights, flattened means, isotropic variances.
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;

  void validate() const;
};

/// Known preset names.
const std::vector<std::string>& dataset_presets();

/// Three-component mixture p of the packaged density-ratio experiment.
AnalyticDensity fig10_p();
/// Two-component mixture q of the same experiment.
AnalyticDensity fig10_q();
/// Recursive branching mixture in 2D (binary tree, depth 4, Gaussian beads
/// along each segment).
AnalyticDensity branch_tree();

/// Exact density of the dataset when one exists (Gaussian, mixtures, branch-tree).
std::optional<AnalyticDensity> dataset_density(const DatasetSpec& spec);

/// Draws spec.count particles using a stream seeded by spec.seed.
ParticleEnsemble sample_dataset(const DatasetSpec& spec);

/// Headerless CSV, one particle per row, locale-independent shortest
/// round-trip decimal formatting.
void write_ensemble_csv(std::ostream& os, const Tensor& x);
void write_ensemble_csv(const std::string& path, const Tensor& x);
Tensor read_ensemble_csv(std::istream& is);
Tensor read_ensemble_csv(const std::string& path);

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace wflow
