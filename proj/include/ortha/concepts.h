#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "ortha/adapter.h"
#include "ortha/matrix.h"

namespace ortha {

struct Isotropic {
  double scale = 1.0;
};

// Inputs concentrated on a seeded subspace_dim-dimensional plane, with
// independent off-plane energy. Concepts that share subspace_seed share
// their dominant input directions.
struct SubspaceConcentrated {
  std::size_t subspace_dim = 0;
  double in_plane_scale = 1.0;
  double off_plane_scale = 0.1;
  std::uint64_t subspace_seed = 0;
};

using InputDist = std::variant<Isotropic, SubspaceConcentrated>;

// subspace_dim = max(1, d_in/8), off-plane scale 0.1× in-plane.
SubspaceConcentrated default_subspace(std::size_t d_in, std::uint64_t subspace_seed, double in_plane_scale = 1.0);

struct ConceptTaskSpec {
  std::string concept_id;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t n_samples = 0;
  InputDist input_dist = Isotropic{};
  double target_perturbation_scale = 0.0;
  // 0: dense Gaussian perturbation; q > 0: rank-q perturbation with the
  // same per-entry variance.
  std::size_t target_rank = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

// Synthetic stand-in for one concept's training data. Inputs are stored one
// sample per column so layer outputs are W·x.
class ConceptTask {
 public:
  ConceptTask(ConceptTaskSpec spec, Matrix x, Matrix y, Matrix w_star);

  const ConceptTaskSpec& spec() const noexcept { return spec_; }
  const std::string& concept_id() const noexcept { return spec_.concept_id; }
  const Matrix& x() const noexcept { return x_; }
  const Matrix& y() const noexcept { return y_; }
  std::size_t n_samples() const noexcept { return x_.cols(); }

  // Generating map. Oracle checks only: training code never reads it.
  const Matrix& oracle_w_star() const noexcept { return w_star_; }

 private:
  ConceptTaskSpec spec_;
  Matrix x_;
  Matrix y_;
  Matrix w_star_;
};

// w_star = w0 + perturbation, x from input_dist, y = w_star·x + noise.
ConceptTask make_task(const ConceptTaskSpec& spec, const BaseLayer& base);

// Same data draw with an explicit generating map.
ConceptTask make_task_with_target(const ConceptTaskSpec& spec, const Matrix& w_star);

// Inputs drawn per spec.input_dist (d_in × n_samples).
Matrix sample_inputs(const ConceptTaskSpec& spec);

// (1/N)·‖w·x − y‖_F².
double task_loss(const Matrix& w, const ConceptTask& task);

// Writes x and y as CSV, one matrix row per line.
void export_task_csv(const ConceptTask& task, const std::filesystem::path& x_path, const std::filesystem::path& y_path);

}  // namespace ortha
