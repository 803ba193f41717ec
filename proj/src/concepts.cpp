#include "ortha/concepts.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ortha/basis.h"
#include "ortha/error.h"
#include "ortha/rng.h"

namespace ortha {

namespace {

void validate_spec(const ConceptTaskSpec& spec) {
  const std::string who = "concept '" + spec.concept_id + "'";
  if (spec.d_in == 0 || spec.d_out == 0) throw ValidationError(who + ": dimensions must be positive");
  if (spec.n_samples == 0) throw ValidationError(who + ": n_samples must be positive");
  if (!(spec.target_perturbation_scale >= 0.0)) throw ValidationError(who + ": target_perturbation_scale must be >= 0");
  if (!(spec.noise_sigma >= 0.0)) throw ValidationError(who + ": noise_sigma must be >= 0");
  if (spec.target_rank > std::min(spec.d_in, spec.d_out)) throw ValidationError(who + ": target_rank exceeds dimensions");
  if (const auto* iso = std::get_if<Isotropic>(&spec.input_dist)) {
    if (!(iso->scale >= 0.0)) throw ValidationError(who + ": input scale must be >= 0");
  } else {
    const auto& sub = std::get<SubspaceConcentrated>(spec.input_dist);
    if (sub.subspace_dim == 0 || sub.subspace_dim > spec.d_in) {
      throw ValidationError(who + ": subspace_dim must lie in [1, d_in]");
    }
    if (!(sub.in_plane_scale >= 0.0) || !(sub.off_plane_scale >= 0.0)) {
      throw ValidationError(who + ": subspace scales must be >= 0");
    }
  }
}

void write_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

SubspaceConcentrated default_subspace(std::size_t d_in, std::uint64_t subspace_seed, double in_plane_scale) {
  return SubspaceConcentrated{std::max<std::size_t>(1, d_in / 8), in_plane_scale, 0.1 * in_plane_scale, subspace_seed};
}

ConceptTask::ConceptTask(ConceptTaskSpec spec, Matrix x, Matrix y, Matrix w_star)
    : spec_(std::move(spec)), x_(std::move(x)), y_(std::move(y)), w_star_(std::move(w_star)) {}

Matrix sample_inputs(const ConceptTaskSpec& spec) {
  validate_spec(spec);
  SeededRng rng(derive_seed(spec.seed, "inputs"));
  if (const auto* iso = std::get_if<Isotropic>(&spec.input_dist)) {
    return rng_gaussian(rng, spec.d_in, spec.n_samples, iso->scale);
  }
  const auto& sub = std::get<SubspaceConcentrated>(spec.input_dist);
  const auto plane = shared_basis(spec.d_in, derive_seed(sub.subspace_seed, "input_subspace"));
  std::vector<std::size_t> cols(sub.subspace_dim);
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  const Matrix u = select_columns(plane->ortho, cols);

  Matrix in_plane = mat_mul(u, rng_gaussian(rng, sub.subspace_dim, spec.n_samples, sub.in_plane_scale));
  Matrix off = rng_gaussian(rng, spec.d_in, spec.n_samples, sub.off_plane_scale);
  // Remove the in-plane component of the off-plane draw.
  off -= mat_mul(u, mat_tmul(u, off));
  in_plane += off;
  return in_plane;
}

ConceptTask make_task_with_target(const ConceptTaskSpec& spec, const Matrix& w_star) {
  validate_spec(spec);
  if (w_star.rows() != spec.d_out || w_star.cols() != spec.d_in) {
    throw ShapeError("concept '" + spec.concept_id + "': target map " + w_star.shape_string() + " does not match " +
                     std::to_string(spec.d_out) + "x" + std::to_string(spec.d_in));
  }
  Matrix x = sample_inputs(spec);
  Matrix y = mat_mul(w_star, x);
  SeededRng noise_rng(derive_seed(spec.seed, "noise"));
  y += rng_gaussian(noise_rng, spec.d_out, spec.n_samples, spec.noise_sigma);
  return ConceptTask(spec, std::move(x), std::move(y), w_star);
}

ConceptTask make_task(const ConceptTaskSpec& spec, const BaseLayer& base) {
  if (spec.d_out != base.d_out || spec.d_in != base.d_in) {
    throw ShapeError("concept '" + spec.concept_id + "': task is " + std::to_string(spec.d_out) + "x" +
                     std::to_string(spec.d_in) + " but base layer is " + base.w0.shape_string());
  }
  validate_spec(spec);
  SeededRng rng(derive_seed(spec.seed, "target"));
  Matrix perturbation;
  if (spec.target_rank == 0) {
    perturbation = rng_gaussian(rng, spec.d_out, spec.d_in, spec.target_perturbation_scale);
  } else {
    const double q = static_cast<double>(spec.target_rank);
    Matrix left = rng_gaussian(rng, spec.d_out, spec.target_rank, spec.target_perturbation_scale / std::sqrt(q));
    Matrix right = rng_gaussian(rng, spec.target_rank, spec.d_in, 1.0);
    perturbation = mat_mul(left, right);
  }
  return make_task_with_target(spec, base.w0 + perturbation);
}

double task_loss(const Matrix& w, const ConceptTask& task) {
  if (w.rows() != task.spec().d_out || w.cols() != task.spec().d_in) {
    throw ShapeError("task_loss: weights " + w.shape_string() + " do not match concept '" + task.concept_id() + "' (" +
                     std::to_string(task.spec().d_out) + "x" + std::to_string(task.spec().d_in) + ")");
  }
  Matrix residual = mat_mul(w, task.x());
  residual -= task.y();
  const double norm = frobenius_norm(residual);
  return norm * norm / static_cast<double>(task.n_samples());
}

void export_task_csv(const ConceptTask& task, const std::filesystem::path& x_path, const std::filesystem::path& y_path) {
  write_csv(task.x(), x_path);
  write_csv(task.y(), y_path);
}

}  // namespace ortha
