#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ortha/adapter.h"
#include "ortha/concepts.h"

namespace ortha {

struct TrainConfig {
  // Unset: 0.9 / L with L the largest curvature of the frozen-B objective
  // (power iteration on (2/N)·Z·Zᵀ). LearnedFree instead alternates B and A
  // steps, each 0.9 / (its block's curvature at the current iterate).
  std::optional<double> learning_rate;
  std::size_t steps = 500;
  std::size_t log_every = 10;
  // Unset: 1e-10·trace(Z·Zᵀ)/r.
  std::optional<double> ridge_eps;
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct GradCheck {
  double max_rel_err = 0.0;
};

struct TrainResult {
  Adapter adapter;
  std::vector<LossPoint> loss_curve;
  double final_loss = 0.0;
  double learning_rate = 0.0;  // step on A (first step when adaptive)
  std::optional<GradCheck> grad_check;
};

// (2/N)·E·Zᵀ with Z = Bᵀx and E = (w0 + A·Bᵀ)·x − y.
Matrix grad_a(const Adapter& ad, const BaseLayer& base, const ConceptTask& task);

// (2/N)·x·Eᵀ·A: the B gradient used only by the LearnedFree baseline.
Matrix grad_b(const Adapter& ad, const BaseLayer& base, const ConceptTask& task);

// Largest eigenvalue of (2/N)·Z·Zᵀ, the Lipschitz constant of grad_a.
double grad_a_lipschitz(const Matrix& b, const ConceptTask& task);

// Exact minimiser over A for the adapter's current (frozen) B, via
// Cholesky on Z·Zᵀ + ridge·I. Returns the adapter with A replaced.
Adapter fit_closed_form(const BaseLayer& base, const ConceptTask& task, Adapter start,
                        std::optional<double> ridge_eps = std::nullopt);

Adapter solve_closed_form(const BaseLayer& base, const ConceptTask& task, std::size_t rank, const BasisMode& mode,
                          std::uint64_t seed, std::optional<double> ridge_eps = std::nullopt);

// Full-batch gradient descent on A from zero (and on B too in LearnedFree
// mode). Throws DivergenceError once the loss exceeds 1e6× its initial value.
TrainResult train_gd(const BaseLayer& base, const ConceptTask& task, std::size_t rank, const BasisMode& mode,
                     std::uint64_t seed, const TrainConfig& cfg);

// Max relative entry error between grad_a and central differences of
// task_loss with step h.
GradCheck check_grad_a(const Adapter& ad, const BaseLayer& base, const ConceptTask& task, double h = 1e-5);

struct ExpressivityResult {
  double zero_loss = 0.0;         // loss of the untouched base layer
  double constrained_loss = 0.0;  // frozen shared-subset B, optimal A
  double free_loss = 0.0;         // A and B both trained
  double ratio() const { return free_loss > 0.0 ? constrained_loss / free_loss : 0.0; }
};

inline const TrainConfig kExpressivityFreeTrain{.learning_rate = {}, .steps = 3000, .log_every = 100, .ridge_eps = {}};

// Fits one frozen adapter (closed form, `constrained` mode) and one
// LearnedFree adapter (gradient descent with `free_cfg`) to the same task.
ExpressivityResult expressivity_probe(const BaseLayer& base, const ConceptTask& task, std::size_t rank,
                                      const BasisMode& constrained, std::uint64_t seed,
                                      const TrainConfig& free_cfg = kExpressivityFreeTrain);

// Same, with a shared-subset constraint drawn from
// derive_seed(seed, "expressivity_basis").
ExpressivityResult expressivity_probe(const BaseLayer& base, const ConceptTask& task, std::size_t rank,
                                      std::uint64_t seed, const TrainConfig& free_cfg = kExpressivityFreeTrain);

}  // namespace ortha
