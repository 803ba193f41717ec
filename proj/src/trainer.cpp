#include "ortha/trainer.h"

#include <algorithm>
#include <cmath>

#include "ortha/error.h"
#include "ortha/linalg.h"
#include "ortha/rng.h"

namespace ortha {

namespace {

void require_task_matches(const Adapter& ad, const BaseLayer& base, const ConceptTask& task, const char* op) {
  validate_adapter(ad);
  if (base.d_out != ad.d_out || base.d_in != ad.d_in) {
    throw ShapeError(std::string(op) + ": adapter " + std::to_string(ad.d_out) + "x" + std::to_string(ad.d_in) +
                     " does not match base layer " + base.w0.shape_string());
  }
  if (task.spec().d_out != ad.d_out || task.spec().d_in != ad.d_in) {
    throw ShapeError(std::string(op) + ": task '" + task.concept_id() + "' is " + std::to_string(task.spec().d_out) +
                     "x" + std::to_string(task.spec().d_in) + ", adapter is " + std::to_string(ad.d_out) + "x" +
                     std::to_string(ad.d_in));
  }
}

Matrix residual(const Adapter& ad, const BaseLayer& base, const ConceptTask& task) {
  Matrix e = mat_mul(apply(base, ad), task.x());
  e -= task.y();
  return e;
}

double frob_dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return s;
}

// Sufficient statistics of the quadratic loss in W:
//   L(W) = tr(W·C·Wᵀ) − 2·tr(W·Mᵀ) + c,  C = x·xᵀ/N,  M = y·xᵀ/N.
struct Gram {
  Matrix c;  // d_in × d_in
  Matrix k;  // w0·C − M, d_out × d_in
  double base_loss = 0.0;
};

Gram gram_of(const BaseLayer& base, const ConceptTask& task) {
  const double inv_n = 1.0 / static_cast<double>(task.n_samples());
  Gram g;
  g.c = inv_n * mat_mult(task.x(), task.x());
  g.k = mat_mul(base.w0, g.c) - inv_n * mat_mult(task.y(), task.x());
  g.base_loss = task_loss(base.w0, task);
  return g;
}

// L(A, B) from the Gram form: L0 + 2<A, K·B> + <A·BᵀCB, A>.
double gram_loss(const Gram& g, const Matrix& a, const Matrix& b, const Matrix& btc) {
  const Matrix kb = mat_mul(g.k, b);
  const Matrix btcb = mat_mul(btc, b);
  return g.base_loss + 2.0 * frob_dot(a, kb) + frob_dot(mat_mul(a, btcb), a);
}

}  // namespace

Matrix grad_a(const Adapter& ad, const BaseLayer& base, const ConceptTask& task) {
  require_task_matches(ad, base, task, "grad_a");
  const Matrix z = mat_tmul(ad.b, task.x());
  const Matrix e = residual(ad, base, task);
  return (2.0 / static_cast<double>(task.n_samples())) * mat_mult(e, z);
}

Matrix grad_b(const Adapter& ad, const BaseLayer& base, const ConceptTask& task) {
  require_task_matches(ad, base, task, "grad_b");
  const Matrix e = residual(ad, base, task);
  return (2.0 / static_cast<double>(task.n_samples())) * mat_mul(mat_mult(task.x(), e), ad.a);
}

double grad_a_lipschitz(const Matrix& b, const ConceptTask& task) {
  const Matrix z = mat_tmul(b, task.x());
  return max_eigenvalue_psd((2.0 / static_cast<double>(task.n_samples())) * mat_mult(z, z));
}

Adapter fit_closed_form(const BaseLayer& base, const ConceptTask& task, Adapter start, std::optional<double> ridge_eps) {
  require_task_matches(start, base, task, "solve_closed_form");
  const Matrix z = mat_tmul(start.b, task.x());
  Matrix gram = mat_mult(z, z);
  const double ridge = ridge_eps.value_or(1e-10 * trace(gram) / static_cast<double>(start.rank));
  if (!(ridge >= 0.0)) throw ValidationError("solve_closed_form: ridge_eps must be >= 0");
  for (std::size_t i = 0; i < start.rank; ++i) gram(i, i) += ridge;
  Matrix target = task.y() - mat_mul(base.w0, task.x());
  const Matrix rhs = mat_mult(target, z);  // d_out × r
  start.a = transpose(cholesky_solve(gram, transpose(rhs)));
  start.meta.task_seed = task.spec().seed;
  start.meta.steps = 0;
  start.meta.final_loss = task_loss(apply(base, start), task);
  return start;
}

Adapter solve_closed_form(const BaseLayer& base, const ConceptTask& task, std::size_t rank, const BasisMode& mode,
                          std::uint64_t seed, std::optional<double> ridge_eps) {
  return fit_closed_form(base, task, new_adapter(base, rank, mode, seed, task.concept_id()), ridge_eps);
}

TrainResult train_gd(const BaseLayer& base, const ConceptTask& task, std::size_t rank, const BasisMode& mode,
                     std::uint64_t seed, const TrainConfig& cfg) {
  if (cfg.steps == 0) throw ValidationError("train_gd: steps must be positive");
  if (cfg.log_every == 0) throw ValidationError("train_gd: log_every must be positive");
  if (cfg.learning_rate && !(*cfg.learning_rate > 0.0 && std::isfinite(*cfg.learning_rate))) {
    throw ValidationError("train_gd: learning_rate must be positive");
  }

  Adapter ad = new_adapter(base, rank, mode, seed, task.concept_id());
  require_task_matches(ad, base, task, "train_gd");
  const bool train_b = !is_frozen(mode);
  const Gram g = gram_of(base, task);

  // Frozen B: one fixed step 0.9/L. LearnedFree has no global Lipschitz
  // constant (curvature in B grows with ‖A‖²), so unless a rate is given it
  // alternates B and A steps, each sized 0.9/L of its own block.
  const bool adaptive = train_b && !cfg.learning_rate;
  double lr = 0.0;
  double c_max = 0.0;
  if (cfg.learning_rate) {
    lr = *cfg.learning_rate;
  } else if (train_b) {
    c_max = max_eigenvalue_psd(g.c);
  } else {
    lr = 0.9 / grad_a_lipschitz(ad.b, task);
  }

  TrainResult result;
  const double initial = task_loss(apply(base, ad), task);
  const double limit = 1e6 * std::max(initial, 1e-300);
  result.loss_curve.push_back({0, initial});

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Matrix btc = mat_tmul(ad.b, g.c);  // r × d_in
    if (step > 1) {
      // Cheap Gram-form loss of the current iterate guards against blow-up
      // between logged steps.
      const double current = gram_loss(g, ad.a, ad.b, btc);
      if (!std::isfinite(current) || current > limit) throw DivergenceError(step - 1, current, initial);
    }
    if (adaptive) {
      const double a_max = max_abs(ad.a) == 0.0 ? 0.0 : max_eigenvalue_psd(mat_tmul(ad.a, ad.a));
      if (a_max > 0.0) {
        const Matrix gw = g.k + mat_mul(ad.a, btc);
        axpy(-0.9 / (2.0 * c_max * a_max), 2.0 * mat_tmul(gw, ad.a), ad.b);
        btc = mat_tmul(ad.b, g.c);
      }
      const double lr_a = 0.9 / (2.0 * max_eigenvalue_psd(mat_mul(btc, ad.b)));
      if (step == 1) lr = lr_a;
      const Matrix gw = g.k + mat_mul(ad.a, btc);
      axpy(-lr_a, 2.0 * mat_mul(gw, ad.b), ad.a);
    } else {
      const Matrix gw = g.k + mat_mul(ad.a, btc);  // W·C − M, d_out × d_in
      const Matrix ga = 2.0 * mat_mul(gw, ad.b);
      if (train_b) axpy(-lr, 2.0 * mat_tmul(gw, ad.a), ad.b);
      axpy(-lr, ga, ad.a);
    }

    if (step % cfg.log_every == 0 || step == cfg.steps) {
      const double loss = task_loss(apply(base, ad), task);
      if (!std::isfinite(loss) || loss > limit) throw DivergenceError(step, loss, initial);
      result.loss_curve.push_back({step, loss});
    }
  }
  result.learning_rate = lr;

  result.final_loss = result.loss_curve.back().loss;
  ad.meta.task_seed = task.spec().seed;
  ad.meta.steps = cfg.steps;
  ad.meta.final_loss = result.final_loss;
  result.adapter = std::move(ad);
  return result;
}

GradCheck check_grad_a(const Adapter& ad, const BaseLayer& base, const ConceptTask& task, double h) {
  const Matrix analytic = grad_a(ad, base, task);
  Adapter probe = ad;
  double worst = 0.0;
  for (std::size_t i = 0; i < ad.a.rows(); ++i) {
    for (std::size_t j = 0; j < ad.a.cols(); ++j) {
      const double orig = probe.a(i, j);
      probe.a(i, j) = orig + h;
      const double up = task_loss(apply(base, probe), task);
      probe.a(i, j) = orig - h;
      const double down = task_loss(apply(base, probe), task);
      probe.a(i, j) = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic(i, j)), 1e-8});
      worst = std::max(worst, std::fabs(numeric - analytic(i, j)) / denom);
    }
  }
  return GradCheck{worst};
}

ExpressivityResult expressivity_probe(const BaseLayer& base, const ConceptTask& task, std::size_t rank,
                                      const BasisMode& constrained, std::uint64_t seed, const TrainConfig& free_cfg) {
  if (rank < 1) throw ValidationError("expressivity_probe: rank must be positive");
  if (!is_frozen(constrained)) throw ValidationError("expressivity_probe: the constrained mode must be frozen");
  ExpressivityResult out;
  out.zero_loss = task_loss(base.w0, task);
  out.constrained_loss = solve_closed_form(base, task, rank, constrained, seed).meta.final_loss;
  const BasisMode free = sample_mode(ModeKind::learned_free, base.d_in, rank, 0, seed);
  out.free_loss = train_gd(base, task, rank, free, seed, free_cfg).final_loss;
  return out;
}

ExpressivityResult expressivity_probe(const BaseLayer& base, const ConceptTask& task, std::size_t rank,
                                      std::uint64_t seed, const TrainConfig& free_cfg) {
  const BasisMode constrained =
      sample_mode(ModeKind::shared_subset, base.d_in, rank, derive_seed(seed, "expressivity_basis"), seed);
  return expressivity_probe(base, task, rank, constrained, seed, free_cfg);
}

}  // namespace ortha
