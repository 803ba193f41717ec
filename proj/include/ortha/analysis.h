#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ortha/adapter.h"
#include "ortha/concepts.h"
#include "ortha/trainer.h"

namespace ortha {

// ---------------------------------------------------------------------------
// Crosstalk and preservation of a fixed set of trained adapters.

struct CrosstalkReport {
  std::vector<std::string> concept_ids;
  // [i][j] = ‖ΔW_j·x_i‖_F / (‖ΔW_j‖_F·‖x_i‖_F + 1e-30)
  Matrix data_xtalk;
  // [i][j] = ‖ΔW_j·x_i‖_F
  Matrix data_xtalk_raw;
  // [i][j] = ‖B_iᵀ·B_j‖_F
  Matrix weight_xtalk;
};

// Tasks are matched to adapters by concept_id.
CrosstalkReport crosstalk_report(std::span<const Adapter> adapters, std::span<const ConceptTask> tasks);

struct ConceptPreservation {
  std::string concept_id;
  double single_loss = 0.0;  // task loss of w0 + ΔW_i
  double merged_loss = 0.0;  // task loss of the merged layer
  // ‖Ô_i(X_i) − O_i(X_i)‖_F / ‖O_i(X_i)‖_F with O_i = (w0 + ΔW_i)·X_i and
  // Ô_i the merged layer's output.
  double raw_rel_err = 0.0;
  // Same on S_i·S_iᵀ·X_i, S_i spanning the shared-basis columns unused by
  // every other concept. Unset (with a reason) outside SharedSubset mode.
  std::optional<double> projected_rel_err;
  std::string projected_note;
};

struct PreservationReport {
  std::vector<ConceptPreservation> concepts;  // adapter order
  std::vector<std::string> warnings;
};

PreservationReport preservation_report(const BaseLayer& base, std::span<const Adapter> adapters,
                                       std::span<const double> lambdas, std::span<const ConceptTask> tasks);

// ---------------------------------------------------------------------------
// Ablations. Each (setting, seed) cell is independent and deterministic;
// rows come back in (setting, seed) order regardless of `threads`.

struct AblationRow {
  std::string study;  // "overlap" or "concept_count"
  std::string mode;
  double overlap_fraction = 0.0;  // overlap study
  std::size_t shared_columns = 0;  // overlap study
  std::size_t num_concepts = 0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  double raw_rel_err_mean = 0.0;
  double raw_rel_err_median = 0.0;
  std::optional<double> projected_rel_err_max;
  double loss_inflation_mean = 0.0;  // mean of merged_loss − single_loss
  std::vector<ConceptPreservation> concepts;
};

// Two concepts from `pair_spec` (seeds derived per cell; SubspaceConcentrated
// pairs share one input plane) fitted with frozen shared-subset B's that
// share round(f·rank) columns, merged with λ = 1.
std::vector<AblationRow> overlap_ablation(const BaseLayer& base, const ConceptTaskSpec& pair_spec,
                                          std::span<const double> overlap_fractions,
                                          std::span<const std::uint64_t> seeds, std::size_t rank = 20,
                                          std::size_t threads = 1);

inline const std::vector<double> kDefaultOverlapGrid = {1.0, 0.5, 0.0};

struct SweepOptions {
  std::size_t rank = 20;
  double lambda = 0.6;
  TrainConfig free_train{.learning_rate = {}, .steps = 1500, .log_every = 500, .ridge_eps = {}};
  std::size_t threads = 1;
};

// m concepts from `family_spec` fitted independently per mode and merged
// with one λ. Frozen modes use the closed-form fit; LearnedFree uses
// gradient descent. SharedSubset mode allocates disjoint subsets and
// requires m·rank <= d_in.
std::vector<AblationRow> concept_sweep(const BaseLayer& base, const ConceptTaskSpec& family_spec,
                                       std::span<const std::size_t> counts, std::span<const ModeKind> modes,
                                       std::span<const std::uint64_t> seeds, const SweepOptions& options = {});

struct AblationSummary {
  std::string study;
  std::string mode;
  double overlap_fraction = 0.0;
  std::size_t num_concepts = 0;
  std::size_t seeds = 0;
  double raw_rel_err_median = 0.0;  // median over seeds of per-seed medians
  double raw_rel_err_mean = 0.0;    // mean over seeds of per-seed means
  std::optional<double> projected_rel_err_max;
};

// One summary per distinct (study, mode, fraction, count), in first-seen order.
std::vector<AblationSummary> summarize(std::span<const AblationRow> rows);

// ---------------------------------------------------------------------------
// Monte Carlo studies of the basis constructions.

struct ExpectationOrthogonality {
  std::size_t trials = 0;
  double max_abs_mean_entry = 0.0;
  double stderr_of_max = 0.0;   // standard error of that entry
  double max_abs_z = 0.0;       // max over entries of |mean| / stderr
};

// Sample mean of B_iᵀ·B_j over independent Gaussian pairs. trials >= 1000.
ExpectationOrthogonality expectation_orthogonality_test(std::size_t n, std::size_t r, double sigma,
                                                        std::size_t trials, std::uint64_t seed);

struct ModeCrosstalk {
  std::size_t trials = 0;
  double gaussian_mean = 0.0;  // mean ‖B_iᵀB_j‖_F, independent Gaussian pairs
  double subset_mean = 0.0;    // mean over disjoint subsets of one shared basis
  double subset_max = 0.0;
};

ModeCrosstalk compare_mode_crosstalk(std::size_t n, std::size_t r, double sigma, std::size_t trials,
                                     std::uint64_t seed);

struct CollisionEstimate {
  std::size_t pairs = 0;
  double mean_overlap = 0.0;
  double overlap_stderr = 0.0;
  double p_disjoint = 0.0;
  double p_disjoint_stderr = 0.0;
};

// Overlap of independently sampled k-subsets of [0, n).
CollisionEstimate collision_monte_carlo(std::size_t n, std::size_t k, std::size_t pairs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Serialisation. CSV columns are fixed: setting,seed,concept_id,metric,value
// with values printed to 17 significant digits; rows whose metric is not
// applicable are omitted.

inline constexpr const char* kCsvHeader = "setting,seed,concept_id,metric,value";

struct CsvRow {
  std::string setting;
  std::uint64_t seed = 0;
  std::string concept_id;
  std::string metric;
  double value = 0.0;
};

nlohmann::json to_json(const CrosstalkReport& report);
nlohmann::json to_json(const PreservationReport& report);
nlohmann::json to_json(std::span<const AblationRow> rows);
nlohmann::json to_json(std::span<const AblationSummary> summaries);
nlohmann::json to_json(const ExpectationOrthogonality& r);
nlohmann::json to_json(const ModeCrosstalk& r);

void append_csv(std::vector<CsvRow>& out, const CrosstalkReport& report, std::uint64_t seed);
void append_csv(std::vector<CsvRow>& out, const PreservationReport& report, std::uint64_t seed);
void append_csv(std::vector<CsvRow>& out, std::span<const AblationRow> rows);
std::string render_csv(std::span<const CsvRow> rows);

double median(std::vector<double> values);

}  // namespace ortha
