#include "ortha/analysis.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

#include "ortha/basis.h"
#include "ortha/error.h"
#include "ortha/merge.h"
#include "ortha/parallel.h"
#include "ortha/rng.h"

namespace ortha {

namespace {

constexpr double kNormEps = 1e-30;

const ConceptTask& task_for(const Adapter& ad, std::span<const ConceptTask> tasks) {
  for (const auto& t : tasks)
    if (t.concept_id() == ad.concept_id) return t;
  throw ValidationError("no task for adapter concept_id '" + ad.concept_id + "'");
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// S_i for concept i: complement of every other concept's shared-subset
// columns, or a reason why the projection does not apply.
std::optional<Matrix> complement_for(std::span<const Adapter> adapters, std::size_t i, std::string& note) {
  const auto* own = std::get_if<SharedSubset>(&adapters[i].mode);
  if (!own) {
    note = std::string("not applicable: ") + mode_name(adapters[i].mode) + " adapter has no shared basis";
    return std::nullopt;
  }
  std::vector<const ColumnSubset*> others;
  for (std::size_t j = 0; j < adapters.size(); ++j) {
    if (j == i) continue;
    const auto* s = std::get_if<SharedSubset>(&adapters[j].mode);
    if (!s) {
      note = "not applicable: concept '" + adapters[j].concept_id + "' is a " + mode_name(adapters[j].mode) + " adapter";
      return std::nullopt;
    }
    if (s->subset.basis_seed != own->subset.basis_seed) {
      note = "not applicable: concept '" + adapters[j].concept_id + "' uses a different shared basis";
      return std::nullopt;
    }
    others.push_back(&s->subset);
  }
  const auto basis = shared_basis(adapters[i].d_in, own->subset.basis_seed);
  if (others.empty()) return Matrix::identity(adapters[i].d_in);
  ColumnSubset excluded = subset_union(others);
  if (excluded.size() >= basis->dim) {
    note = "not applicable: other concepts' subsets cover all " + std::to_string(basis->dim) + " basis columns";
    return std::nullopt;
  }
  return complement_columns(*basis, excluded);
}

double rel_err(const Matrix& merged_out, const Matrix& single_out) {
  return frobenius_norm(merged_out - single_out) / std::max(frobenius_norm(single_out), kNormEps);
}

AblationRow summarize_cell(const PreservationReport& report) {
  AblationRow row;
  std::vector<double> raw;
  std::vector<double> inflation;
  std::optional<double> proj_max;
  bool proj_all = true;
  for (const auto& c : report.concepts) {
    raw.push_back(c.raw_rel_err);
    inflation.push_back(c.merged_loss - c.single_loss);
    if (c.projected_rel_err) {
      proj_max = std::max(proj_max.value_or(0.0), *c.projected_rel_err);
    } else {
      proj_all = false;
    }
  }
  row.raw_rel_err_mean = mean_of(raw);
  row.raw_rel_err_median = median(raw);
  row.loss_inflation_mean = mean_of(inflation);
  if (proj_all) row.projected_rel_err_max = proj_max;
  row.concepts = report.concepts;
  return row;
}

ConceptTaskSpec cell_spec(const ConceptTaskSpec& family, std::uint64_t cell_seed, std::size_t index) {
  ConceptTaskSpec spec = family;
  spec.concept_id = "c" + std::to_string(index);
  spec.seed = derive_seed(cell_seed, "concept_task", index);
  if (auto* sub = std::get_if<SubspaceConcentrated>(&spec.input_dist)) {
    // Concepts of one cell are semantically similar: one shared input plane.
    sub->subspace_seed = derive_seed(family.seed ^ sub->subspace_seed, "cell_subspace", cell_seed);
  }
  return spec;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

CrosstalkReport crosstalk_report(std::span<const Adapter> adapters, std::span<const ConceptTask> tasks) {
  const std::size_t m = adapters.size();
  CrosstalkReport report;
  report.data_xtalk = Matrix(m, m);
  report.data_xtalk_raw = Matrix(m, m);
  report.weight_xtalk = Matrix(m, m);
  std::vector<Matrix> deltas;
  std::vector<double> delta_norms;
  for (const auto& ad : adapters) {
    report.concept_ids.push_back(ad.concept_id);
    if (ad.d_in != adapters.front().d_in || ad.d_out != adapters.front().d_out) {
      throw ShapeError("crosstalk_report: adapter '" + ad.concept_id + "' has different layer dimensions");
    }
    deltas.push_back(delta(ad));
    delta_norms.push_back(frobenius_norm(deltas.back()));
  }
  for (std::size_t i = 0; i < m; ++i) {
    const ConceptTask& task = task_for(adapters[i], tasks);
    const double x_norm = frobenius_norm(task.x());
    for (std::size_t j = 0; j < m; ++j) {
      const double raw = frobenius_norm(forward(deltas[j], task.x()));
      report.data_xtalk_raw(i, j) = raw;
      report.data_xtalk(i, j) = raw / (delta_norms[j] * x_norm + kNormEps);
      report.weight_xtalk(i, j) = basis_crosstalk(adapters[i].b, adapters[j].b);
    }
  }
  return report;
}

PreservationReport preservation_report(const BaseLayer& base, std::span<const Adapter> adapters,
                                       std::span<const double> lambdas, std::span<const ConceptTask> tasks) {
  if (lambdas.size() != adapters.size()) {
    throw ValidationError("preservation_report: " + std::to_string(lambdas.size()) + " lambdas for " +
                          std::to_string(adapters.size()) + " adapters");
  }
  MergeSpec spec;
  for (std::size_t i = 0; i < adapters.size(); ++i) spec.add(adapters[i], lambdas[i]);
  const MergedModel merged = fed_avg_merge(base, spec);

  PreservationReport report;
  report.warnings = merged.warnings;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    const ConceptTask& task = task_for(adapters[i], tasks);
    const Matrix single = apply(base, adapters[i]);
    ConceptPreservation c;
    c.concept_id = adapters[i].concept_id;
    c.single_loss = task_loss(single, task);
    c.merged_loss = task_loss(merged.w_merged, task);
    c.raw_rel_err = rel_err(forward(merged.w_merged, task.x()), forward(single, task.x()));

    std::string note;
    if (auto s = complement_for(adapters, i, note)) {
      const Matrix projected = mat_mul(*s, mat_tmul(*s, task.x()));
      const Matrix single_out = forward(single, projected);
      if (frobenius_norm(single_out) == 0.0) {
        c.projected_note = "not applicable: projected inputs map to zero";
      } else {
        c.projected_rel_err = rel_err(forward(merged.w_merged, projected), single_out);
      }
    } else {
      c.projected_note = note;
    }
    report.concepts.push_back(std::move(c));
  }
  return report;
}

std::vector<AblationRow> overlap_ablation(const BaseLayer& base, const ConceptTaskSpec& pair_spec,
                                          std::span<const double> overlap_fractions,
                                          std::span<const std::uint64_t> seeds, std::size_t rank,
                                          std::size_t threads) {
  std::vector<std::size_t> shared;
  for (double f : overlap_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("overlap_ablation: fraction must lie in [0, 1]");
    const auto k = static_cast<std::size_t>(std::lround(f * static_cast<double>(rank)));
    if (2 * rank - k > base.d_in) {
      throw ValidationError("overlap_ablation: fraction " + std::to_string(f) + " needs " +
                            std::to_string(2 * rank - k) + " distinct columns but d_in is " +
                            std::to_string(base.d_in));
    }
    shared.push_back(k);
  }

  std::vector<AblationRow> rows(overlap_fractions.size() * seeds.size());
  parallel_for(rows.size(), threads, [&](std::size_t cell) {
    const std::size_t fi = cell / seeds.size();
    const std::uint64_t seed = seeds[cell % seeds.size()];
    const std::uint64_t basis_seed = derive_seed(seed, "overlap_basis");
    const auto [si, sj] =
        overlapping_subsets(base.d_in, rank, shared[fi], basis_seed, derive_seed(seed, "overlap_subsets"));
    std::vector<ConceptTask> tasks;
    std::vector<Adapter> adapters;
    const ColumnSubset* subsets[2] = {&si, &sj};
    for (std::size_t c = 0; c < 2; ++c) {
      tasks.push_back(make_task(cell_spec(pair_spec, seed, c), base));
      adapters.push_back(solve_closed_form(base, tasks.back(), rank, SharedSubset{*subsets[c]},
                                           derive_seed(seed, "overlap_adapter", c)));
    }
    const double lambdas[2] = {1.0, 1.0};
    AblationRow row = summarize_cell(preservation_report(base, adapters, lambdas, tasks));
    row.study = "overlap";
    row.mode = "shared_subset";
    row.overlap_fraction = overlap_fractions[fi];
    row.shared_columns = shared[fi];
    row.num_concepts = 2;
    row.lambda = 1.0;
    row.seed = seed;
    rows[cell] = std::move(row);
  });
  return rows;
}

std::vector<AblationRow> concept_sweep(const BaseLayer& base, const ConceptTaskSpec& family_spec,
                                       std::span<const std::size_t> counts, std::span<const ModeKind> modes,
                                       std::span<const std::uint64_t> seeds, const SweepOptions& options) {
  for (std::size_t m : counts) {
    if (m < 1) throw ValidationError("concept_sweep: concept counts must be positive");
    for (ModeKind mode : modes) {
      if (mode == ModeKind::shared_subset && m * options.rank > base.d_in) {
        throw ValidationError("concept_sweep: " + std::to_string(m) + " disjoint subsets of rank " +
                              std::to_string(options.rank) + " need d_in >= " + std::to_string(m * options.rank) +
                              " (got " + std::to_string(base.d_in) + "); use a wider layer");
      }
    }
  }

  const std::size_t per_setting = seeds.size();
  std::vector<AblationRow> rows(counts.size() * modes.size() * per_setting);
  parallel_for(rows.size(), options.threads, [&](std::size_t cell) {
    const std::size_t ci = cell / (modes.size() * per_setting);
    const std::size_t mi = (cell / per_setting) % modes.size();
    const std::uint64_t seed = seeds[cell % per_setting];
    const std::size_t m = counts[ci];
    const ModeKind kind = modes[mi];

    std::vector<ColumnSubset> subsets;
    if (kind == ModeKind::shared_subset) {
      subsets = disjoint_subsets(base.d_in, options.rank, m, derive_seed(seed, "sweep_basis"),
                                 derive_seed(seed, "sweep_subsets"));
    }
    std::vector<ConceptTask> tasks;
    std::vector<Adapter> adapters;
    for (std::size_t c = 0; c < m; ++c) {
      tasks.push_back(make_task(cell_spec(family_spec, seed, c), base));
      const std::uint64_t adapter_seed = derive_seed(seed, "sweep_adapter", c);
      const BasisMode mode = kind == ModeKind::shared_subset
                                 ? BasisMode{SharedSubset{subsets[c]}}
                                 : sample_mode(kind, base.d_in, options.rank, 0, adapter_seed);
      if (kind == ModeKind::learned_free) {
        adapters.push_back(train_gd(base, tasks.back(), options.rank, mode, adapter_seed, options.free_train).adapter);
      } else {
        adapters.push_back(solve_closed_form(base, tasks.back(), options.rank, mode, adapter_seed));
      }
    }
    const std::vector<double> lambdas(m, options.lambda);
    AblationRow row = summarize_cell(preservation_report(base, adapters, lambdas, tasks));
    row.study = "concept_count";
    row.mode = mode_kind_name(kind);
    row.num_concepts = m;
    row.lambda = options.lambda;
    row.seed = seed;
    rows[cell] = std::move(row);
  });
  return rows;
}

std::vector<AblationSummary> summarize(std::span<const AblationRow> rows) {
  using Key = std::tuple<std::string, std::string, double, std::size_t>;
  std::vector<Key> order;
  std::map<Key, std::vector<const AblationRow*>> groups;
  for (const auto& r : rows) {
    Key key{r.study, r.mode, r.overlap_fraction, r.num_concepts};
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<AblationSummary> out;
  for (const auto& key : order) {
    const auto& group = groups[key];
    AblationSummary s;
    std::tie(s.study, s.mode, s.overlap_fraction, s.num_concepts) = key;
    s.seeds = group.size();
    std::vector<double> medians;
    std::vector<double> means;
    bool proj_all = true;
    for (const auto* r : group) {
      medians.push_back(r->raw_rel_err_median);
      means.push_back(r->raw_rel_err_mean);
      if (r->projected_rel_err_max) {
        s.projected_rel_err_max = std::max(s.projected_rel_err_max.value_or(0.0), *r->projected_rel_err_max);
      } else {
        proj_all = false;
      }
    }
    if (!proj_all) s.projected_rel_err_max.reset();
    s.raw_rel_err_median = median(medians);
    s.raw_rel_err_mean = mean_of(means);
    out.push_back(std::move(s));
  }
  return out;
}

ExpectationOrthogonality expectation_orthogonality_test(std::size_t n, std::size_t r, double sigma,
                                                        std::size_t trials, std::uint64_t seed) {
  if (trials < 1000) throw ValidationError("expectation_orthogonality_test: need at least 1000 trials");
  if (!(sigma > 0.0)) throw ValidationError("expectation_orthogonality_test: sigma must be > 0");
  Matrix sum(r, r);
  Matrix sum_sq(r, r);
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix bi = gaussian_b(n, r, sigma, derive_seed(seed, "expectation_i", t));
    const Matrix bj = gaussian_b(n, r, sigma, derive_seed(seed, "expectation_j", t));
    const Matrix p = mat_tmul(bi, bj);
    for (std::size_t k = 0; k < p.size(); ++k) {
      sum.values()[k] += p.values()[k];
      sum_sq.values()[k] += p.values()[k] * p.values()[k];
    }
  }
  ExpectationOrthogonality out;
  out.trials = trials;
  const double nt = static_cast<double>(trials);
  for (std::size_t k = 0; k < sum.size(); ++k) {
    const double mean = sum.values()[k] / nt;
    const double var = (sum_sq.values()[k] - nt * mean * mean) / (nt - 1.0);
    const double se = std::sqrt(std::max(var, 0.0) / nt);
    if (std::fabs(mean) > out.max_abs_mean_entry) {
      out.max_abs_mean_entry = std::fabs(mean);
      out.stderr_of_max = se;
    }
    out.max_abs_z = std::max(out.max_abs_z, se > 0.0 ? std::fabs(mean) / se : 0.0);
  }
  return out;
}

ModeCrosstalk compare_mode_crosstalk(std::size_t n, std::size_t r, double sigma, std::size_t trials,
                                     std::uint64_t seed) {
  if (trials == 0) throw ValidationError("compare_mode_crosstalk: trials must be positive");
  const auto basis = shared_basis(n, derive_seed(seed, "mode_crosstalk_basis"));
  ModeCrosstalk out;
  out.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const Matrix gi = gaussian_b(n, r, sigma, derive_seed(seed, "mode_crosstalk_gi", t));
    const Matrix gj = gaussian_b(n, r, sigma, derive_seed(seed, "mode_crosstalk_gj", t));
    out.gaussian_mean += basis_crosstalk(gi, gj);
    const auto pair = disjoint_subsets(n, r, 2, basis->seed, derive_seed(seed, "mode_crosstalk_subsets", t));
    const double sub = basis_crosstalk(subset_columns(*basis, pair[0]), subset_columns(*basis, pair[1]));
    out.subset_mean += sub;
    out.subset_max = std::max(out.subset_max, sub);
  }
  out.gaussian_mean /= static_cast<double>(trials);
  out.subset_mean /= static_cast<double>(trials);
  return out;
}

CollisionEstimate collision_monte_carlo(std::size_t n, std::size_t k, std::size_t pairs, std::uint64_t seed) {
  if (pairs < 2) throw ValidationError("collision_monte_carlo: need at least two pairs");
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t disjoint = 0;
  std::vector<char> mark(n);
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto a = sample_subset_indices(n, k, 0, derive_seed(seed, "collision_a", p));
    const auto b = sample_subset_indices(n, k, 0, derive_seed(seed, "collision_b", p));
    std::fill(mark.begin(), mark.end(), 0);
    for (auto i : a.indices) mark[i] = 1;
    std::size_t overlap = 0;
    for (auto i : b.indices) overlap += static_cast<std::size_t>(mark[i]);
    sum += static_cast<double>(overlap);
    sum_sq += static_cast<double>(overlap * overlap);
    disjoint += overlap == 0 ? 1 : 0;
  }
  const double np = static_cast<double>(pairs);
  CollisionEstimate out;
  out.pairs = pairs;
  out.mean_overlap = sum / np;
  const double var = (sum_sq - np * out.mean_overlap * out.mean_overlap) / (np - 1.0);
  out.overlap_stderr = std::sqrt(std::max(var, 0.0) / np);
  out.p_disjoint = static_cast<double>(disjoint) / np;
  out.p_disjoint_stderr = std::sqrt(out.p_disjoint * (1.0 - out.p_disjoint) / np);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_rows(const Matrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return out;
}

nlohmann::json optional_value(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json concept_json(const ConceptPreservation& c) {
  nlohmann::json j = {{"concept_id", c.concept_id},
                      {"single_loss", c.single_loss},
                      {"merged_loss", c.merged_loss},
                      {"raw_rel_err", c.raw_rel_err},
                      {"projected_rel_err", optional_value(c.projected_rel_err)}};
  if (!c.projected_note.empty()) j["projected_note"] = c.projected_note;
  return j;
}

std::string setting_of(const AblationRow& r) {
  char buf[96];
  if (r.study == "overlap") {
    std::snprintf(buf, sizeof(buf), "overlap/%s/f=%.17g", r.mode.c_str(), r.overlap_fraction);
  } else {
    std::snprintf(buf, sizeof(buf), "concept_count/%s/m=%zu", r.mode.c_str(), r.num_concepts);
  }
  return buf;
}

}  // namespace

nlohmann::json to_json(const CrosstalkReport& report) {
  return {{"concept_ids", report.concept_ids},
          {"data_xtalk", matrix_rows(report.data_xtalk)},
          {"data_xtalk_raw", matrix_rows(report.data_xtalk_raw)},
          {"weight_xtalk", matrix_rows(report.weight_xtalk)}};
}

nlohmann::json to_json(const PreservationReport& report) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& c : report.concepts) concepts.push_back(concept_json(c));
  return {{"concepts", concepts}, {"warnings", report.warnings}};
}

nlohmann::json to_json(std::span<const AblationRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& c : r.concepts) concepts.push_back(concept_json(c));
    out.push_back({{"study", r.study},
                   {"mode", r.mode},
                   {"overlap_fraction", r.overlap_fraction},
                   {"shared_columns", r.shared_columns},
                   {"num_concepts", r.num_concepts},
                   {"lambda", r.lambda},
                   {"seed", r.seed},
                   {"raw_rel_err_mean", r.raw_rel_err_mean},
                   {"raw_rel_err_median", r.raw_rel_err_median},
                   {"projected_rel_err_max", optional_value(r.projected_rel_err_max)},
                   {"loss_inflation_mean", r.loss_inflation_mean},
                   {"concepts", concepts}});
  }
  return out;
}

nlohmann::json to_json(std::span<const AblationSummary> summaries) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : summaries) {
    out.push_back({{"study", s.study},
                   {"mode", s.mode},
                   {"overlap_fraction", s.overlap_fraction},
                   {"num_concepts", s.num_concepts},
                   {"seeds", s.seeds},
                   {"raw_rel_err_median", s.raw_rel_err_median},
                   {"raw_rel_err_mean", s.raw_rel_err_mean},
                   {"projected_rel_err_max", optional_value(s.projected_rel_err_max)}});
  }
  return out;
}

nlohmann::json to_json(const ExpectationOrthogonality& r) {
  return {{"trials", r.trials},
          {"max_abs_mean_entry", r.max_abs_mean_entry},
          {"stderr_of_max", r.stderr_of_max},
          {"max_abs_z", r.max_abs_z}};
}

nlohmann::json to_json(const ModeCrosstalk& r) {
  return {{"trials", r.trials},
          {"gaussian_mean", r.gaussian_mean},
          {"subset_mean", r.subset_mean},
          {"subset_max", r.subset_max}};
}

void append_csv(std::vector<CsvRow>& out, const CrosstalkReport& report, std::uint64_t seed) {
  const auto& ids = report.concept_ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const std::string pair = ids[i] + "|" + ids[j];
      out.push_back({"crosstalk", seed, pair, "data_xtalk", report.data_xtalk(i, j)});
      out.push_back({"crosstalk", seed, pair, "data_xtalk_raw", report.data_xtalk_raw(i, j)});
      out.push_back({"crosstalk", seed, pair, "weight_xtalk", report.weight_xtalk(i, j)});
    }
  }
}

void append_csv(std::vector<CsvRow>& out, const PreservationReport& report, std::uint64_t seed) {
  for (const auto& c : report.concepts) {
    out.push_back({"preservation", seed, c.concept_id, "single_loss", c.single_loss});
    out.push_back({"preservation", seed, c.concept_id, "merged_loss", c.merged_loss});
    out.push_back({"preservation", seed, c.concept_id, "raw_rel_err", c.raw_rel_err});
    if (c.projected_rel_err) {
      out.push_back({"preservation", seed, c.concept_id, "projected_rel_err", *c.projected_rel_err});
    }
  }
}

void append_csv(std::vector<CsvRow>& out, std::span<const AblationRow> rows) {
  for (const auto& r : rows) {
    const std::string setting = setting_of(r);
    for (const auto& c : r.concepts) {
      out.push_back({setting, r.seed, c.concept_id, "raw_rel_err", c.raw_rel_err});
      if (c.projected_rel_err) out.push_back({setting, r.seed, c.concept_id, "projected_rel_err", *c.projected_rel_err});
      out.push_back({setting, r.seed, c.concept_id, "loss_inflation", c.merged_loss - c.single_loss});
    }
  }
}

std::string render_csv(std::span<const CsvRow> rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out += r.setting + "," + std::to_string(r.seed) + "," + r.concept_id + "," + r.metric + "," + buf + "\n";
  }
  return out;
}

}  // namespace ortha
