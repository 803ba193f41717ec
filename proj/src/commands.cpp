#include "ortha/commands.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "ortha/adapter_io.h"
#include "ortha/analysis.h"
#include "ortha/basis.h"
#include "ortha/error.h"
#include "ortha/merge.h"
#include "ortha/parallel.h"
#include "ortha/rng.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ortha {

namespace {

constexpr double kProjectedTolerance = 1e-10;
constexpr double kSubsetCrosstalkTolerance = 1e-12;
constexpr double kMaxZ = 4.0;
constexpr double kCollisionSigmas = 3.0;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string loss_csv(const TrainResult& result) {
  std::string out = "step,loss\n";
  for (const auto& p : result.loss_curve) out += std::to_string(p.step) + "," + fmt17(p.loss) + "\n";
  return out;
}

TrainResult train_one(const ExperimentConfig& cfg, const ConceptConfig& concept_cfg, const LayerConfig& layer) {
  const BaseLayer base = base_for(layer);
  const ConceptTask task = make_task(task_spec_for(concept_cfg, layer.d_in, layer.d_out, layer.layer_id), base);
  const BasisMode mode = mode_for(cfg, concept_cfg.concept_id, layer);
  const std::uint64_t seed = derive_seed(adapter_seed_for(cfg, concept_cfg.concept_id), "layer_adapter/" + layer.layer_id);

  TrainResult result;
  if (cfg.train.method == TrainMethod::closed_form) {
    if (!is_frozen(mode)) {
      throw ValidationError("train.method closed_form needs a frozen mode; learned_free adapters train with gd");
    }
    result.adapter = solve_closed_form(base, task, cfg.adapter.rank, mode, seed, cfg.train.gd.ridge_eps);
    result.final_loss = task_loss(apply(base, result.adapter), task);
    result.loss_curve = {{0, task_loss(base.w0, task)}, {1, result.final_loss}};
  } else {
    try {
      result = train_gd(base, task, cfg.adapter.rank, mode, seed, cfg.train.gd);
    } catch (const DivergenceError& e) {
      throw NumericalError("concept '" + concept_cfg.concept_id + "' on layer '" + layer.layer_id + "': " + e.what());
    }
  }
  Adapter& ad = result.adapter;
  ad.concept_id = concept_cfg.concept_id;
  ad.meta.layer_id = layer.layer_id;
  ad.meta.task_seed = task.spec().seed;
  ad.meta.final_loss = result.final_loss;
  ad.meta.steps = cfg.train.method == TrainMethod::closed_form ? 0 : cfg.train.gd.steps;
  return result;
}

// Adapters and tasks for one layer, reconstructed from the output directory.
struct LayerState {
  const LayerConfig* layer = nullptr;
  BaseLayer base;
  std::vector<Adapter> adapters;
  std::vector<ConceptTask> tasks;
};

std::vector<LayerState> load_trained(const ExperimentConfig& cfg, const fs::path& out_dir) {
  if (cfg.concepts.empty()) throw ValidationError("analyze: the config defines no concepts");
  std::vector<std::string> missing;
  for (const auto& layer : cfg.layers)
    for (const auto& c : cfg.concepts) {
      const fs::path p = adapter_path(out_dir, c.concept_id, layer.layer_id);
      if (!fs::exists(p)) missing.push_back(p.string());
    }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += "\n  " + m;
    throw IoError("missing adapter files (run train first):" + names);
  }
  std::vector<LayerState> out;
  for (const auto& layer : cfg.layers) {
    LayerState st;
    st.layer = &layer;
    st.base = base_for(layer);
    for (const auto& c : cfg.concepts) {
      const fs::path p = adapter_path(out_dir, c.concept_id, layer.layer_id);
      Adapter ad = load_adapter(p);
      const ConceptTaskSpec spec = task_spec_for(c, layer.d_in, layer.d_out, layer.layer_id);
      if (ad.concept_id != c.concept_id || ad.meta.layer_id != layer.layer_id) {
        throw ValidationError(p.string() + " holds concept '" + ad.concept_id + "' on layer '" + ad.meta.layer_id +
                              "', expected '" + c.concept_id + "' on '" + layer.layer_id + "'");
      }
      if (ad.d_in != layer.d_in || ad.d_out != layer.d_out) {
        throw ShapeError(p.string() + " does not match layer '" + layer.layer_id + "' dimensions");
      }
      if (ad.meta.task_seed != spec.seed) {
        throw ValidationError(p.string() + " was trained on a different task seed than the config describes");
      }
      st.tasks.push_back(make_task(spec, st.base));
      st.adapters.push_back(std::move(ad));
    }
    out.push_back(std::move(st));
  }
  return out;
}

Check projected_check(const std::vector<PreservationReport>& reports) {
  Check c{"projected preservation (lambda = 1)", true, false, ""};
  double worst = 0.0;
  std::size_t counted = 0;
  for (const auto& r : reports)
    for (const auto& cp : r.concepts)
      if (cp.projected_rel_err) {
        ++counted;
        worst = std::max(worst, *cp.projected_rel_err);
      }
  if (counted == 0) {
    c.detail = "no concept has a defined orthogonal complement";
    return c;
  }
  c.applicable = true;
  c.passed = worst < kProjectedTolerance;
  c.detail = "max projected_rel_err " + fmt(worst) + " over " + std::to_string(counted) + " concept(s), threshold " +
             fmt(kProjectedTolerance);
  return c;
}

std::vector<std::uint64_t> seed_list(std::uint64_t root, std::string_view purpose, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(derive_seed(root, purpose, i));
  return seeds;
}

}  // namespace

fs::path adapter_path(const fs::path& out_dir, const std::string& concept_id, const std::string& layer_id) {
  return out_dir / "adapters" / (concept_id + "__" + layer_id + ".oadp");
}

fs::path loss_curve_path(const fs::path& out_dir, const std::string& concept_id, const std::string& layer_id) {
  return out_dir / "losses" / (concept_id + "__" + layer_id + ".csv");
}

fs::path merged_path(const fs::path& out_dir, const std::string& layer_id) {
  return out_dir / ("merged_" + layer_id + ".oadp");
}

double cmd_gen_basis(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  validate_config(cfg);
  const auto basis = shared_basis(cfg.basis_dim, cfg.basis_seed);
  const Matrix gram = mat_tmul(basis->ortho, basis->ortho);
  const double residual = max_abs(gram - Matrix::identity(cfg.basis_dim));
  const json descriptor = {{"dim", cfg.basis_dim}, {"seed", cfg.basis_seed}};
  write_text(out_dir / "basis.json", descriptor.dump() + "\n");
  log << "basis dim=" << cfg.basis_dim << " seed=" << cfg.basis_seed << " orthonormality residual "
      << fmt(residual) << "\n";
  return residual;
}

std::vector<fs::path> cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir,
                                const std::optional<std::string>& concept_id, std::size_t threads,
                                std::ostream& log) {
  validate_config(cfg);
  std::vector<const ConceptConfig*> chosen;
  if (concept_id) {
    chosen.push_back(&find_concept(cfg, *concept_id));
  } else {
    for (const auto& c : cfg.concepts) chosen.push_back(&c);
  }
  struct Job {
    const ConceptConfig* concept_cfg;
    const LayerConfig* layer;
  };
  std::vector<Job> jobs;
  for (const auto* c : chosen)
    for (const auto& l : cfg.layers) jobs.push_back({c, &l});

  std::vector<TrainResult> results(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) { results[i] = train_one(cfg, *jobs[i].concept_cfg, *jobs[i].layer); });

  ensure_dir(out_dir / "adapters");
  ensure_dir(out_dir / "losses");
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& ad = results[i].adapter;
    const fs::path p = adapter_path(out_dir, ad.concept_id, ad.meta.layer_id);
    save_adapter(ad, p);
    write_text(loss_curve_path(out_dir, ad.concept_id, ad.meta.layer_id), loss_csv(results[i]));
    log << "trained " << ad.concept_id << " on " << ad.meta.layer_id << " (" << mode_name(ad.mode) << "): loss "
        << fmt(results[i].loss_curve.front().loss) << " -> " << fmt(results[i].final_loss) << ", checksum "
        << adapter_checksum(ad) << "\n";
    written.push_back(p);
  }
  return written;
}

std::vector<fs::path> cmd_merge(const ExperimentConfig& cfg, const fs::path& out_dir,
                                const std::vector<fs::path>& adapter_paths, std::optional<double> lambda,
                                std::ostream& log) {
  validate_config(cfg);
  if (lambda && !std::isfinite(*lambda)) throw ValidationError("merge: --lambda must be finite");

  std::set<fs::path> seen;
  std::map<std::string, std::vector<Adapter>> by_layer;
  std::map<std::string, std::vector<fs::path>> sources;
  for (const auto& p : adapter_paths) {
    std::error_code ec;
    fs::path key = fs::weakly_canonical(p, ec);
    if (ec) key = p.lexically_normal();
    if (!seen.insert(key).second) throw ValidationError("merge: adapter path given twice: " + p.string());
    Adapter ad = load_adapter(p);
    if (ad.meta.layer_id.empty()) throw ValidationError("merge: " + p.string() + " has no layer_id");
    find_layer(cfg, ad.meta.layer_id);
    for (std::size_t i = 0; i < by_layer[ad.meta.layer_id].size(); ++i) {
      if (by_layer[ad.meta.layer_id][i].concept_id == ad.concept_id) {
        throw ValidationError("merge: concept '" + ad.concept_id + "' appears twice on layer '" + ad.meta.layer_id +
                              "' (" + sources[ad.meta.layer_id][i].string() + " and " + p.string() + ")");
      }
    }
    sources[ad.meta.layer_id].push_back(p);
    by_layer[ad.meta.layer_id].push_back(std::move(ad));
  }

  json provenance = json::array();
  std::vector<fs::path> written;
  for (const auto& layer : cfg.layers) {
    if (!adapter_paths.empty() && !by_layer.contains(layer.layer_id)) continue;
    const BaseLayer base = base_for(layer);
    MergeSpec spec;
    spec.default_lambda = lambda.value_or(cfg.merge.default_lambda);
    const auto& ads = by_layer[layer.layer_id];
    for (const auto& ad : ads) {
      spec.add(ad, lambda ? std::optional<double>(*lambda) : std::optional<double>(lambda_for(cfg, ad.concept_id)));
    }
    const MergedModel merged = fed_avg_merge(base, spec);

    json entries = json::array();
    for (const auto& e : merged.provenance) {
      entries.push_back({{"concept_id", e.concept_id}, {"mode", e.mode}, {"lambda", e.lambda}, {"checksum", e.checksum}});
    }
    DenseLayer dense{merged.w_merged, {{"layer_id", layer.layer_id}, {"base_seed", layer.base_seed}, {"adapters", entries}}};
    const fs::path p = merged_path(out_dir, layer.layer_id);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    save_dense_layer(dense, p);
    provenance.push_back({{"layer_id", layer.layer_id},
                          {"file", p.filename().string()},
                          {"adapters", entries},
                          {"warnings", merged.warnings}});
    for (const auto& w : merged.warnings) log << "warning: " << w << "\n";
    log << "merged " << ads.size() << " adapter(s) into " << p.string() << "\n";
    written.push_back(p);
  }
  write_text(out_dir / "merged_provenance.json", json({{"layers", provenance}}).dump(2) + "\n");
  return written;
}

std::vector<Check> cmd_analyze(const ExperimentConfig& cfg, const fs::path& out_dir, std::optional<std::size_t> trials,
                               std::optional<double> lambda, std::size_t threads, std::ostream& log) {
  validate_config(cfg);
  (void)threads;  // the per-layer reports are cheap; Monte Carlo loops are sequential for a fixed draw order
  const std::vector<LayerState> layers = load_trained(cfg, out_dir);

  json layer_reports = json::array();
  std::vector<CsvRow> csv;
  std::vector<PreservationReport> unit_reports;
  for (const auto& st : layers) {
    const CrosstalkReport xt = crosstalk_report(st.adapters, st.tasks);
    const std::vector<double> ones(st.adapters.size(), 1.0);
    PreservationReport unit = preservation_report(st.base, st.adapters, ones, st.tasks);
    std::vector<double> merge_lambdas;
    for (const auto& ad : st.adapters) merge_lambdas.push_back(lambda.value_or(lambda_for(cfg, ad.concept_id)));
    const PreservationReport merged = preservation_report(st.base, st.adapters, merge_lambdas, st.tasks);

    const std::string layer_id = st.layer->layer_id;
    const std::size_t before = csv.size();
    append_csv(csv, xt, cfg.seed);
    append_csv(csv, unit, cfg.seed);
    for (std::size_t i = before; i < csv.size(); ++i) {
      csv[i].setting = csv[i].setting == "preservation" ? "preservation_unit_lambda/" + layer_id
                                                         : csv[i].setting + "/" + layer_id;
    }
    const std::size_t mid = csv.size();
    append_csv(csv, merged, cfg.seed);
    for (std::size_t i = mid; i < csv.size(); ++i) csv[i].setting = "preservation_merge_lambda/" + layer_id;

    layer_reports.push_back({{"layer_id", layer_id},
                             {"crosstalk", to_json(xt)},
                             {"preservation_unit_lambda", to_json(unit)},
                             {"preservation_merge_lambda", to_json(merged)},
                             {"merge_lambdas", merge_lambdas}});
    unit_reports.push_back(std::move(unit));
  }

  const std::size_t n = cfg.basis_dim;
  const std::size_t r = cfg.adapter.rank;
  const double sigma = default_gaussian_sigma(n);
  const std::uint64_t mc_seed = derive_seed(cfg.seed, "monte_carlo");
  const std::size_t exp_trials = trials.value_or(cfg.analysis.expectation_trials);
  const std::size_t xt_trials = trials.value_or(cfg.analysis.crosstalk_trials);
  const std::size_t pairs = trials.value_or(cfg.analysis.collision_pairs);

  std::vector<Check> checks;
  checks.push_back(projected_check(unit_reports));

  json mc = json::object();
  if (2 * r <= n && r < n) {
    const ModeCrosstalk mx = compare_mode_crosstalk(n, r, sigma, xt_trials, derive_seed(mc_seed, "mode_crosstalk"));
    mc["mode_crosstalk"] = to_json(mx);
    csv.push_back({"mode_crosstalk", cfg.seed, "", "gaussian_mean", mx.gaussian_mean});
    csv.push_back({"mode_crosstalk", cfg.seed, "", "subset_mean", mx.subset_mean});
    csv.push_back({"mode_crosstalk", cfg.seed, "", "subset_max", mx.subset_max});
    checks.push_back({"gaussian vs disjoint-subset crosstalk", mx.gaussian_mean > mx.subset_mean &&
                                                                   mx.subset_max <= kSubsetCrosstalkTolerance,
                      true,
                      "gaussian mean " + fmt(mx.gaussian_mean) + ", subset mean " + fmt(mx.subset_mean) +
                          ", subset max " + fmt(mx.subset_max) + " over " + std::to_string(xt_trials) + " pairs"});
  } else {
    checks.push_back({"gaussian vs disjoint-subset crosstalk", true, false, "needs 2*rank <= basis.dim"});
  }

  const ExpectationOrthogonality eo =
      expectation_orthogonality_test(n, r, sigma, exp_trials, derive_seed(mc_seed, "expectation"));
  mc["expectation_orthogonality"] = to_json(eo);
  csv.push_back({"expectation_orthogonality", cfg.seed, "", "max_abs_mean_entry", eo.max_abs_mean_entry});
  csv.push_back({"expectation_orthogonality", cfg.seed, "", "max_abs_z", eo.max_abs_z});
  checks.push_back({"expectation orthogonality", eo.max_abs_z <= kMaxZ, true,
                    "max |mean|/stderr " + fmt(eo.max_abs_z) + " over " + std::to_string(exp_trials) +
                        " trials, threshold " + fmt(kMaxZ)});

  const CollisionStats cs = collision_stats(n, r);
  const CollisionEstimate ce = collision_monte_carlo(n, r, pairs, derive_seed(mc_seed, "collision"));
  mc["collision"] = {{"n", n},
                     {"k", r},
                     {"expected_overlap", cs.expected_overlap},
                     {"p_disjoint", cs.p_disjoint},
                     {"mc_mean_overlap", ce.mean_overlap},
                     {"mc_overlap_stderr", ce.overlap_stderr},
                     {"mc_p_disjoint", ce.p_disjoint},
                     {"mc_p_disjoint_stderr", ce.p_disjoint_stderr},
                     {"pairs", ce.pairs}};
  csv.push_back({"collision", cfg.seed, "", "expected_overlap", cs.expected_overlap});
  csv.push_back({"collision", cfg.seed, "", "mc_mean_overlap", ce.mean_overlap});
  csv.push_back({"collision", cfg.seed, "", "p_disjoint", cs.p_disjoint});
  csv.push_back({"collision", cfg.seed, "", "mc_p_disjoint", ce.p_disjoint});
  const bool overlap_ok = std::fabs(ce.mean_overlap - cs.expected_overlap) <= kCollisionSigmas * ce.overlap_stderr;
  const bool disjoint_ok = std::fabs(ce.p_disjoint - cs.p_disjoint) <= kCollisionSigmas * ce.p_disjoint_stderr ||
                           (ce.p_disjoint_stderr == 0.0 && ce.p_disjoint == cs.p_disjoint);
  checks.push_back({"collision statistics", overlap_ok && disjoint_ok, true,
                    "overlap " + fmt(ce.mean_overlap) + " vs " + fmt(cs.expected_overlap) + ", P(disjoint) " +
                        fmt(ce.p_disjoint) + " vs " + fmt(cs.p_disjoint) + " over " + std::to_string(pairs) +
                        " pairs"});

  json checks_json = json::array();
  for (const auto& c : checks) {
    checks_json.push_back({{"name", c.name}, {"passed", c.passed}, {"applicable", c.applicable}, {"detail", c.detail}});
  }
  const fs::path dir = out_dir / cfg.analysis.report_dir;
  write_text(dir / "analysis.json",
             json({{"seed", cfg.seed}, {"layers", layer_reports}, {"monte_carlo", mc}, {"checks", checks_json}}).dump(2) +
                 "\n");
  write_text(dir / "analysis.csv", render_csv(csv));
  log << "wrote " << (dir / "analysis.json").string() << " and " << (dir / "analysis.csv").string() << "\n";
  print_checks(checks, log);
  return checks;
}

std::vector<Check> cmd_ablate(const ExperimentConfig& cfg, const fs::path& out_dir, std::size_t threads,
                              std::ostream& log) {
  validate_config(cfg);
  const auto& an = cfg.analysis;
  const BaseLayer base = make_base_layer(an.ablation.d_out, an.ablation.d_in, an.ablation.base_seed);
  ConceptTaskSpec family = task_spec_for(an.ablation.task, an.ablation.d_in, an.ablation.d_out, "");
  const std::size_t rank = cfg.adapter.rank;

  std::vector<Check> checks;
  json report = json::object();
  std::vector<CsvRow> csv;

  if (!an.overlap_grid.empty() && an.overlap_seeds > 0) {
    const auto seeds = seed_list(cfg.seed, "overlap_seed", an.overlap_seeds);
    const auto rows = overlap_ablation(base, family, an.overlap_grid, seeds, rank, threads);
    const auto summary = summarize(rows);
    report["overlap"] = {{"rows", to_json(rows)}, {"summary", to_json(summary)}};
    append_csv(csv, rows);

    std::vector<std::pair<double, double>> by_fraction;
    for (const auto& s : summary) by_fraction.emplace_back(s.overlap_fraction, s.raw_rel_err_median);
    std::sort(by_fraction.begin(), by_fraction.end(), [](auto a, auto b) { return a.first > b.first; });
    bool decreasing = by_fraction.size() >= 2;
    std::string trend;
    for (std::size_t i = 0; i < by_fraction.size(); ++i) {
      if (i > 0) {
        decreasing = decreasing && by_fraction[i - 1].second > by_fraction[i].second;
        trend += ", ";
      }
      trend += "f=" + fmt(by_fraction[i].first) + ": " + fmt(by_fraction[i].second);
    }
    checks.push_back({"overlap trend (median raw_rel_err falls with overlap)", decreasing, by_fraction.size() >= 2,
                      trend + " over " + std::to_string(seeds.size()) + " seeds"});
    for (const auto& s : summary) {
      if (s.overlap_fraction == 0.0) {
        const bool ok = s.projected_rel_err_max && *s.projected_rel_err_max < kProjectedTolerance;
        checks.push_back({"overlap 0.0 projected preservation", ok, true,
                          s.projected_rel_err_max ? "max projected_rel_err " + fmt(*s.projected_rel_err_max)
                                                  : std::string("projected error undefined")});
      }
    }
  }

  if (!an.concept_counts.empty() && !an.sweep_modes.empty() && an.sweep_seeds > 0) {
    const auto seeds = seed_list(cfg.seed, "sweep_seed", an.sweep_seeds);
    SweepOptions opt;
    opt.rank = rank;
    opt.lambda = cfg.merge.default_lambda;
    opt.free_train = an.sweep_train;
    opt.threads = threads;
    const auto rows = concept_sweep(base, family, an.concept_counts, an.sweep_modes, seeds, opt);
    const auto summary = summarize(rows);
    report["concept_count"] = {{"rows", to_json(rows)}, {"summary", to_json(summary)}};
    append_csv(csv, rows);

    const auto max_m = *std::max_element(an.concept_counts.begin(), an.concept_counts.end());
    const auto min_m = *std::min_element(an.concept_counts.begin(), an.concept_counts.end());
    std::optional<double> subset_at_max;
    std::optional<double> free_at_min;
    for (const auto& s : summary) {
      if (s.mode == "shared_subset" && s.num_concepts == max_m) subset_at_max = s.raw_rel_err_mean;
      if (s.mode == "learned_free" && s.num_concepts == min_m) free_at_min = s.raw_rel_err_mean;
    }
    if (subset_at_max && free_at_min) {
      checks.push_back({"concept count (shared_subset at m=" + std::to_string(max_m) + " beats learned_free at m=" +
                            std::to_string(min_m) + ")",
                        *subset_at_max < *free_at_min, true,
                        "mean raw_rel_err " + fmt(*subset_at_max) + " vs " + fmt(*free_at_min)});
    }
  }

  json checks_json = json::array();
  for (const auto& c : checks) {
    checks_json.push_back({{"name", c.name}, {"passed", c.passed}, {"applicable", c.applicable}, {"detail", c.detail}});
  }
  report["checks"] = checks_json;
  report["seed"] = cfg.seed;
  const fs::path dir = out_dir / cfg.analysis.report_dir;
  write_text(dir / "ablation.json", report.dump(2) + "\n");
  write_text(dir / "ablation.csv", render_csv(csv));
  log << "wrote " << (dir / "ablation.json").string() << " and " << (dir / "ablation.csv").string() << "\n";
  print_checks(checks, log);
  return checks;
}

void print_checks(const std::vector<Check>& checks, std::ostream& os) {
  for (const auto& c : checks) {
    os << (!c.applicable ? "SKIP " : c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
}

}  // namespace ortha
