#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ortha/analysis.h"
#include "ortha/error.h"
#include "ortha/merge.h"
#include "ortha/rng.h"

using namespace ortha;

namespace {

ConceptTaskSpec spec(const std::string& id, std::size_t d_out, std::size_t d_in, std::uint64_t seed) {
  ConceptTaskSpec s;
  s.concept_id = id;
  s.d_out = d_out;
  s.d_in = d_in;
  s.n_samples = 40;
  s.target_perturbation_scale = 0.3;
  s.noise_sigma = 0.01;
  s.seed = seed;
  return s;
}

struct Fixture {
  BaseLayer base;
  std::vector<ConceptTask> tasks;
  std::vector<Adapter> adapters;
};

// Three concepts on disjoint subsets of one basis, fitted in closed form.
Fixture disjoint_fixture(std::size_t d_in = 24, std::size_t rank = 4) {
  Fixture f{make_base_layer(6, d_in, 1), {}, {}};
  const auto subs = disjoint_subsets(d_in, rank, 3, 77, 5);
  for (std::size_t c = 0; c < 3; ++c) {
    f.tasks.push_back(make_task(spec("c" + std::to_string(c), 6, d_in, 10 + c), f.base));
    f.adapters.push_back(solve_closed_form(f.base, f.tasks.back(), rank, SharedSubset{subs[c]}, c));
  }
  return f;
}

}  // namespace

TEST_CASE("disjoint subsets: zero weight crosstalk and projected error") {
  const Fixture f = disjoint_fixture();
  const CrosstalkReport x = crosstalk_report(f.adapters, f.tasks);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) {
        CHECK(x.weight_xtalk(i, j) == doctest::Approx(2.0));  // √rank
      } else {
        CHECK(x.weight_xtalk(i, j) < 1e-12);
        // Data crosstalk is not zero: isotropic inputs have energy everywhere.
        CHECK(x.data_xtalk(i, j) > 0.0);
      }
    }
  const std::vector<double> ones(3, 1.0);
  const PreservationReport p = preservation_report(f.base, f.adapters, ones, f.tasks);
  for (const auto& c : p.concepts) {
    REQUIRE(c.projected_rel_err.has_value());
    CHECK(*c.projected_rel_err < 1e-12);
    CHECK(c.raw_rel_err > 1e-3);
  }
}

TEST_CASE("raw relative error matches a direct computation") {
  const Fixture f = disjoint_fixture();
  const std::vector<double> lambdas{0.5, 1.0, 2.0};
  const PreservationReport p = preservation_report(f.base, f.adapters, lambdas, f.tasks);
  MergeSpec ms;
  for (std::size_t c = 0; c < 3; ++c) ms.add(f.adapters[c], lambdas[c]);
  const Matrix merged = fed_avg_merge(f.base, ms).w_merged;
  for (std::size_t c = 0; c < 3; ++c) {
    const Matrix single = f.base.w0 + delta(f.adapters[c]);
    const Matrix o = mat_mul(single, f.tasks[c].x());
    const Matrix o_hat = mat_mul(merged, f.tasks[c].x());
    CHECK(p.concepts[c].raw_rel_err == doctest::Approx(frobenius_norm(o_hat - o) / frobenius_norm(o)).epsilon(1e-12));
    CHECK(p.concepts[c].single_loss == doctest::Approx(task_loss(single, f.tasks[c])));
    CHECK(p.concepts[c].merged_loss == doctest::Approx(task_loss(merged, f.tasks[c])));
  }
}

TEST_CASE("projected error is not applicable outside shared-subset mode") {
  const BaseLayer base = make_base_layer(5, 12, 2);
  std::vector<ConceptTask> tasks;
  std::vector<Adapter> ads;
  for (std::size_t c = 0; c < 2; ++c) {
    tasks.push_back(make_task(spec("g" + std::to_string(c), 5, 12, 30 + c), base));
    ads.push_back(solve_closed_form(base, tasks.back(), 3, sample_mode(ModeKind::gaussian, 12, 3, 0, c), c));
  }
  const std::vector<double> ones(2, 1.0);
  const PreservationReport p = preservation_report(base, ads, ones, tasks);
  for (const auto& c : p.concepts) {
    CHECK_FALSE(c.projected_rel_err.has_value());
    CHECK_FALSE(c.projected_note.empty());
  }
}

TEST_CASE("a lone adapter is preserved exactly") {
  const Fixture f = disjoint_fixture();
  const std::vector<double> one{1.0};
  const PreservationReport p =
      preservation_report(f.base, std::span(f.adapters).first(1), one, std::span(f.tasks).first(1));
  CHECK(p.concepts[0].raw_rel_err == 0.0);
}

TEST_CASE("overlap ablation: full overlap hurts, none is projected-exact") {
  const BaseLayer base = make_base_layer(6, 40, 3);
  ConceptTaskSpec s = spec("pair", 6, 40, 1);
  const std::vector<double> grid{1.0, 0.0};
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto rows = overlap_ablation(base, s, grid, seeds, 5, 2);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].shared_columns == 5);
  CHECK(rows[2].shared_columns == 0);
  for (const auto& r : rows) CHECK(r.num_concepts == 2);
  CHECK(rows[2].projected_rel_err_max.has_value());
  CHECK(*rows[2].projected_rel_err_max < 1e-12);
  // Thread count does not change results.
  const auto serial = overlap_ablation(base, s, grid, seeds, 5, 1);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].raw_rel_err_mean == serial[i].raw_rel_err_mean);
}

TEST_CASE("concept sweep rows, summaries and limits") {
  const BaseLayer base = make_base_layer(6, 24, 5);
  const ConceptTaskSpec s = spec("fam", 6, 24, 3);
  const std::vector<std::size_t> counts{2, 3};
  const std::vector<ModeKind> modes{ModeKind::shared_subset, ModeKind::gaussian};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  SweepOptions opt;
  opt.rank = 4;
  opt.lambda = 1.0;
  const auto rows = concept_sweep(base, s, counts, modes, seeds, opt);
  CHECK(rows.size() == 2 * 2 * 3);
  const auto sum = summarize(rows);
  REQUIRE(sum.size() == 4);
  for (const auto& x : sum) CHECK(x.seeds == 3);
  for (const auto& r : rows) {
    if (r.mode == "shared_subset") {
      REQUIRE(r.projected_rel_err_max.has_value());
      CHECK(*r.projected_rel_err_max < 1e-12);
    }
  }
  const std::vector<std::size_t> too_many{7};  // 7·4 > 24
  CHECK_THROWS_AS(concept_sweep(base, s, too_many, modes, seeds, opt), ValidationError);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("expectation test: zero-mean products look like noise") {
  const ExpectationOrthogonality e = expectation_orthogonality_test(30, 3, 1.0 / std::sqrt(30.0), 2000, 4);
  CHECK(e.trials == 2000);
  CHECK(e.max_abs_z < 5.0);
  CHECK(e.max_abs_mean_entry < 5.0 * e.stderr_of_max);
  CHECK_THROWS_AS(expectation_orthogonality_test(30, 3, 0.1, 999, 4), ValidationError);
}

TEST_CASE("mode crosstalk: gaussian pairs leak, disjoint subsets do not") {
  const ModeCrosstalk m = compare_mode_crosstalk(64, 8, 1.0 / 8.0, 100, 9);
  CHECK(m.subset_max < 1e-12);
  CHECK(m.gaussian_mean > 0.5);
}

TEST_CASE("collision Monte Carlo agrees with the exact values") {
  // Exact for n = 6, k = 2: E[overlap] = 4/6, P(disjoint) = C(4,2)/C(6,2) = 6/15.
  const CollisionEstimate c = collision_monte_carlo(6, 2, 20000, 3);
  CHECK(std::fabs(c.mean_overlap - 4.0 / 6.0) < 4 * c.overlap_stderr);
  CHECK(std::fabs(c.p_disjoint - 0.4) < 4 * c.p_disjoint_stderr);
}

TEST_CASE("CSV rendering") {
  std::vector<CsvRow> rows{{"a/b", 3, "c0", "raw_rel_err", 0.1}};
  const std::string csv = render_csv(rows);
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == kCsvHeader);
  CHECK(line == "a/b,3,c0,raw_rel_err,0.10000000000000001");

  const Fixture f = disjoint_fixture();
  std::vector<CsvRow> out;
  append_csv(out, crosstalk_report(f.adapters, f.tasks), 1);
  CHECK_FALSE(out.empty());
  for (const auto& r : out) CHECK(std::isfinite(r.value));
}
