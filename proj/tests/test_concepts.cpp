#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ortha/concepts.h"
#include "ortha/error.h"
#include "ortha/linalg.h"

using namespace ortha;

namespace {

ConceptTaskSpec spec(std::size_t d_out, std::size_t d_in, std::size_t n, std::uint64_t seed) {
  ConceptTaskSpec s;
  s.concept_id = "c";
  s.d_in = d_in;
  s.d_out = d_out;
  s.n_samples = n;
  s.target_perturbation_scale = 0.3;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("noise-free task is exactly linear in its target map") {
  const BaseLayer base = make_base_layer(4, 6, 1);
  const ConceptTask t = make_task(spec(4, 6, 30, 2), base);
  CHECK(t.x().rows() == 6);
  CHECK(t.x().cols() == 30);
  CHECK(t.y().rows() == 4);
  CHECK(t.n_samples() == 30);
  // Loss of the generating map is zero; loss of w0 is the mean squared perturbation output.
  CHECK(task_loss(t.oracle_w_star(), t) < 1e-25);
  const Matrix diff = mat_mul(t.oracle_w_star() - base.w0, t.x());
  CHECK(task_loss(base.w0, t) == doctest::Approx(frobenius_norm(diff) * frobenius_norm(diff) / 30.0));
}

TEST_CASE("tasks are deterministic in their seed") {
  const BaseLayer base = make_base_layer(4, 6, 1);
  const ConceptTask a = make_task(spec(4, 6, 10, 5), base);
  const ConceptTask b = make_task(spec(4, 6, 10, 5), base);
  const ConceptTask c = make_task(spec(4, 6, 10, 6), base);
  CHECK(a.x() == b.x());
  CHECK(a.y() == b.y());
  CHECK_FALSE(a.x() == c.x());
}

TEST_CASE("noise has the requested variance") {
  ConceptTaskSpec s = spec(20, 10, 500, 3);
  s.noise_sigma = 0.5;
  const BaseLayer base = make_base_layer(20, 10, 1);
  const ConceptTask t = make_task(s, base);
  CHECK(task_loss(t.oracle_w_star(), t) / 20.0 == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("low-rank targets have the requested rank") {
  ConceptTaskSpec s = spec(12, 15, 10, 4);
  s.target_rank = 3;
  const BaseLayer base = make_base_layer(12, 15, 1);
  const ConceptTask t = make_task(s, base);
  // Rank 3: every row is a combination of the first three (generically independent) rows.
  const Matrix p = t.oracle_w_star() - base.w0;
  Matrix head(3, 15);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 15; ++j) head(i, j) = p(i, j);
  const Matrix coeffs = cholesky_solve(mat_mult(head, head), mat_mult(head, p));  // 3×12
  CHECK(max_abs(mat_tmul(coeffs, head) - p) < 1e-10 * max_abs(p));
  s.target_rank = 16;
  CHECK_THROWS_AS(make_task(s, base), ValidationError);
}

TEST_CASE("subspace-concentrated inputs put most energy in a shared plane") {
  ConceptTaskSpec s = spec(4, 64, 400, 7);
  s.input_dist = default_subspace(64, 99);
  const SubspaceConcentrated sub = std::get<SubspaceConcentrated>(s.input_dist);
  CHECK(sub.subspace_dim == 8);
  CHECK(sub.off_plane_scale == doctest::Approx(0.1));
  const Matrix x = sample_inputs(s);
  // Per-sample energy: 8 in-plane directions at variance 1, 56 off-plane at 0.01.
  const double total = frobenius_norm(x);
  CHECK(total * total / 400.0 == doctest::Approx(8.0 + 56.0 * 0.01).epsilon(0.03));

  // Concepts with the same subspace seed share their dominant directions;
  // a different seed gives a nearly unrelated plane.
  auto cov = [](const Matrix& m) { return mat_mult(m, m); };
  auto cosine = [](const Matrix& a, const Matrix& b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a.values()[i] * b.values()[i];
    return dot / (frobenius_norm(a) * frobenius_norm(b));
  };
  ConceptTaskSpec same = s;
  same.seed = 8;
  ConceptTaskSpec other = s;
  other.seed = 8;
  other.input_dist = default_subspace(64, 100);
  const Matrix c0 = cov(x);
  CHECK(cosine(c0, cov(sample_inputs(same))) > 0.8);
  CHECK(cosine(c0, cov(sample_inputs(other))) < 0.4);
}

TEST_CASE("invalid specs are rejected") {
  const BaseLayer base = make_base_layer(4, 6, 1);
  ConceptTaskSpec s = spec(4, 6, 0, 1);
  CHECK_THROWS_AS(make_task(s, base), ValidationError);
  s = spec(4, 7, 10, 1);
  CHECK_THROWS_AS(make_task(s, base), ShapeError);
  s = spec(4, 6, 10, 1);
  s.noise_sigma = -1.0;
  CHECK_THROWS_AS(make_task(s, base), ValidationError);
  s = spec(4, 6, 10, 1);
  s.input_dist = SubspaceConcentrated{7, 1.0, 0.1, 0};
  CHECK_THROWS_AS(make_task(s, base), ValidationError);
}

TEST_CASE("CSV export round trips at full precision") {
  const BaseLayer base = make_base_layer(2, 3, 1);
  const ConceptTask t = make_task(spec(2, 3, 4, 9), base);
  const auto dir = std::filesystem::temp_directory_path() / "ortha_test_concepts";
  std::filesystem::create_directories(dir);
  export_task_csv(t, dir / "x.csv", dir / "y.csv");
  std::ifstream in(dir / "x.csv");
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      CHECK(std::stod(cell) == t.x()(row, col));
      ++col;
    }
    CHECK(col == 4);
    ++row;
  }
  CHECK(row == 3);
}
