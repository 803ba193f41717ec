#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ortha/error.h"
#include "ortha/merge.h"
#include "ortha/rng.h"

using namespace ortha;

namespace {

Adapter filled(const BaseLayer& base, const std::string& id, BasisMode mode, std::uint64_t seed) {
  Adapter ad = new_adapter(base, 2, std::move(mode), seed, id);
  SeededRng rng(seed);
  ad.a = rng_gaussian(rng, base.d_out, 2, 1.0);
  return ad;
}

// Plain triple loop: w0 + Σ λ·A·Bᵀ.
Matrix naive_merge(const Matrix& w0, const std::vector<std::pair<const Adapter*, double>>& parts) {
  Matrix w = w0;
  for (const auto& [ad, lambda] : parts)
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < ad->rank; ++k) s += ad->a(i, k) * ad->b(j, k);
        w(i, j) += lambda * s;
      }
  return w;
}

}  // namespace

TEST_CASE("merge is w0 plus the scaled deltas") {
  const BaseLayer base = make_base_layer(4, 7, 1);
  const Adapter a = filled(base, "alpha", sample_mode(ModeKind::shared_subset, 7, 2, 3, 1), 1);
  const Adapter b = filled(base, "beta", sample_mode(ModeKind::shared_subset, 7, 2, 3, 2), 2);
  MergeSpec spec;
  spec.default_lambda = 0.6;
  spec.add(a).add(b, 1.5);
  const MergedModel m = fed_avg_merge(base, spec);
  CHECK(max_abs(m.w_merged - naive_merge(base.w0, {{&a, 0.6}, {&b, 1.5}})) < 1e-14);
  REQUIRE(m.provenance.size() == 2);
  CHECK(m.provenance[0].concept_id == "alpha");
  CHECK(m.provenance[0].lambda == 0.6);
  CHECK(m.provenance[1].lambda == 1.5);
  CHECK(m.provenance[1].mode == "shared_subset");
  CHECK(m.warnings.empty());
}

TEST_CASE("merge result does not depend on entry order") {
  const BaseLayer base = make_base_layer(5, 9, 2);
  std::vector<Adapter> ads;
  for (int i = 0; i < 4; ++i)
    ads.push_back(filled(base, "c" + std::to_string(i), sample_mode(ModeKind::gaussian, 9, 2, 0, 10 + i), 10 + i));
  MergeSpec fwd, rev;
  for (int i = 0; i < 4; ++i) fwd.add(ads[i]);
  for (int i = 3; i >= 0; --i) rev.add(ads[i]);
  const MergedModel x = fed_avg_merge(base, fwd);
  const MergedModel y = fed_avg_merge(base, rev);
  CHECK(x.w_merged == y.w_merged);  // bitwise
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.provenance[i].concept_id == y.provenance[i].concept_id);
}

TEST_CASE("no adapters leaves the base weights") {
  const BaseLayer base = make_base_layer(3, 5, 4);
  CHECK(fed_avg_merge(base, MergeSpec{}).w_merged == base.w0);
}

TEST_CASE("merge errors") {
  const BaseLayer base = make_base_layer(4, 7, 1);
  const Adapter a = filled(base, "same", LearnedFree{1}, 1);
  const Adapter b = filled(base, "same", LearnedFree{2}, 2);
  CHECK_THROWS_AS(fed_avg_merge(base, MergeSpec{}.add(a).add(b)), ValidationError);

  const BaseLayer other = make_base_layer(4, 8, 1);
  const Adapter wide = filled(other, "wide", LearnedFree{1}, 1);
  CHECK_THROWS_AS(fed_avg_merge(base, MergeSpec{}.add(wide)), ShapeError);

  CHECK_THROWS_AS(fed_avg_merge(base, MergeSpec{}.add(a, std::numeric_limits<double>::infinity())), ValidationError);
  MergeSpec nan_default;
  nan_default.default_lambda = std::nan("");
  CHECK_THROWS_AS(fed_avg_merge(base, nan_default), ValidationError);
}

TEST_CASE("mixed modes and bases produce warnings, not errors") {
  const BaseLayer base = make_base_layer(4, 7, 1);
  const Adapter s1 = filled(base, "s1", sample_mode(ModeKind::shared_subset, 7, 2, 3, 1), 1);
  const Adapter s2 = filled(base, "s2", sample_mode(ModeKind::shared_subset, 7, 2, 4, 2), 2);
  const Adapter g = filled(base, "g", sample_mode(ModeKind::gaussian, 7, 2, 0, 3), 3);
  const MergedModel m = fed_avg_merge(base, MergeSpec{}.add(s1).add(s2).add(g));
  CHECK(m.warnings.size() == 2);
}

TEST_CASE("forward checks shapes") {
  const Matrix w{{1.0, 2.0}, {3.0, 4.0}};
  const Matrix x{{1.0}, {-1.0}};
  CHECK(forward(w, x) == Matrix{{-1.0}, {-1.0}});
  CHECK_THROWS_AS(forward(w, Matrix(3, 1)), ShapeError);
}
