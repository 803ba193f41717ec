#include "ortha/merge.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "ortha/adapter_io.h"
#include "ortha/error.h"

namespace ortha {

MergedModel fed_avg_merge(const BaseLayer& base, const MergeSpec& spec) {
  if (!std::isfinite(spec.default_lambda)) throw ValidationError("merge: default lambda must be finite");
  std::vector<const MergeEntry*> order;
  order.reserve(spec.entries.size());
  for (const auto& e : spec.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const MergeEntry* x, const MergeEntry* y) {
    return x->adapter.get().concept_id < y->adapter.get().concept_id;
  });

  MergedModel out;
  out.w_merged = base.w0;
  std::set<std::string> modes;
  std::set<std::uint64_t> basis_seeds;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Adapter& ad = order[i]->adapter.get();
    if (i > 0 && order[i - 1]->adapter.get().concept_id == ad.concept_id) {
      throw ValidationError("merge: duplicate concept_id '" + ad.concept_id + "'");
    }
    if (ad.d_out != base.d_out || ad.d_in != base.d_in) {
      throw ShapeError("merge: adapter '" + ad.concept_id + "' is " + std::to_string(ad.d_out) + "x" +
                       std::to_string(ad.d_in) + " but base layer is " + base.w0.shape_string());
    }
    const double lambda = order[i]->lambda.value_or(spec.default_lambda);
    if (!std::isfinite(lambda)) throw ValidationError("merge: lambda for '" + ad.concept_id + "' is not finite");
    axpy(lambda, delta(ad), out.w_merged);
    out.provenance.push_back({ad.concept_id, mode_name(ad.mode), lambda, adapter_checksum(ad)});
    modes.insert(mode_name(ad.mode));
    if (const auto* s = std::get_if<SharedSubset>(&ad.mode)) basis_seeds.insert(s->subset.basis_seed);
  }
  if (modes.size() > 1) {
    std::string list;
    for (const auto& m : modes) list += (list.empty() ? "" : ", ") + m;
    out.warnings.push_back("merging adapters of different modes (" + list + ")");
  }
  if (basis_seeds.size() > 1) {
    out.warnings.push_back("shared-subset adapters reference " + std::to_string(basis_seeds.size()) +
                           " different shared bases; their residuals are not mutually orthogonal");
  }
  return out;
}

Matrix forward(const Matrix& w, const Matrix& x) {
  if (w.cols() != x.rows()) {
    throw ShapeError("forward: weights " + w.shape_string() + " cannot consume inputs " + x.shape_string());
  }
  return mat_mul(w, x);
}

}  // namespace ortha
