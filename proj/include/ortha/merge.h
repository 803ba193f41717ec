#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ortha/adapter.h"

namespace ortha {

inline constexpr double kDefaultLambda = 0.6;

struct MergeEntry {
  std::reference_wrapper<const Adapter> adapter;
  std::optional<double> lambda;  // unset: MergeSpec::default_lambda
};

struct MergeSpec {
  std::vector<MergeEntry> entries;
  double default_lambda = kDefaultLambda;

  MergeSpec& add(const Adapter& ad, std::optional<double> lambda = std::nullopt) {
    entries.push_back({std::cref(ad), lambda});
    return *this;
  }
};

struct ProvenanceEntry {
  std::string concept_id;
  std::string mode;
  double lambda = 0.0;
  std::string checksum;
};

struct MergedModel {
  Matrix w_merged;
  std::vector<ProvenanceEntry> provenance;  // sorted by concept_id
  std::vector<std::string> warnings;
};

// w0 + Σ λ_i·A_i·B_iᵀ, summed in concept_id order so the result does not
// depend on entry order. Duplicate concept ids and shape mismatches throw.
// Mixed modes or differing shared-basis seeds only add warnings.
MergedModel fed_avg_merge(const BaseLayer& base, const MergeSpec& spec);

// Layer output w·x.
Matrix forward(const Matrix& w, const Matrix& x);

}  // namespace ortha
