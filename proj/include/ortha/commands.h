#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ortha/config.h"

namespace ortha {

// Output layout under the output directory:
//   basis.json
//   adapters/<concept>__<layer>.oadp
//   losses/<concept>__<layer>.csv
//   merged_<layer>.oadp, merged_provenance.json
//   <report_dir>/analysis.{json,csv}, <report_dir>/ablation.{json,csv}
std::filesystem::path adapter_path(const std::filesystem::path& out_dir, const std::string& concept_id,
                                   const std::string& layer_id);
std::filesystem::path loss_curve_path(const std::filesystem::path& out_dir, const std::string& concept_id,
                                      const std::string& layer_id);
std::filesystem::path merged_path(const std::filesystem::path& out_dir, const std::string& layer_id);

struct Check {
  std::string name;
  bool passed = false;
  bool applicable = true;
  std::string detail;
};

// Writes basis.json ({"dim","seed"}) and reports max |QᵀQ − I|.
double cmd_gen_basis(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

// Trains every concept on every layer, or only `concept_id`. Returns the
// adapter files written, in (concept, layer) config order.
std::vector<std::filesystem::path> cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                             const std::optional<std::string>& concept_id, std::size_t threads,
                                             std::ostream& log);

// Merges the given adapter files per layer. With no paths every configured
// layer is written as its base weights. `lambda` replaces both the default
// and the per-concept overrides.
std::vector<std::filesystem::path> cmd_merge(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                             const std::vector<std::filesystem::path>& adapter_paths,
                                             std::optional<double> lambda, std::ostream& log);

// Crosstalk and preservation of the trained adapters plus the basis Monte
// Carlo studies. `trials` overrides every Monte Carlo trial count.
std::vector<Check> cmd_analyze(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                               std::optional<std::size_t> trials, std::optional<double> lambda, std::size_t threads,
                               std::ostream& log);

// Overlap ablation and concept-count sweep.
std::vector<Check> cmd_ablate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::size_t threads,
                              std::ostream& log);

void print_checks(const std::vector<Check>& checks, std::ostream& os);

}  // namespace ortha
