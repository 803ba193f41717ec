#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ortha/adapter.h"
#include "ortha/concepts.h"
#include "ortha/trainer.h"

namespace ortha {

inline constexpr int kConfigSchemaVersion = 1;

struct LayerConfig {
  std::string layer_id;
  std::size_t d_out = 0;
  std::size_t d_in = 0;
  std::uint64_t base_seed = 0;
};

// One concept as written in the config. The layer fixes d_in/d_out, so a
// ConceptTaskSpec only exists once a layer is chosen (see task_spec_for).
struct ConceptConfig {
  std::string concept_id;
  std::size_t n_samples = 200;
  std::string input = "isotropic";  // "isotropic" or "subspace"
  double input_scale = 1.0;
  std::size_t subspace_dim = 0;  // 0: max(1, d_in/8)
  double off_plane_scale = 0.1;
  std::uint64_t subspace_seed = 0;
  double target_perturbation_scale = 0.05;
  std::size_t target_rank = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

enum class Allocation { random, disjoint };
enum class TrainMethod { gd, closed_form };

struct AdapterConfig {
  std::size_t rank = 20;
  ModeKind mode = ModeKind::shared_subset;
  // random: every concept samples its own subset (no coordination);
  // disjoint: subsets are dealt out of one permutation in concept order.
  Allocation allocation = Allocation::random;
  std::map<std::string, std::uint64_t> seeds;  // per concept; missing ones derive from the root seed
};

struct TrainSection {
  TrainMethod method = TrainMethod::gd;
  TrainConfig gd;
};

struct MergeConfig {
  double default_lambda = 0.6;
  std::map<std::string, double> overrides;
};

struct AblationTaskConfig {
  std::size_t d_out = 64;
  std::size_t d_in = 320;
  std::uint64_t base_seed = 0;
  ConceptConfig task;
};

struct AnalysisConfig {
  std::vector<double> overlap_grid = {1.0, 0.5, 0.0};
  std::size_t overlap_seeds = 10;
  std::vector<std::size_t> concept_counts = {2, 4, 6, 8, 10};
  std::vector<ModeKind> sweep_modes = {ModeKind::shared_subset, ModeKind::learned_free};
  std::size_t sweep_seeds = 10;
  TrainConfig sweep_train{.learning_rate = {}, .steps = 1500, .log_every = 500, .ridge_eps = {}};
  AblationTaskConfig ablation;
  std::size_t expectation_trials = 10000;
  std::size_t crosstalk_trials = 1000;
  std::size_t collision_pairs = 100000;
  std::string report_dir = "reports";
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::size_t basis_dim = 320;
  std::uint64_t basis_seed = 0;
  std::vector<LayerConfig> layers;
  std::vector<ConceptConfig> concepts;
  AdapterConfig adapter;
  TrainSection train;
  MergeConfig merge;
  AnalysisConfig analysis;
  std::string output_dir = "out";
};

// Parses and validates. Unknown keys are rejected so typos cannot silently
// fall back to defaults. Any schema problem is a ValidationError.
// `seed_override` replaces the root seed before per-concept defaults derive from it.
ExperimentConfig parse_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

// Checks the invariants parse_config enforces; useful after programmatic edits.
void validate_config(const ExperimentConfig& cfg);

// Fully resolved config, defaults filled in.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

const LayerConfig& find_layer(const ExperimentConfig& cfg, const std::string& layer_id);
const ConceptConfig& find_concept(const ExperimentConfig& cfg, const std::string& concept_id);

ConceptTaskSpec task_spec_for(const ConceptConfig& concept_cfg, std::size_t d_in, std::size_t d_out,
                              const std::string& layer_id);
BaseLayer base_for(const LayerConfig& layer);

// Root of every random choice made for one concept's adapters.
std::uint64_t adapter_seed_for(const ExperimentConfig& cfg, const std::string& concept_id);

// Mode payload for (concept, layer), honouring the allocation policy.
BasisMode mode_for(const ExperimentConfig& cfg, const std::string& concept_id, const LayerConfig& layer);

double lambda_for(const ExperimentConfig& cfg, const std::string& concept_id);

}  // namespace ortha
