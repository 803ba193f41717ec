#include "ortha/config.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ortha/basis.h"
#include "ortha/error.h"
#include "ortha/rng.h"

namespace ortha {

namespace {

using nlohmann::json;

// Reads fields of one JSON object and remembers which keys were used, so
// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& raw(const char* key) {
    static const json null_value;
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : null_value;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = read<T>(j_.at(key));
    } catch (const json::exception&) {
      throw ValidationError("config: '" + where(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ValidationError("config: unknown key '" + where(key.c_str()) + "'");
    }
  }

 private:
  template <typename T>
  static T read(const json& v) {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      // Programmatic JSON stores small literals as signed; accept those when non-negative.
      const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!ok) throw json::type_error::create(302, "expected unsigned integer", &v);
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw json::type_error::create(302, "expected integer", &v);
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw json::type_error::create(302, "expected number", &v);
    }
    return v.get<T>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ConceptConfig parse_concept(const json& j, const std::string& path, std::uint64_t root, std::size_t index,
                            std::uint64_t default_subspace_seed) {
  Section s(j, path);
  ConceptConfig c;
  c.seed = derive_seed(root, "concept", index);
  c.subspace_seed = default_subspace_seed;
  s.get("concept_id", c.concept_id);
  s.get("n_samples", c.n_samples);
  s.get("target_perturbation_scale", c.target_perturbation_scale);
  s.get("target_rank", c.target_rank);
  s.get("noise_sigma", c.noise_sigma);
  s.get("seed", c.seed);
  if (s.has("input")) {
    Section in(s.raw("input"), s.where("input"));
    in.get("kind", c.input);
    in.get("scale", c.input_scale);
    in.get("subspace_dim", c.subspace_dim);
    in.get("off_plane_scale", c.off_plane_scale);
    in.get("subspace_seed", c.subspace_seed);
    in.finish();
  } else {
    s.raw("input");
  }
  s.finish();
  return c;
}

TrainConfig parse_train_config(Section& s) {
  TrainConfig t;
  s.get_optional("learning_rate", t.learning_rate);
  s.get("steps", t.steps);
  s.get("log_every", t.log_every);
  s.get_optional("ridge_eps", t.ridge_eps);
  return t;
}

void check_concept(const ConceptConfig& c, const std::string& where) {
  if (c.input != "isotropic" && c.input != "subspace") {
    throw ValidationError("config: " + where + ".input.kind must be 'isotropic' or 'subspace', got '" + c.input + "'");
  }
  if (c.n_samples == 0) throw ValidationError("config: " + where + ".n_samples must be positive");
  if (!(c.input_scale > 0.0)) throw ValidationError("config: " + where + ".input.scale must be > 0");
  if (!(c.off_plane_scale >= 0.0)) throw ValidationError("config: " + where + ".input.off_plane_scale must be >= 0");
  if (!(c.target_perturbation_scale >= 0.0)) {
    throw ValidationError("config: " + where + ".target_perturbation_scale must be >= 0");
  }
  if (!(c.noise_sigma >= 0.0)) throw ValidationError("config: " + where + ".noise_sigma must be >= 0");
}

void check_train(const TrainConfig& t, const std::string& where) {
  if (t.steps == 0) throw ValidationError("config: " + where + ".steps must be positive");
  if (t.log_every == 0) throw ValidationError("config: " + where + ".log_every must be positive");
  if (t.learning_rate && !(*t.learning_rate > 0.0)) {
    throw ValidationError("config: " + where + ".learning_rate must be > 0");
  }
  if (t.ridge_eps && !(*t.ridge_eps >= 0.0)) throw ValidationError("config: " + where + ".ridge_eps must be >= 0");
}

json concept_json(const ConceptConfig& c) {
  return {{"concept_id", c.concept_id},
          {"n_samples", c.n_samples},
          {"input",
           {{"kind", c.input},
            {"scale", c.input_scale},
            {"subspace_dim", c.subspace_dim},
            {"off_plane_scale", c.off_plane_scale},
            {"subspace_seed", c.subspace_seed}}},
          {"target_perturbation_scale", c.target_perturbation_scale},
          {"target_rank", c.target_rank},
          {"noise_sigma", c.noise_sigma},
          {"seed", c.seed}};
}

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate ? json(*t.learning_rate) : json()},
          {"steps", t.steps},
          {"log_every", t.log_every},
          {"ridge_eps", t.ridge_eps ? json(*t.ridge_eps) : json()}};
}

}  // namespace

ExperimentConfig parse_config(const json& j, std::optional<std::uint64_t> seed_override) {
  Section top(j, "");
  ExperimentConfig cfg;
  top.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != kConfigSchemaVersion) {
    throw ValidationError("config: schema_version " + std::to_string(cfg.schema_version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
  }
  top.get("seed", cfg.seed);
  if (seed_override) cfg.seed = *seed_override;
  const std::uint64_t root = cfg.seed;
  cfg.basis_seed = derive_seed(root, "shared_basis");
  top.get("output_dir", cfg.output_dir);

  if (top.has("basis")) {
    Section b(top.raw("basis"), "basis");
    b.get("dim", cfg.basis_dim);
    b.get("seed", cfg.basis_seed);
    b.finish();
  } else {
    top.raw("basis");
  }

  if (top.has("layers")) {
    const json& arr = top.raw("layers");
    if (!arr.is_array()) throw ValidationError("config: 'layers' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section l(arr[i], "layers[" + std::to_string(i) + "]");
      LayerConfig layer{"layer" + std::to_string(i), 64, cfg.basis_dim, derive_seed(root, "base_layer", i)};
      l.get("layer_id", layer.layer_id);
      l.get("d_out", layer.d_out);
      l.get("d_in", layer.d_in);
      l.get("base_seed", layer.base_seed);
      l.finish();
      cfg.layers.push_back(layer);
    }
  } else {
    top.raw("layers");
    cfg.layers.push_back({"layer0", 64, cfg.basis_dim, derive_seed(root, "base_layer", 0)});
  }

  const std::uint64_t subspace_seed = derive_seed(root, "input_subspace");
  if (top.has("concepts")) {
    const json& arr = top.raw("concepts");
    if (!arr.is_array()) throw ValidationError("config: 'concepts' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      cfg.concepts.push_back(parse_concept(arr[i], "concepts[" + std::to_string(i) + "]", root, i, subspace_seed));
    }
  } else {
    top.raw("concepts");
  }

  if (top.has("adapter")) {
    Section a(top.raw("adapter"), "adapter");
    a.get("rank", cfg.adapter.rank);
    std::string mode = mode_kind_name(cfg.adapter.mode);
    a.get("mode", mode);
    cfg.adapter.mode = parse_mode_kind(mode);
    std::string alloc = "random";
    a.get("allocation", alloc);
    if (alloc == "random") {
      cfg.adapter.allocation = Allocation::random;
    } else if (alloc == "disjoint") {
      cfg.adapter.allocation = Allocation::disjoint;
    } else {
      throw ValidationError("config: adapter.allocation must be 'random' or 'disjoint', got '" + alloc + "'");
    }
    a.get("seeds", cfg.adapter.seeds);
    a.finish();
  } else {
    top.raw("adapter");
  }

  if (top.has("train")) {
    Section t(top.raw("train"), "train");
    std::string method = "gd";
    t.get("method", method);
    if (method == "gd") {
      cfg.train.method = TrainMethod::gd;
    } else if (method == "closed_form") {
      cfg.train.method = TrainMethod::closed_form;
    } else {
      throw ValidationError("config: train.method must be 'gd' or 'closed_form', got '" + method + "'");
    }
    cfg.train.gd = parse_train_config(t);
    t.finish();
  } else {
    top.raw("train");
  }

  if (top.has("merge")) {
    Section m(top.raw("merge"), "merge");
    m.get("default_lambda", cfg.merge.default_lambda);
    m.get("overrides", cfg.merge.overrides);
    m.finish();
  } else {
    top.raw("merge");
  }

  auto& an = cfg.analysis;
  an.ablation.base_seed = derive_seed(root, "ablation_base");
  an.ablation.task.seed = derive_seed(root, "ablation_task");
  an.ablation.task.input = "subspace";
  an.ablation.task.subspace_seed = derive_seed(root, "ablation_subspace");
  if (top.has("analysis")) {
    Section s(top.raw("analysis"), "analysis");
    s.get("overlap_grid", an.overlap_grid);
    s.get("overlap_seeds", an.overlap_seeds);
    s.get("concept_counts", an.concept_counts);
    if (s.has("sweep_modes")) {
      std::vector<std::string> names;
      s.get("sweep_modes", names);
      an.sweep_modes.clear();
      for (const auto& n : names) an.sweep_modes.push_back(parse_mode_kind(n));
    } else {
      s.raw("sweep_modes");
    }
    s.get("sweep_seeds", an.sweep_seeds);
    if (s.has("sweep_train")) {
      Section t(s.raw("sweep_train"), "analysis.sweep_train");
      an.sweep_train = parse_train_config(t);
      t.finish();
    } else {
      s.raw("sweep_train");
    }
    if (s.has("ablation")) {
      Section ab(s.raw("ablation"), "analysis.ablation");
      ab.get("d_out", an.ablation.d_out);
      ab.get("d_in", an.ablation.d_in);
      ab.get("base_seed", an.ablation.base_seed);
      if (ab.has("task")) {
        ConceptConfig defaults = an.ablation.task;
        an.ablation.task = parse_concept(ab.raw("task"), "analysis.ablation.task", root, 0, defaults.subspace_seed);
        // The template has no id of its own and keeps the ablation seed unless one is given.
        if (!ab.raw("task").contains("seed")) an.ablation.task.seed = defaults.seed;
        if (!ab.raw("task").contains("input")) an.ablation.task.input = defaults.input;
      } else {
        ab.raw("task");
      }
      ab.finish();
    } else {
      s.raw("ablation");
    }
    s.get("expectation_trials", an.expectation_trials);
    s.get("crosstalk_trials", an.crosstalk_trials);
    s.get("collision_pairs", an.collision_pairs);
    s.get("report_dir", an.report_dir);
    s.finish();
  } else {
    top.raw("analysis");
  }
  top.finish();

  validate_config(cfg);
  return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.basis_dim < 2) {
    throw ValidationError("config: basis.dim must be >= 2, got " + std::to_string(cfg.basis_dim));
  }
  if (cfg.layers.empty()) throw ValidationError("config: at least one layer is required");
  std::set<std::string> layer_ids;
  for (const auto& l : cfg.layers) {
    if (l.layer_id.empty()) throw ValidationError("config: layer_id must not be empty");
    if (l.layer_id.find_first_of("/\\,\"") != std::string::npos || l.layer_id.find("__") != std::string::npos) {
      throw ValidationError("config: layer_id '" + l.layer_id + "' may not contain '/', '\\', ',', '\"' or '__'");
    }
    if (!layer_ids.insert(l.layer_id).second) throw ValidationError("config: duplicate layer_id '" + l.layer_id + "'");
    if (l.d_in < 2 || l.d_out < 2) {
      throw ValidationError("config: layer '" + l.layer_id + "' needs d_in >= 2 and d_out >= 2");
    }
    if (cfg.adapter.rank < 1 || cfg.adapter.rank >= std::min(l.d_in, l.d_out)) {
      throw ValidationError("config: adapter.rank " + std::to_string(cfg.adapter.rank) +
                            " must satisfy 1 <= rank < min(d_out, d_in) = " +
                            std::to_string(std::min(l.d_in, l.d_out)) + " for layer '" + l.layer_id + "'");
    }
    if (cfg.adapter.mode == ModeKind::shared_subset && cfg.adapter.allocation == Allocation::disjoint &&
        cfg.concepts.size() * cfg.adapter.rank > l.d_in) {
      throw ValidationError("config: disjoint allocation of " + std::to_string(cfg.concepts.size()) +
                            " concepts at rank " + std::to_string(cfg.adapter.rank) + " needs d_in >= " +
                            std::to_string(cfg.concepts.size() * cfg.adapter.rank) + " on layer '" + l.layer_id + "'");
    }
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < cfg.concepts.size(); ++i) {
    const auto& c = cfg.concepts[i];
    const std::string where = "concepts[" + std::to_string(i) + "]";
    if (c.concept_id.empty()) throw ValidationError("config: " + where + ".concept_id must not be empty");
    if (c.concept_id.find_first_of("/\\,\"") != std::string::npos || c.concept_id.find("__") != std::string::npos) {
      throw ValidationError("config: concept_id '" + c.concept_id + "' may not contain '/', '\\', ',', '\"' or '__'");
    }
    if (!ids.insert(c.concept_id).second) throw ValidationError("config: duplicate concept_id '" + c.concept_id + "'");
    check_concept(c, where);
  }
  for (const auto& [id, _] : cfg.adapter.seeds) {
    if (!ids.contains(id)) throw ValidationError("config: adapter.seeds names unknown concept '" + id + "'");
  }
  for (const auto& [id, lambda] : cfg.merge.overrides) {
    if (!ids.contains(id)) throw ValidationError("config: merge.overrides names unknown concept '" + id + "'");
    if (!std::isfinite(lambda)) throw ValidationError("config: merge.overrides['" + id + "'] must be finite");
  }
  if (!std::isfinite(cfg.merge.default_lambda)) throw ValidationError("config: merge.default_lambda must be finite");
  check_train(cfg.train.gd, "train");

  const auto& an = cfg.analysis;
  for (double f : an.overlap_grid) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("config: analysis.overlap_grid values must lie in [0, 1]");
  }
  for (std::size_t m : an.concept_counts) {
    if (m == 0) throw ValidationError("config: analysis.concept_counts must be positive");
  }
  if (an.ablation.d_in < 2 || an.ablation.d_out < 2) {
    throw ValidationError("config: analysis.ablation needs d_in >= 2 and d_out >= 2");
  }
  if (cfg.adapter.rank >= std::min(an.ablation.d_in, an.ablation.d_out)) {
    throw ValidationError("config: adapter.rank must be < min(d_out, d_in) of analysis.ablation");
  }
  check_concept(an.ablation.task, "analysis.ablation.task");
  check_train(an.sweep_train, "analysis.sweep_train");
  if (an.expectation_trials < 1000) throw ValidationError("config: analysis.expectation_trials must be >= 1000");
  if (an.crosstalk_trials == 0) throw ValidationError("config: analysis.crosstalk_trials must be positive");
  if (an.collision_pairs < 2) throw ValidationError("config: analysis.collision_pairs must be >= 2");
  if (cfg.output_dir.empty()) throw ValidationError("config: output_dir must not be empty");
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j, seed_override);
}

json config_to_json(const ExperimentConfig& cfg) {
  json layers = json::array();
  for (const auto& l : cfg.layers) {
    layers.push_back({{"layer_id", l.layer_id}, {"d_out", l.d_out}, {"d_in", l.d_in}, {"base_seed", l.base_seed}});
  }
  json concepts = json::array();
  for (const auto& c : cfg.concepts) concepts.push_back(concept_json(c));
  json modes = json::array();
  for (ModeKind m : cfg.analysis.sweep_modes) modes.push_back(mode_kind_name(m));
  const auto& an = cfg.analysis;
  json train = train_json(cfg.train.gd);
  train["method"] = cfg.train.method == TrainMethod::gd ? "gd" : "closed_form";
  json ablation_task = concept_json(an.ablation.task);
  ablation_task.erase("concept_id");
  return {{"schema_version", cfg.schema_version},
          {"seed", cfg.seed},
          {"output_dir", cfg.output_dir},
          {"basis", {{"dim", cfg.basis_dim}, {"seed", cfg.basis_seed}}},
          {"layers", layers},
          {"concepts", concepts},
          {"adapter",
           {{"rank", cfg.adapter.rank},
            {"mode", mode_kind_name(cfg.adapter.mode)},
            {"allocation", cfg.adapter.allocation == Allocation::random ? "random" : "disjoint"},
            {"seeds", cfg.adapter.seeds}}},
          {"train", train},
          {"merge", {{"default_lambda", cfg.merge.default_lambda}, {"overrides", cfg.merge.overrides}}},
          {"analysis",
           {{"overlap_grid", an.overlap_grid},
            {"overlap_seeds", an.overlap_seeds},
            {"concept_counts", an.concept_counts},
            {"sweep_modes", modes},
            {"sweep_seeds", an.sweep_seeds},
            {"sweep_train", train_json(an.sweep_train)},
            {"ablation",
             {{"d_out", an.ablation.d_out},
              {"d_in", an.ablation.d_in},
              {"base_seed", an.ablation.base_seed},
              {"task", ablation_task}}},
            {"expectation_trials", an.expectation_trials},
            {"crosstalk_trials", an.crosstalk_trials},
            {"collision_pairs", an.collision_pairs},
            {"report_dir", an.report_dir}}}};
}

const LayerConfig& find_layer(const ExperimentConfig& cfg, const std::string& layer_id) {
  for (const auto& l : cfg.layers)
    if (l.layer_id == layer_id) return l;
  throw ValidationError("unknown layer_id '" + layer_id + "'");
}

const ConceptConfig& find_concept(const ExperimentConfig& cfg, const std::string& concept_id) {
  for (const auto& c : cfg.concepts)
    if (c.concept_id == concept_id) return c;
  throw ValidationError("unknown concept_id '" + concept_id + "'");
}

ConceptTaskSpec task_spec_for(const ConceptConfig& c, std::size_t d_in, std::size_t d_out,
                              const std::string& layer_id) {
  ConceptTaskSpec spec;
  spec.concept_id = c.concept_id;
  spec.d_in = d_in;
  spec.d_out = d_out;
  spec.n_samples = c.n_samples;
  if (c.input == "subspace") {
    SubspaceConcentrated sub = default_subspace(d_in, c.subspace_seed, c.input_scale);
    if (c.subspace_dim != 0) sub.subspace_dim = c.subspace_dim;
    sub.off_plane_scale = c.off_plane_scale * c.input_scale;
    spec.input_dist = sub;
  } else {
    spec.input_dist = Isotropic{c.input_scale};
  }
  spec.target_perturbation_scale = c.target_perturbation_scale;
  spec.target_rank = c.target_rank;
  spec.noise_sigma = c.noise_sigma;
  spec.seed = layer_id.empty() ? c.seed : derive_seed(c.seed, "layer_task/" + layer_id);
  return spec;
}

BaseLayer base_for(const LayerConfig& layer) { return make_base_layer(layer.d_out, layer.d_in, layer.base_seed); }

std::uint64_t adapter_seed_for(const ExperimentConfig& cfg, const std::string& concept_id) {
  if (auto it = cfg.adapter.seeds.find(concept_id); it != cfg.adapter.seeds.end()) return it->second;
  return derive_seed(cfg.seed, "adapter/" + concept_id);
}

BasisMode mode_for(const ExperimentConfig& cfg, const std::string& concept_id, const LayerConfig& layer) {
  const std::uint64_t seed = derive_seed(adapter_seed_for(cfg, concept_id), "layer_mode/" + layer.layer_id);
  if (cfg.adapter.mode == ModeKind::shared_subset && cfg.adapter.allocation == Allocation::disjoint) {
    std::size_t index = 0;
    while (index < cfg.concepts.size() && cfg.concepts[index].concept_id != concept_id) ++index;
    if (index == cfg.concepts.size()) throw ValidationError("unknown concept_id '" + concept_id + "'");
    auto subsets = disjoint_subsets(layer.d_in, cfg.adapter.rank, cfg.concepts.size(), cfg.basis_seed,
                                    derive_seed(cfg.seed, "disjoint_allocation/" + layer.layer_id));
    return SharedSubset{subsets[index]};
  }
  return sample_mode(cfg.adapter.mode, layer.d_in, cfg.adapter.rank, cfg.basis_seed, seed);
}

double lambda_for(const ExperimentConfig& cfg, const std::string& concept_id) {
  if (auto it = cfg.merge.overrides.find(concept_id); it != cfg.merge.overrides.end()) return it->second;
  return cfg.merge.default_lambda;
}

}  // namespace ortha
