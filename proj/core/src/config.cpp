#include "mgtok/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "mgtok/binary_io.hpp"

namespace mgtok {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& m) { throw Error(ErrorCode::config, m); }

// Wraps a JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(where() + " must be an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) config_error("unknown config key " + path_ + (path_.empty() ? "" : ".") + k);
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      config_error("config key " + path_ + (path_.empty() ? "" : ".") + key + ": " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json train_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"divergence_factor", c.divergence_factor}};
}

void train_from_json(const json& j, const std::string& path, TrainConfig& c) {
  Fields f(j, path);
  f.get("lr", c.lr);
  f.get("batch", c.batch);
  f.get("epochs", c.epochs);
  f.get("weight_decay", c.weight_decay);
  f.get("clip_norm", c.clip_norm);
  f.get("divergence_factor", c.divergence_factor);
}

std::string scale_mode_name(ScaleMode m) { return m == ScaleMode::norm_retarget ? "norm_retarget" : "literal_affine"; }

json to_json_tree(const ExperimentConfig& c) {
  json plans = json::array();
  for (const ReductionPlan& p : c.plans) plans.push_back(p.to_string());
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"scene",
       {{"image_side", c.scene.image_side},
        {"min_objects", c.scene.min_objects},
        {"max_objects", c.scene.max_objects},
        {"min_size", c.scene.min_size},
        {"max_size", c.scene.max_size},
        {"min_margin", c.scene.min_margin},
        {"background_noise", c.scene.background_noise},
        {"max_attempts", c.scene.max_attempts}}},
      {"train_scenes", c.train_scenes},
      {"test_scenes", c.test_scenes},
      {"qa_per_scene", c.qa_per_scene},
      {"encoder",
       {{"patch_size", c.encoder.patch_size},
        {"embed_dim", c.encoder.embed_dim},
        {"layers", c.encoder.layers},
        {"heads", c.encoder.heads},
        {"seed", c.encoder.seed}}},
      {"local_pool", c.local_pool},
      {"proposals", c.proposals},
      {"jitter",
       {{"max_shift", c.jitter.max_shift},
        {"max_scale", c.jitter.max_scale},
        {"boundary_noise", c.jitter.boundary_noise},
        {"confidence_noise", c.jitter.confidence_noise},
        {"min_iou", c.jitter.min_iou}}},
      {"inversion",
       {{"steps", c.inversion.steps},
        {"step_size", c.inversion.step_size},
        {"init", c.inversion.init == InversionInit::cls ? "cls" : "zero"},
        {"reg_weight", c.inversion.reg_weight},
        {"loss", c.inversion.loss == InversionLoss::cross_entropy ? "cross_entropy" : "mse"},
        {"backtracking", c.inversion.backtracking},
        {"max_halvings", c.inversion.max_halvings}}},
      {"scaling",
       {{"enabled", c.scale_tokens},
        {"mode", scale_mode_name(c.scale.mode)},
        {"spread", c.scale.spread},
        {"position_before_scaling", c.position_before_scaling}}},
      {"projector", {{"hidden_dim", c.projector.hidden_dim}, {"seed", c.projector.seed}}},
      {"decoder",
       {{"model_dim", c.decoder.model_dim},
        {"layers", c.decoder.layers},
        {"heads", c.decoder.heads},
        {"ff_dim", c.decoder.ff_dim},
        {"context", c.decoder.context},
        {"seed", c.decoder.seed}}},
      {"stage1", train_to_json(c.stage1)},
      {"stage2", train_to_json(c.stage2)},
      {"plans", plans},
      {"patch_only_baseline", c.patch_only_baseline},
      {"mask_ablation_objects", c.mask_ablation_objects},
      {"tile_grid", c.tile_grid},
      {"mask_ablation_dedup_iou", c.mask_ablation_dedup_iou},
      {"mask_ablation_per_family", c.mask_ablation_per_family},
      {"reference_tokens", c.reference_tokens},
      {"workers", c.workers},
  };
}

ExperimentConfig from_json_tree(const json& j) {
  ExperimentConfig c = default_experiment_config();
  Fields f(j, "");
  int version = kConfigSchemaVersion;
  f.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw Error(ErrorCode::unsupported_version, "config schema_version " + std::to_string(version) +
                                                    " is not supported (expected " +
                                                    std::to_string(kConfigSchemaVersion) + ")");
  }
  f.get("seed", c.seed);
  if (const json* s = f.child("scene")) {
    Fields g(*s, "scene");
    g.get("image_side", c.scene.image_side);
    g.get("min_objects", c.scene.min_objects);
    g.get("max_objects", c.scene.max_objects);
    g.get("min_size", c.scene.min_size);
    g.get("max_size", c.scene.max_size);
    g.get("min_margin", c.scene.min_margin);
    g.get("background_noise", c.scene.background_noise);
    g.get("max_attempts", c.scene.max_attempts);
  }
  f.get("train_scenes", c.train_scenes);
  f.get("test_scenes", c.test_scenes);
  f.get("qa_per_scene", c.qa_per_scene);
  if (const json* e = f.child("encoder")) {
    Fields g(*e, "encoder");
    g.get("patch_size", c.encoder.patch_size);
    g.get("embed_dim", c.encoder.embed_dim);
    g.get("layers", c.encoder.layers);
    g.get("heads", c.encoder.heads);
    g.get("seed", c.encoder.seed);
  }
  f.get("local_pool", c.local_pool);
  f.get("proposals", c.proposals);
  if (const json* e = f.child("jitter")) {
    Fields g(*e, "jitter");
    g.get("max_shift", c.jitter.max_shift);
    g.get("max_scale", c.jitter.max_scale);
    g.get("boundary_noise", c.jitter.boundary_noise);
    g.get("confidence_noise", c.jitter.confidence_noise);
    g.get("min_iou", c.jitter.min_iou);
  }
  if (const json* e = f.child("inversion")) {
    Fields g(*e, "inversion");
    std::string init = c.inversion.init == InversionInit::cls ? "cls" : "zero";
    std::string loss = c.inversion.loss == InversionLoss::cross_entropy ? "cross_entropy" : "mse";
    g.get("steps", c.inversion.steps);
    g.get("step_size", c.inversion.step_size);
    g.get("init", init);
    g.get("reg_weight", c.inversion.reg_weight);
    g.get("loss", loss);
    g.get("backtracking", c.inversion.backtracking);
    g.get("max_halvings", c.inversion.max_halvings);
    if (init != "cls" && init != "zero") config_error("inversion.init must be 'cls' or 'zero'");
    if (loss != "cross_entropy" && loss != "mse") config_error("inversion.loss must be 'cross_entropy' or 'mse'");
    c.inversion.init = init == "cls" ? InversionInit::cls : InversionInit::zero;
    c.inversion.loss = loss == "mse" ? InversionLoss::mse : InversionLoss::cross_entropy;
  }
  if (const json* e = f.child("scaling")) {
    Fields g(*e, "scaling");
    std::string mode = scale_mode_name(c.scale.mode);
    g.get("enabled", c.scale_tokens);
    g.get("mode", mode);
    g.get("spread", c.scale.spread);
    g.get("position_before_scaling", c.position_before_scaling);
    if (mode != "norm_retarget" && mode != "literal_affine")
      config_error("scaling.mode must be 'norm_retarget' or 'literal_affine'");
    c.scale.mode = mode == "norm_retarget" ? ScaleMode::norm_retarget : ScaleMode::literal_affine;
  }
  if (const json* e = f.child("projector")) {
    Fields g(*e, "projector");
    g.get("hidden_dim", c.projector.hidden_dim);
    g.get("seed", c.projector.seed);
  }
  if (const json* e = f.child("decoder")) {
    Fields g(*e, "decoder");
    g.get("model_dim", c.decoder.model_dim);
    g.get("layers", c.decoder.layers);
    g.get("heads", c.decoder.heads);
    g.get("ff_dim", c.decoder.ff_dim);
    g.get("context", c.decoder.context);
    g.get("seed", c.decoder.seed);
  }
  if (const json* e = f.child("stage1")) train_from_json(*e, "stage1", c.stage1);
  if (const json* e = f.child("stage2")) train_from_json(*e, "stage2", c.stage2);
  if (const json* e = f.child("plans")) {
    if (!e->is_array()) config_error("plans must be an array of plan strings");
    c.plans.clear();
    for (const json& p : *e) {
      if (!p.is_string()) config_error("plans must be an array of plan strings");
      c.plans.push_back(ReductionPlan::parse(p.get<std::string>()));
    }
  }
  f.get("patch_only_baseline", c.patch_only_baseline);
  f.get("mask_ablation_objects", c.mask_ablation_objects);
  f.get("tile_grid", c.tile_grid);
  f.get("mask_ablation_dedup_iou", c.mask_ablation_dedup_iou);
  f.get("mask_ablation_per_family", c.mask_ablation_per_family);
  f.get("reference_tokens", c.reference_tokens);
  f.get("workers", c.workers);

  // Derived fields.
  c.encoder.image_side = c.scene.image_side;
  c.projector.in_dim = c.encoder.embed_dim;
  c.projector.out_dim = c.decoder.model_dim;
  c.decoder.vocab_size = static_cast<int>(Vocabulary::standard().size());
  return c;
}

void apply_override(json& tree, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override must look like key.path=value: " + item);
  const std::string path = item.substr(0, eq);
  const std::string raw = item.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) config_error("empty key in override " + item);
    if (!node->is_object() || !node->contains(key)) config_error("override names unknown key " + path);
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.stage1.stage = Stage::pretrain;
  c.stage1.freeze_decoder = true;
  c.stage1.lr = 1e-3;
  c.stage1.batch = 32;
  c.stage1.epochs = 2;
  c.stage2.stage = Stage::finetune;
  c.stage2.freeze_decoder = false;
  c.stage2.lr = 1e-3;
  c.stage2.batch = 32;
  c.stage2.epochs = 12;
  c.plans = {
      ReductionPlan::parse("name=full,patch=keep_all,objects=all,global=on"),
      ReductionPlan::parse("name=57-analog,patch=keep_all,objects=20,global=on,dedup=0.5"),
      ReductionPlan::parse("name=42-analog,patch=keep_all,objects=5,global=on,dedup=0.5"),
      ReductionPlan::parse("name=29-analog,patch=prune_random:23:17,objects=5,global=on,dedup=0.5"),
      ReductionPlan::parse("name=15-analog,patch=pool:2,objects=5,global=on,dedup=0.5"),
  };
  return c;
}

std::size_t ExperimentConfig::effective_reference() const {
  return reference_tokens != 0 ? reference_tokens : static_cast<std::size_t>(encoder.patch_count());
}

void ExperimentConfig::validate() const {
  scene.validate();
  encoder.validate();
  inversion.validate();
  decoder.validate();
  stage1.validate();
  stage2.validate();
  if (stage1.stage != Stage::pretrain || stage2.stage != Stage::finetune) config_error("stage order is fixed");
  if (train_scenes < 1 || test_scenes < 1) config_error("train_scenes and test_scenes must be >= 1");
  if (qa_per_scene < 1) config_error("qa_per_scene must be >= 1");
  if (local_pool < 1 || encoder.grid_side() % local_pool != 0)
    config_error("local_pool must divide the patch grid side " + std::to_string(encoder.grid_side()));
  if (proposals < static_cast<std::size_t>(scene.max_objects))
    config_error("proposals must cover every object at least once");
  if (mask_ablation_objects < 1 || mask_ablation_objects > proposals)
    config_error("mask_ablation_objects must be in [1, proposals]");
  if (tile_grid < 1 || static_cast<std::size_t>(tile_grid * tile_grid) != mask_ablation_objects)
    config_error("tile_grid^2 must equal mask_ablation_objects so every mask family has the same budget");
  if (!(mask_ablation_dedup_iou >= 0.0 && mask_ablation_dedup_iou <= 1.0))
    config_error("mask_ablation_dedup_iou must lie in [0, 1]");
  if (plans.empty()) config_error("at least one reduction plan is required");
  if (projector.in_dim != encoder.embed_dim || projector.out_dim != decoder.model_dim)
    config_error("projector dims must match encoder and decoder");
  if (workers < 1) config_error("workers must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, std::span<const std::string> overrides) {
  json tree = to_json_tree(default_experiment_config());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) config_error("config must be a JSON object");
  if (!doc.contains("schema_version")) config_error("config lacks schema_version");
  const json& v = doc.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kConfigSchemaVersion) {
    throw Error(ErrorCode::unsupported_version,
                "config schema_version " + v.dump() + " is not supported (expected " +
                    std::to_string(kConfigSchemaVersion) + ")");
  }
  // Objects merge key by key; arrays (plans) replace the default wholesale.
  // Unknown keys survive the merge and are rejected while parsing.
  tree.merge_patch(doc);
  for (const std::string& o : overrides) apply_override(tree, o);
  ExperimentConfig cfg = from_json_tree(tree);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  const auto bytes = read_file_bytes(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), overrides);
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json_tree(cfg).dump(2) + "\n"; }

}  // namespace mgtok
