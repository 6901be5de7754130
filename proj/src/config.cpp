#include "lift3d/config.hpp"

#include <set>

namespace lift3d::config {

namespace {

[[noreturn]] void config_error(const std::string& ctx, const std::string& what) {
  throw Error(ErrorKind::Config, ctx + ": " + what);
}

/// Reads the fields of one JSON object and rejects any it was not asked about.
class Section {
 public:
  Section(const io::Json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) config_error(ctx_, "expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      config_error(ctx_ + "." + key, e.what());
    }
  }

  template <class T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  const io::Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string path(const char* key) const { return ctx_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) config_error(ctx_, "unknown key '" + it.key() + "'");
    }
  }

 private:
  const io::Json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

std::uint64_t derive(std::uint64_t root, const char* name) {
  Rng rng = make_stream(root, name);
  return draw_seed(rng);
}

dataset::CategoryTemplate template_from_json(const io::Json& j, const std::string& ctx) {
  if (j.is_string()) {
    try {
      return dataset::builtin_template(j.get<std::string>());
    } catch (const Error& e) {
      config_error(ctx, e.detail());
    }
  }
  Section s(j, ctx);
  dataset::CategoryTemplate t;
  std::string base;
  s.read("base", base);
  if (!base.empty()) {
    try {
      t = dataset::builtin_template(base);
    } catch (const Error& e) {
      config_error(ctx, e.detail());
    }
  }
  s.read("name", t.name);
  std::string topology = dataset::to_string(t.topology);
  s.read("topology", topology);
  try {
    t.topology = dataset::topology_from_string(topology);
  } catch (const Error& e) {
    config_error(ctx, e.detail());
  }
  s.read("num_joints", t.num_joints);
  s.read("body_length", t.body_length);
  s.read("amplitude", t.amplitude);
  s.read("frames", t.frames);
  s.read("fps", t.fps);
  s.finish();
  if (t.name.empty()) config_error(ctx, "template needs a name");
  return t;
}

io::Json template_to_json(const dataset::CategoryTemplate& t) {
  io::Json j = io::Json::object();
  j["name"] = t.name;
  j["topology"] = dataset::to_string(t.topology);
  j["num_joints"] = t.num_joints;
  j["body_length"] = t.body_length;
  j["amplitude"] = t.amplitude;
  j["frames"] = t.frames;
  j["fps"] = t.fps;
  return j;
}

}  // namespace

RunConfig::RunConfig() {
  for (const char* name : {"fox", "bear", "chicken", "deer"}) dataset.templates.push_back(dataset::builtin_template(name));
}

std::uint64_t RunConfig::dataset_seed() const { return dataset.seed ? *dataset.seed : derive(seed, "dataset"); }
std::uint64_t RunConfig::train_seed() const { return train.seed_set ? train.settings.seed : derive(seed, "train"); }
std::uint64_t RunConfig::eval_seed() const { return eval.seed ? *eval.seed : derive(seed, "eval"); }

model::ModelConfig RunConfig::effective_model() const {
  model::ModelConfig m = model;
  if (!model_seeds_set) {
    m.rff_seed = derive(seed, "model/rff");
    m.init_seed = derive(seed, "model/init");
  }
  return m;
}

training::TrainConfig RunConfig::effective_train() const {
  training::TrainConfig t = train.settings;
  t.seed = train_seed();
  return t;
}

dataset::GenerationConfig RunConfig::generation() const {
  dataset::GenerationConfig g;
  g.templates.clear();
  for (const auto& t : dataset.templates) g.templates.push_back(t.name);
  g.sequences_per_category = dataset.sequences_per_category;
  g.frames = dataset.frames;
  g.noise_px = dataset.noise_px;
  g.image_size = dataset.image_size;
  g.camera_margin = dataset.camera_margin;
  g.world_to_mm = dataset.world_to_mm;
  g.satellite_radius = dataset.satellite_radius;
  g.satellite_jitter = dataset.satellite_jitter;
  g.train_fraction = dataset.train_fraction;
  g.ik = ik;
  return g;
}

void RunConfig::validate() const {
  const auto& d = dataset;
  if (d.templates.empty()) config_error("dataset.templates", "at least one template is required");
  std::set<std::string> names;
  for (const auto& t : d.templates) {
    if (!names.insert(t.name).second) config_error("dataset.templates", "duplicate template '" + t.name + "'");
    if (t.num_joints < dataset::kMinTemplateJoints || t.num_joints > dataset::kMaxTemplateJoints) {
      config_error("dataset.templates", "template '" + t.name + "' joint count outside [19, 29]");
    }
    if (!(t.body_length > 0.0) || !(t.amplitude >= 0.0) || !(t.fps > 0.0)) {
      config_error("dataset.templates", "template '" + t.name + "' has invalid motion settings");
    }
  }
  if (d.sequences_per_category < 1) config_error("dataset.sequences_per_category", "must be positive");
  if (d.frames < 1) config_error("dataset.frames", "must be positive");
  if (d.noise_px < 0.0) config_error("dataset.noise_px", "must be non-negative");
  if (d.image_size.x() <= 0 || d.image_size.y() <= 0) config_error("dataset.image_size", "must be positive");
  if (!(d.camera_margin >= 0.0 && d.camera_margin < 1.0)) config_error("dataset.camera_margin", "must be in [0, 1)");
  if (!(d.world_to_mm > 0.0)) config_error("dataset.world_to_mm", "must be positive");
  if (!(d.train_fraction >= 0.0 && d.train_fraction <= 1.0)) config_error("dataset.train_fraction", "must be in [0, 1]");
  if (d.satellite_radius < 0.0 || d.satellite_jitter < 0.0) config_error("dataset", "satellite settings must be >= 0");
  if (!(ik.learning_rate > 0.0) || ik.max_iters < 0 || ik.smoothness_weight < 0.0) {
    config_error("ik", "learning_rate must be positive, max_iters and smoothness_weight non-negative");
  }
  try {
    model.validate();
    train.settings.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.detail());
  }
  for (const auto& s : eval.scenarios) metrics::Scenario::parse(s);
  for (double f : eval.occlusion_sweep) {
    if (!(f >= 0.0 && f <= 1.0)) config_error("eval.occlusion_sweep", "fractions must be in [0, 1]");
  }
}

RunConfig run_config_from_json(const io::Json& j) {
  RunConfig c;
  Section root(j, "config");
  root.read("seed", c.seed);

  if (const io::Json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    if (const io::Json* t = s.child("templates")) {
      if (!t->is_array()) config_error("dataset.templates", "expected an array");
      c.dataset.templates.clear();
      for (std::size_t i = 0; i < t->size(); ++i) {
        c.dataset.templates.push_back(template_from_json((*t)[i], "dataset.templates[" + std::to_string(i) + "]"));
      }
    }
    s.read("sequences_per_category", c.dataset.sequences_per_category);
    s.read("frames", c.dataset.frames);
    s.read("noise_px", c.dataset.noise_px);
    std::vector<int> size{c.dataset.image_size.x(), c.dataset.image_size.y()};
    s.read("image_size", size);
    if (size.size() != 2) config_error("dataset.image_size", "expected [width, height]");
    c.dataset.image_size = Eigen::Vector2i(size[0], size[1]);
    s.read("camera_margin", c.dataset.camera_margin);
    s.read("world_to_mm", c.dataset.world_to_mm);
    s.read("satellite_radius", c.dataset.satellite_radius);
    s.read("satellite_jitter", c.dataset.satellite_jitter);
    s.read("train_fraction", c.dataset.train_fraction);
    s.read_optional("seed", c.dataset.seed);
    s.finish();
  }

  if (const io::Json* k = root.child("ik")) {
    Section s(*k, "ik");
    s.read("smoothness_weight", c.ik.smoothness_weight);
    s.read("learning_rate", c.ik.learning_rate);
    s.read("max_iters", c.ik.max_iters);
    s.read("convergence_tol", c.ik.convergence_tol);
    s.read("convergence_window", c.ik.convergence_window);
    s.read("root_translation_free", c.ik.root_translation_free);
    s.finish();
  }

  if (const io::Json* m = root.child("model")) {
    Section s(*m, "model");
    s.read("feature_dim", c.model.feature_dim);
    s.read("motion_layers", c.model.motion_layers);
    s.read("space_layers", c.model.space_layers);
    s.read("heads", c.model.heads);
    if (const io::Json* a = s.child("window_alpha")) {
      if (a->is_string()) {
        if (a->get<std::string>() != "unbounded") config_error("model.window_alpha", "expected an integer or \"unbounded\"");
        c.model.window_alpha = model::kUnboundedWindow;
      } else if (a->is_number_integer()) {
        c.model.window_alpha = a->get<int>();
      } else {
        config_error("model.window_alpha", "expected an integer or \"unbounded\"");
      }
    }
    s.read("max_joints", c.model.max_joints);
    s.read("window_frames", c.model.window_frames);
    std::string emb = model::to_string(c.model.temporal_embedding);
    s.read("temporal_embedding", emb);
    try {
      c.model.temporal_embedding = model::temporal_embedding_from_string(emb);
    } catch (const Error& e) {
      config_error("model.temporal_embedding", e.detail());
    }
    s.read("multiplicative_window", c.model.multiplicative_window);
    c.model_seeds_set = s.has("rff_seed") || s.has("init_seed");
    if (c.model_seeds_set) {
      c.model.rff_seed = derive(c.seed, "model/rff");
      c.model.init_seed = derive(c.seed, "model/init");
    }
    s.read("rff_seed", c.model.rff_seed);
    s.read("init_seed", c.model.init_seed);
    s.finish();
  }

  if (const io::Json* t = root.child("train")) {
    Section s(*t, "train");
    auto& tc = c.train.settings;
    s.read("learning_rate", tc.learning_rate);
    s.read("weight_decay", tc.weight_decay);
    s.read("adam_beta1", tc.adam_beta1);
    s.read("adam_beta2", tc.adam_beta2);
    s.read("adam_eps", tc.adam_eps);
    s.read("velocity_weight", tc.velocity_weight);
    s.read("epochs", tc.epochs);
    s.read("batch_sequences", tc.batch_sequences);
    s.read("frames_per_clip", tc.frames_per_clip);
    s.read("procrustes", tc.procrustes_loss);
    s.read("full_svd_gradient", tc.full_svd_gradient);
    s.read("occlusion", tc.occlusion);
    s.read("input_noise", tc.input_noise);
    s.read("max_steps", tc.max_steps);
    s.read("validate_every", tc.validate_every);
    c.train.seed_set = s.has("seed");
    s.read("seed", tc.seed);
    s.read("exclude_categories", c.train.exclude_categories);
    s.finish();
  }

  if (const io::Json* e = root.child("eval")) {
    Section s(*e, "eval");
    s.read("scenarios", c.eval.scenarios);
    s.read("occlusion_sweep", c.eval.occlusion_sweep);
    s.read("with_scale", c.eval.alignment.with_scale);
    s.read("whole_sequence_centering", c.eval.alignment.whole_sequence_centering);
    s.read_optional("seed", c.eval.seed);
    s.finish();
  }

  if (const io::Json* p = root.child("paths")) {
    Section s(*p, "paths");
    s.read("dataset_dir", c.paths.dataset_dir);
    s.read("output_dir", c.paths.output_dir);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const io::fs::path& path) {
  io::Json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format) throw Error(ErrorKind::Config, e.detail());
    throw;
  }
  return run_config_from_json(j);
}

io::Json to_json(const training::TrainConfig& t) {
  io::Json j = io::Json::object();
  j["learning_rate"] = t.learning_rate;
  j["weight_decay"] = t.weight_decay;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["velocity_weight"] = t.velocity_weight;
  j["epochs"] = t.epochs;
  j["batch_sequences"] = t.batch_sequences;
  j["frames_per_clip"] = t.frames_per_clip;
  j["procrustes"] = t.procrustes_loss;
  j["full_svd_gradient"] = t.full_svd_gradient;
  j["occlusion"] = t.occlusion;
  j["input_noise"] = t.input_noise;
  j["max_steps"] = t.max_steps;
  j["validate_every"] = t.validate_every;
  j["seed"] = t.seed;
  return j;
}

io::Json to_json(const RunConfig& c) {
  io::Json j = io::Json::object();
  j["seed"] = c.seed;

  io::Json d = io::Json::object();
  io::Json templates = io::Json::array();
  for (const auto& t : c.dataset.templates) templates.push_back(template_to_json(t));
  d["templates"] = templates;
  d["sequences_per_category"] = c.dataset.sequences_per_category;
  d["frames"] = c.dataset.frames;
  d["noise_px"] = c.dataset.noise_px;
  d["image_size"] = {c.dataset.image_size.x(), c.dataset.image_size.y()};
  d["camera_margin"] = c.dataset.camera_margin;
  d["world_to_mm"] = c.dataset.world_to_mm;
  d["satellite_radius"] = c.dataset.satellite_radius;
  d["satellite_jitter"] = c.dataset.satellite_jitter;
  d["train_fraction"] = c.dataset.train_fraction;
  d["seed"] = c.dataset_seed();
  j["dataset"] = d;

  io::Json k = io::Json::object();
  k["smoothness_weight"] = c.ik.smoothness_weight;
  k["learning_rate"] = c.ik.learning_rate;
  k["max_iters"] = c.ik.max_iters;
  k["convergence_tol"] = c.ik.convergence_tol;
  k["convergence_window"] = c.ik.convergence_window;
  k["root_translation_free"] = c.ik.root_translation_free;
  j["ik"] = k;

  j["model"] = io::to_json(c.effective_model());

  io::Json t = to_json(c.effective_train());
  t["exclude_categories"] = c.train.exclude_categories;
  j["train"] = t;

  io::Json e = io::Json::object();
  e["scenarios"] = c.eval.scenarios;
  e["occlusion_sweep"] = c.eval.occlusion_sweep;
  e["with_scale"] = c.eval.alignment.with_scale;
  e["whole_sequence_centering"] = c.eval.alignment.whole_sequence_centering;
  e["seed"] = c.eval_seed();
  j["eval"] = e;

  io::Json p = io::Json::object();
  p["dataset_dir"] = c.paths.dataset_dir;
  p["output_dir"] = c.paths.output_dir;
  j["paths"] = p;
  return j;
}

}  // namespace lift3d::config
