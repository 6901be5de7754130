#include "lift3d/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace lift3d::io {

namespace {

[[noreturn]] void format_error(const std::string& context, const std::string& what) {
  throw Error(ErrorKind::Format, context + ": " + what);
}

const Json& field(const Json& j, const char* key, const std::string& ctx) {
  if (!j.is_object()) format_error(ctx, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) format_error(ctx, std::string("missing field '") + key + "'");
  return *it;
}

template <class T>
T get(const Json& j, const char* key, const std::string& ctx) {
  const Json& v = field(j, key, ctx);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    format_error(ctx, std::string("field '") + key + "': " + e.what());
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return get<T>(j, key, ctx);
}

std::string sub(const std::string& ctx, const std::string& key) { return ctx + "." + key; }

Json matrix_json(const Mat& m) {
  Json j = Json::object();
  j["shape"] = {m.rows(), m.cols()};
  j["values"] = flatten(m);
  return j;
}

Mat matrix_from_json(const Json& j, const std::string& ctx) {
  const auto shape = get<std::vector<long>>(j, "shape", ctx);
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) format_error(ctx, "shape must be [rows, cols]");
  return unflatten(field(j, "values", ctx), shape[0], shape[1], sub(ctx, "values"));
}

Json row_json(const Mat& r) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < r.size(); ++i) a.push_back(r(i));
  return a;
}

template <int N>
Eigen::Matrix<double, 1, N> fixed_row(const Json& j, const char* key, const std::string& ctx) {
  const auto v = get<std::vector<double>>(j, key, ctx);
  if (static_cast<int>(v.size()) != N) format_error(ctx, std::string("field '") + key + "' needs " + std::to_string(N) + " values");
  Eigen::Matrix<double, 1, N> out;
  for (int i = 0; i < N; ++i) out(i) = v[i];
  return out;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

Json parse_json(const std::string& text, const std::string& context) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    format_error(context, e.what());
  }
}

Json read_json(const fs::path& path) { return parse_json(read_text(path), path.string()); }

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(1) + "\n"); }

Json flatten(const Mat& rows) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) a.push_back(rows(r, c));
  }
  return a;
}

Mat unflatten(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& context) {
  if (!j.is_array()) format_error(context, "expected an array");
  if (static_cast<Eigen::Index>(j.size()) != rows * cols) {
    format_error(context, "expected " + std::to_string(rows * cols) + " values, found " + std::to_string(j.size()));
  }
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    const Json& v = j[static_cast<std::size_t>(i)];
    if (!v.is_number()) format_error(context, "entry " + std::to_string(i) + " is not a number");
    m(i / cols, i % cols) = v.get<double>();
  }
  return m;
}

Json to_json(const geometry::Camera& c) {
  Json j = Json::object();
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(row_json(c.rotation.row(r)));
  j["rotation"] = rot;
  j["translation"] = row_json(c.translation.transpose());
  j["focal"] = c.focal_length;
  j["principal_point"] = row_json(c.principal_point.transpose());
  j["image_size"] = {c.image_size.x(), c.image_size.y()};
  return j;
}

geometry::Camera camera_from_json(const Json& j, const std::string& ctx) {
  geometry::Camera c;
  const auto rot = get<std::vector<std::vector<double>>>(j, "rotation", ctx);
  if (rot.size() != 3) format_error(ctx, "rotation must be 3x3");
  for (int r = 0; r < 3; ++r) {
    if (rot[r].size() != 3) format_error(ctx, "rotation must be 3x3");
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[r][k];
  }
  c.translation = fixed_row<3>(j, "translation", ctx).transpose();
  c.focal_length = get<double>(j, "focal", ctx);
  c.principal_point = fixed_row<2>(j, "principal_point", ctx).transpose();
  const auto size = get<std::vector<int>>(j, "image_size", ctx);
  if (size.size() != 2 || size[0] <= 0 || size[1] <= 0) format_error(ctx, "image_size must be two positive integers");
  c.image_size = Eigen::Vector2i(size[0], size[1]);
  if (!(c.focal_length > 0.0)) format_error(ctx, "focal must be positive");
  return c;
}

Json to_json(const dataset::SequenceRecord& seq) {
  const auto& sk = seq.skeleton;
  const int frames = seq.frames();
  const int joints = seq.joints();
  Json j = Json::object();
  j["format_version"] = kFormatVersion;
  j["category"] = sk.category;
  j["sequence_id"] = sk.sequence_id;
  j["fps"] = sk.fps;
  j["num_frames"] = frames;
  j["num_joints"] = joints;
  j["joint_names"] = sk.chain.joint_names;
  j["parent"] = sk.chain.parent;
  Json adj = Json::array();
  for (int r = 0; r < joints; ++r) {
    for (int c = 0; c < joints; ++c) adj.push_back(sk.chain.adjacency(r, c));
  }
  j["adjacency"] = adj;
  j["world_to_mm"] = seq.record.world_to_mm;
  Mat offsets(joints, 3);
  for (int k = 0; k < joints; ++k) offsets.row(k) = sk.chain.rest_offset[k].transpose();
  j["rest_offsets"] = flatten(offsets);
  j["joints_3d"] = flatten(sk.joints.data);
  j["keypoints_2d"] = flatten(seq.observed.keypoints.data);
  Json presence = Json::array();
  for (auto f : seq.observed.presence.flags) presence.push_back(static_cast<int>(f));
  j["presence"] = presence;
  j["camera"] = to_json(seq.observed.camera);
  j["noise_sigma_px"] = seq.observed.noise_sigma_px;
  Json norm = Json::object();
  norm["center_2d"] = row_json(seq.record.center_2d);
  norm["scale_2d"] = seq.record.scale_2d;
  norm["center_3d_mm"] = row_json(seq.record.center_3d);
  norm["scale_3d_mm"] = seq.record.scale_3d;
  j["normalization"] = norm;
  return j;
}

dataset::SequenceRecord sequence_from_json(const Json& j, const std::string& ctx) {
  const int version = get<int>(j, "format_version", ctx);
  if (version != kFormatVersion) format_error(ctx, "unsupported format_version " + std::to_string(version));
  dataset::SequenceRecord seq;
  auto& sk = seq.skeleton;
  sk.category = get<std::string>(j, "category", ctx);
  if (sk.category.empty()) format_error(ctx, "category must be non-empty");
  sk.sequence_id = get<std::string>(j, "sequence_id", ctx);
  sk.fps = get<double>(j, "fps", ctx);
  const int frames = get<int>(j, "num_frames", ctx);
  const int joints = get<int>(j, "num_joints", ctx);
  if (frames < 1 || joints < 1) format_error(ctx, "num_frames and num_joints must be positive");

  auto parent = get<std::vector<int>>(j, "parent", ctx);
  if (static_cast<int>(parent.size()) != joints) format_error(sub(ctx, "parent"), "length differs from num_joints");
  auto names = get<std::vector<std::string>>(j, "joint_names", ctx);
  if (!names.empty() && static_cast<int>(names.size()) != joints) {
    format_error(sub(ctx, "joint_names"), "length differs from num_joints");
  }
  std::vector<Vec3> offsets(joints, Vec3::Zero());
  if (j.contains("rest_offsets")) {
    const Mat o = unflatten(j["rest_offsets"], joints, 3, sub(ctx, "rest_offsets"));
    for (int k = 0; k < joints; ++k) offsets[k] = o.row(k).transpose();
  }
  for (int p : parent) {
    if (p < kinematics::kNoParent || p >= joints) format_error(sub(ctx, "parent"), "index out of range");
  }
  sk.chain.parent = parent;
  sk.chain.rest_offset = offsets;
  sk.chain.joint_names = names;
  const Mat adj = unflatten(field(j, "adjacency", ctx), joints, joints, sub(ctx, "adjacency"));
  sk.chain.adjacency = adj.cast<int>();
  if ((sk.chain.adjacency.cast<double>() - adj).cwiseAbs().maxCoeff() != 0.0) {
    format_error(sub(ctx, "adjacency"), "entries must be 0 or 1");
  }

  sk.joints = Track3(frames, joints);
  sk.joints.data = unflatten(field(j, "joints_3d", ctx), static_cast<Eigen::Index>(frames) * joints, 3,
                             sub(ctx, "joints_3d"));
  seq.observed.keypoints = Track2(frames, joints);
  seq.observed.keypoints.data = unflatten(field(j, "keypoints_2d", ctx), static_cast<Eigen::Index>(frames) * joints,
                                          2, sub(ctx, "keypoints_2d"));
  const auto presence = get<std::vector<int>>(j, "presence", ctx);
  if (static_cast<long>(presence.size()) != static_cast<long>(frames) * joints) {
    format_error(sub(ctx, "presence"), "length differs from num_frames * num_joints");
  }
  seq.observed.presence = Presence(frames, joints);
  for (std::size_t i = 0; i < presence.size(); ++i) {
    if (presence[i] != 0 && presence[i] != 1) format_error(sub(ctx, "presence"), "entries must be 0 or 1");
    seq.observed.presence.flags[i] = static_cast<std::uint8_t>(presence[i]);
  }
  seq.observed.camera = camera_from_json(field(j, "camera", ctx), sub(ctx, "camera"));
  seq.observed.noise_sigma_px = get<double>(j, "noise_sigma_px", ctx);

  seq.record.world_to_mm = get<double>(j, "world_to_mm", ctx);
  if (j.contains("normalization")) {
    const Json& n = j["normalization"];
    const std::string nctx = sub(ctx, "normalization");
    seq.record.center_2d = fixed_row<2>(n, "center_2d", nctx);
    seq.record.scale_2d = get<double>(n, "scale_2d", nctx);
    seq.record.center_3d = fixed_row<3>(n, "center_3d_mm", nctx);
    seq.record.scale_3d = get<double>(n, "scale_3d_mm", nctx);
  }
  return seq;
}

void write_sequence(const fs::path& path, const dataset::SequenceRecord& seq) { write_json(path, to_json(seq)); }

dataset::SequenceRecord read_sequence(const fs::path& path) {
  return sequence_from_json(read_json(path), path.string());
}

Json to_json(const dataset::SplitManifest& m) {
  Json j = Json::object();
  j["format_version"] = kFormatVersion;
  j["seed"] = m.seed;
  Json train = Json::object();
  for (const auto& [k, v] : m.train) train[k] = v;
  Json test = Json::object();
  for (const auto& [k, v] : m.test) test[k] = v;
  j["train"] = train;
  j["test"] = test;
  return j;
}

dataset::SplitManifest manifest_from_json(const Json& j, const std::string& ctx) {
  dataset::SplitManifest m;
  m.seed = get<std::uint64_t>(j, "seed", ctx);
  m.train = get<std::map<std::string, std::vector<std::string>>>(j, "train", ctx);
  m.test = get<std::map<std::string, std::vector<std::string>>>(j, "test", ctx);
  return m;
}

Json to_json(const model::ModelConfig& c) {
  Json j = Json::object();
  j["feature_dim"] = c.feature_dim;
  j["motion_layers"] = c.motion_layers;
  j["space_layers"] = c.space_layers;
  j["heads"] = c.heads;
  if (c.window_alpha == model::kUnboundedWindow) {
    j["window_alpha"] = "unbounded";
  } else {
    j["window_alpha"] = c.window_alpha;
  }
  j["max_joints"] = c.max_joints;
  j["window_frames"] = c.window_frames;
  j["rff_seed"] = c.rff_seed;
  j["init_seed"] = c.init_seed;
  j["temporal_embedding"] = model::to_string(c.temporal_embedding);
  j["multiplicative_window"] = c.multiplicative_window;
  return j;
}

model::ModelConfig model_config_from_json(const Json& j, const std::string& ctx) {
  model::ModelConfig c;
  c.feature_dim = get<int>(j, "feature_dim", ctx);
  c.motion_layers = get<int>(j, "motion_layers", ctx);
  c.space_layers = get<int>(j, "space_layers", ctx);
  c.heads = get<int>(j, "heads", ctx);
  const Json& alpha = field(j, "window_alpha", ctx);
  if (alpha.is_string() && alpha.get<std::string>() == "unbounded") {
    c.window_alpha = model::kUnboundedWindow;
  } else {
    c.window_alpha = get<int>(j, "window_alpha", ctx);
  }
  c.max_joints = get<int>(j, "max_joints", ctx);
  c.window_frames = get<int>(j, "window_frames", ctx);
  c.rff_seed = get<std::uint64_t>(j, "rff_seed", ctx);
  c.init_seed = get<std::uint64_t>(j, "init_seed", ctx);
  try {
    c.temporal_embedding = model::temporal_embedding_from_string(get<std::string>(j, "temporal_embedding", ctx));
  } catch (const Error& e) {
    format_error(ctx, e.what());
  }
  c.multiplicative_window = get<bool>(j, "multiplicative_window", ctx);
  try {
    c.validate();
  } catch (const Error& e) {
    format_error(ctx, e.what());
  }
  return c;
}

Json to_json(const model::ParameterSet& p) {
  Json a = Json::array();
  for (const auto& t : p.tensors()) {
    Json e = matrix_json(t.value);
    Json named = Json::object();
    named["name"] = t.name;
    named["shape"] = e["shape"];
    named["values"] = std::move(e["values"]);
    a.push_back(std::move(named));
  }
  return a;
}

model::ParameterSet parameters_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_array()) format_error(ctx, "expected an array of tensors");
  model::ParameterSet p;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string tctx = ctx + "[" + std::to_string(i) + "]";
    const auto name = get<std::string>(j[i], "name", tctx);
    if (p.contains(name)) format_error(tctx, "duplicate tensor '" + name + "'");
    p.add(name, matrix_from_json(j[i], tctx + "(" + name + ")"));
  }
  return p;
}

namespace {

void check_same_layout(const model::ParameterSet& expected, const model::ParameterSet& got, const std::string& ctx) {
  if (expected.size() != got.size()) {
    format_error(ctx, "expected " + std::to_string(expected.size()) + " tensors, found " + std::to_string(got.size()));
  }
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& e = expected.tensors()[k];
    const auto& g = got.tensors()[k];
    if (e.name != g.name || e.value.rows() != g.value.rows() || e.value.cols() != g.value.cols()) {
      format_error(ctx, "tensor '" + g.name + "' does not match the model layout (expected '" + e.name + "')");
    }
  }
}

}  // namespace

Json to_json(const Checkpoint& c) {
  Json j = Json::object();
  j["format_version"] = kFormatVersion;
  j["kind"] = "checkpoint";
  j["model_kind"] = c.model_kind;
  if (c.model_kind == kLiftingModelKind) {
    j["config"] = to_json(c.model.config);
    Json basis = Json::object();
    basis["weights"] = matrix_json(c.model.basis.weights);
    basis["offsets"] = matrix_json(c.model.basis.offsets);
    j["rff_basis"] = basis;
    j["tensors"] = to_json(c.model.params);
  }
  if (c.adam) {
    Json opt = Json::object();
    opt["type"] = "adamw";
    opt["step"] = c.adam->step;
    opt["m"] = to_json(c.adam->m);
    opt["v"] = to_json(c.adam->v);
    j["optimizer"] = opt;
  } else {
    j["optimizer"] = nullptr;
  }
  Json tr = Json::object();
  tr["epoch"] = c.epoch;
  tr["step"] = c.step;
  tr["best_val_fa_mpjpe"] = c.best_val_fa_mpjpe;
  tr["config"] = c.train_config;
  j["training"] = tr;
  if (c.best_params) j["best_tensors"] = to_json(*c.best_params);
  Json meta = Json::object();
  meta["trained_categories"] = c.trained_categories;
  meta["max_train_joints"] = c.max_train_joints;
  j["metadata"] = meta;
  return j;
}

Checkpoint checkpoint_from_json(const Json& j, const std::string& ctx) {
  const int version = get<int>(j, "format_version", ctx);
  if (version != kFormatVersion) format_error(ctx, "unsupported format_version " + std::to_string(version));
  if (get<std::string>(j, "kind", ctx) != "checkpoint") format_error(ctx, "not a checkpoint file");
  Checkpoint c;
  c.model_kind = get<std::string>(j, "model_kind", ctx);
  if (c.model_kind != kLiftingModelKind && c.model_kind != kGroundTruthStubKind) {
    format_error(ctx, "unknown model_kind '" + c.model_kind + "'");
  }
  if (c.model_kind == kLiftingModelKind) {
    c.model.config = model_config_from_json(field(j, "config", ctx), sub(ctx, "config"));
    const Json& basis = field(j, "rff_basis", ctx);
    c.model.basis.weights = matrix_from_json(field(basis, "weights", ctx), sub(ctx, "rff_basis.weights"));
    c.model.basis.offsets = matrix_from_json(field(basis, "offsets", ctx), sub(ctx, "rff_basis.offsets"));
    if (c.model.basis.weights.rows() != c.model.config.feature_dim / 2 || c.model.basis.weights.cols() != 3 ||
        c.model.basis.offsets.size() != c.model.config.feature_dim / 2) {
      format_error(sub(ctx, "rff_basis"), "shape does not match feature_dim");
    }
    c.model.params = parameters_from_json(field(j, "tensors", ctx), sub(ctx, "tensors"));
    check_same_layout(model::init_parameters(c.model.config, 0), c.model.params, sub(ctx, "tensors"));
  }
  if (j.contains("optimizer") && !j["optimizer"].is_null()) {
    const Json& opt = j["optimizer"];
    const std::string octx = sub(ctx, "optimizer");
    training::AdamState s;
    s.step = get<long>(opt, "step", octx);
    s.m = parameters_from_json(field(opt, "m", octx), sub(octx, "m"));
    s.v = parameters_from_json(field(opt, "v", octx), sub(octx, "v"));
    check_same_layout(c.model.params, s.m, sub(octx, "m"));
    check_same_layout(c.model.params, s.v, sub(octx, "v"));
    c.adam = std::move(s);
  }
  const Json& tr = field(j, "training", ctx);
  c.epoch = get<int>(tr, "epoch", sub(ctx, "training"));
  c.step = get<long>(tr, "step", sub(ctx, "training"));
  c.best_val_fa_mpjpe = get<double>(tr, "best_val_fa_mpjpe", sub(ctx, "training"));
  c.train_config = tr.contains("config") ? tr["config"] : Json::object();
  if (j.contains("best_tensors")) {
    c.best_params = parameters_from_json(j["best_tensors"], sub(ctx, "best_tensors"));
    check_same_layout(c.model.params, *c.best_params, sub(ctx, "best_tensors"));
  }
  const Json& meta = field(j, "metadata", ctx);
  c.trained_categories = get<std::vector<std::string>>(meta, "trained_categories", sub(ctx, "metadata"));
  c.max_train_joints = get<int>(meta, "max_train_joints", sub(ctx, "metadata"));
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) { write_text(path, to_json(c).dump() + "\n"); }

Checkpoint read_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json(path), path.string()); }

Json to_json(const PredictionFile& p) {
  Json j = Json::object();
  j["format_version"] = kFormatVersion;
  j["kind"] = "prediction";
  j["sequence_id"] = p.sequence_id;
  j["category"] = p.category;
  j["fps"] = p.fps;
  j["num_frames"] = p.canonical.frames;
  j["num_joints"] = p.canonical.joints;
  j["joint_names"] = p.joint_names;
  j["parent"] = p.parent;
  j["joints_3d_canonical"] = flatten(p.canonical.data);
  if (p.aligned) j["joints_3d_aligned"] = flatten(p.aligned->data);
  return j;
}

PredictionFile prediction_from_json(const Json& j, const std::string& ctx) {
  const int version = get<int>(j, "format_version", ctx);
  if (version != kFormatVersion) format_error(ctx, "unsupported format_version " + std::to_string(version));
  if (get<std::string>(j, "kind", ctx) != "prediction") format_error(ctx, "not a prediction file");
  PredictionFile p;
  p.sequence_id = get<std::string>(j, "sequence_id", ctx);
  p.category = get<std::string>(j, "category", ctx);
  p.fps = get<double>(j, "fps", ctx);
  const int frames = get<int>(j, "num_frames", ctx);
  const int joints = get<int>(j, "num_joints", ctx);
  if (frames < 1 || joints < 1) format_error(ctx, "num_frames and num_joints must be positive");
  p.joint_names = get<std::vector<std::string>>(j, "joint_names", ctx);
  p.parent = get<std::vector<int>>(j, "parent", ctx);
  const Eigen::Index rows = static_cast<Eigen::Index>(frames) * joints;
  p.canonical = Track3(frames, joints);
  p.canonical.data = unflatten(field(j, "joints_3d_canonical", ctx), rows, 3, sub(ctx, "joints_3d_canonical"));
  if (j.contains("joints_3d_aligned")) {
    Track3 a(frames, joints);
    a.data = unflatten(j["joints_3d_aligned"], rows, 3, sub(ctx, "joints_3d_aligned"));
    p.aligned = std::move(a);
  }
  return p;
}

void write_prediction(const fs::path& path, const PredictionFile& p) { write_json(path, to_json(p)); }

PredictionFile read_prediction(const fs::path& path) { return prediction_from_json(read_json(path), path.string()); }

Json to_json(const training::LogRecord& r) {
  Json j = Json::object();
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["val_fa_mpjpe"] = r.val_fa_mpjpe;
  j["val_sa_mpjpe"] = r.val_sa_mpjpe;
  j["val_sa_mpve"] = r.val_sa_mpve;
  j["lr"] = r.lr;
  j["procrustes"] = r.procrustes;
  j["train_position_raw"] = r.train_position_raw;
  j["train_position_mean"] = r.train_position_mean;
  j["train_velocity_raw"] = r.train_velocity_raw;
  j["train_velocity_mean"] = r.train_velocity_mean;
  return j;
}

training::LogRecord log_record_from_json(const Json& j, const std::string& ctx) {
  training::LogRecord r;
  r.epoch = get<int>(j, "epoch", ctx);
  r.step = get<long>(j, "step", ctx);
  r.train_loss = get<double>(j, "train_loss", ctx);
  r.val_fa_mpjpe = get<double>(j, "val_fa_mpjpe", ctx);
  r.val_sa_mpjpe = get<double>(j, "val_sa_mpjpe", ctx);
  r.val_sa_mpve = get<double>(j, "val_sa_mpve", ctx);
  r.lr = get<double>(j, "lr", ctx);
  r.procrustes = get_or<bool>(j, "procrustes", true, ctx);
  r.train_position_raw = get_or<double>(j, "train_position_raw", 0.0, ctx);
  r.train_position_mean = get_or<double>(j, "train_position_mean", 0.0, ctx);
  r.train_velocity_raw = get_or<double>(j, "train_velocity_raw", 0.0, ctx);
  r.train_velocity_mean = get_or<double>(j, "train_velocity_mean", 0.0, ctx);
  return r;
}

std::vector<training::LogRecord> read_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<training::LogRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(n);
    out.push_back(log_record_from_json(parse_json(line, ctx), ctx));
  }
  return out;
}

Json to_json(const metrics::MetricReport& r) {
  Json j = Json::object();
  j["scenario"] = r.scenario;
  j["fa_mpjpe"] = r.fa_mpjpe;
  j["sa_mpjpe"] = r.sa_mpjpe;
  j["sa_mpve"] = r.sa_mpve;
  j["units"] = {{"fa_mpjpe", "mm"}, {"sa_mpjpe", "mm"}, {"sa_mpve", "mm/frame"}};
  j["counts"] = {{"sequences", r.sequence_count}, {"frames", r.frame_count}};
  Json cats = Json::object();
  for (const auto& [name, c] : r.per_category) {
    cats[name] = {{"sequences", c.sequences}, {"fa_mpjpe", c.fa_mpjpe}, {"sa_mpjpe", c.sa_mpjpe}, {"sa_mpve", c.sa_mpve}};
  }
  j["per_category"] = cats;
  Json seqs = Json::array();
  for (const auto& s : r.per_sequence) {
    seqs.push_back({{"sequence_id", s.sequence_id},
                    {"category", s.category},
                    {"frames", s.frames},
                    {"joints", s.joints},
                    {"fa_mpjpe", s.fa_mpjpe},
                    {"sa_mpjpe", s.sa_mpjpe},
                    {"sa_mpve", s.sa_mpve}});
  }
  j["per_sequence"] = seqs;
  return j;
}

metrics::MetricReport report_from_json(const Json& j, const std::string& ctx) {
  metrics::MetricReport r;
  r.scenario = get<std::string>(j, "scenario", ctx);
  r.fa_mpjpe = get<double>(j, "fa_mpjpe", ctx);
  r.sa_mpjpe = get<double>(j, "sa_mpjpe", ctx);
  r.sa_mpve = get<double>(j, "sa_mpve", ctx);
  const Json& counts = field(j, "counts", ctx);
  r.sequence_count = get<int>(counts, "sequences", sub(ctx, "counts"));
  r.frame_count = get<int>(counts, "frames", sub(ctx, "counts"));
  const Json& cats = field(j, "per_category", ctx);
  for (auto it = cats.begin(); it != cats.end(); ++it) {
    const std::string cctx = sub(ctx, "per_category." + it.key());
    metrics::CategoryMetrics c;
    c.sequences = get<int>(it.value(), "sequences", cctx);
    c.fa_mpjpe = get<double>(it.value(), "fa_mpjpe", cctx);
    c.sa_mpjpe = get<double>(it.value(), "sa_mpjpe", cctx);
    c.sa_mpve = get<double>(it.value(), "sa_mpve", cctx);
    r.per_category[it.key()] = c;
  }
  const Json& seqs = field(j, "per_sequence", ctx);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::string sctx = ctx + ".per_sequence[" + std::to_string(i) + "]";
    metrics::SequenceMetrics s;
    s.sequence_id = get<std::string>(seqs[i], "sequence_id", sctx);
    s.category = get<std::string>(seqs[i], "category", sctx);
    s.frames = get<int>(seqs[i], "frames", sctx);
    s.joints = get<int>(seqs[i], "joints", sctx);
    s.fa_mpjpe = get<double>(seqs[i], "fa_mpjpe", sctx);
    s.sa_mpjpe = get<double>(seqs[i], "sa_mpjpe", sctx);
    s.sa_mpve = get<double>(seqs[i], "sa_mpve", sctx);
    r.per_sequence.push_back(s);
  }
  return r;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string report_csv(const metrics::MetricReport& r) {
  std::ostringstream os;
  os << "sequence_id,category,frames,joints,fa_mpjpe_mm,sa_mpjpe_mm,sa_mpve_mm\n";
  for (const auto& s : r.per_sequence) {
    os << s.sequence_id << ',' << s.category << ',' << s.frames << ',' << s.joints << ',' << num(s.fa_mpjpe) << ','
       << num(s.sa_mpjpe) << ',' << num(s.sa_mpve) << '\n';
  }
  return os.str();
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "occlusion,fa_mpjpe_mm,sa_mpjpe_mm,sa_mpve_mm\n";
  for (const auto& p : curve) {
    os << num(p.fraction) << ',' << num(p.report.fa_mpjpe) << ',' << num(p.report.sa_mpjpe) << ','
       << num(p.report.sa_mpve) << '\n';
  }
  return os.str();
}

std::string curve_svg(const std::vector<CurvePoint>& curve) {
  const double w = 480, h = 320, left = 60, right = 20, top = 20, bottom = 50;
  double x_max = 0.0, y_max = 0.0;
  for (const auto& p : curve) {
    x_max = std::max(x_max, p.fraction);
    y_max = std::max({y_max, p.report.fa_mpjpe, p.report.sa_mpjpe});
  }
  if (x_max <= 0.0) x_max = 1.0;
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.1;
  auto px = [&](double x) { return left + (w - left - right) * x / x_max; };
  auto py = [&](double y) { return h - bottom - (h - top - bottom) * y / y_max; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (w + left) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << "occluded fraction</text>\n";
  os << "<text x=\"14\" y=\"" << (h - bottom + top) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
     << "transform=\"rotate(-90 14 " << (h - bottom + top) / 2 << ")\">error (mm)</text>\n";
  for (const auto& p : curve) {
    os << "<text x=\"" << px(p.fraction) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" "
       << "font-size=\"10\">" << p.fraction << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = y_max * k / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << v
       << "</text>\n";
  }
  auto series = [&](const char* colour, const char* name, double metrics::MetricReport::*value, int slot) {
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve) os << px(p.fraction) << ',' << py(p.report.*value) << ' ';
    os << "\"/>\n";
    for (const auto& p : curve) {
      os << "<circle cx=\"" << px(p.fraction) << "\" cy=\"" << py(p.report.*value) << "\" r=\"3\" fill=\"" << colour
         << "\"/>\n";
    }
    os << "<text x=\"" << left + 10 << "\" y=\"" << top + 14 * (slot + 1) << "\" font-size=\"11\" fill=\"" << colour
       << "\">" << name << "</text>\n";
  };
  series("#1f77b4", "FA-MPJPE", &metrics::MetricReport::fa_mpjpe, 0);
  series("#d62728", "SA-MPJPE", &metrics::MetricReport::sa_mpjpe, 1);
  os << "</svg>\n";
  return os.str();
}

}  // namespace lift3d::io
