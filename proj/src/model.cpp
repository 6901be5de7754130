#include "lift3d/model.hpp"

#include <cmath>
#include <numbers>

namespace lift3d::model {

std::string to_string(TemporalEmbedding e) {
  switch (e) {
    case TemporalEmbedding::AnalyticalRff: return "analytical_rff";
    case TemporalEmbedding::Learned: return "learned";
    case TemporalEmbedding::None: return "none";
  }
  return "analytical_rff";
}

TemporalEmbedding temporal_embedding_from_string(const std::string& s) {
  if (s == "analytical_rff") return TemporalEmbedding::AnalyticalRff;
  if (s == "learned") return TemporalEmbedding::Learned;
  if (s == "none") return TemporalEmbedding::None;
  throw Error(ErrorKind::Config, "unknown temporal_embedding '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
  if (feature_dim <= 0 || feature_dim % 2 != 0) fail("feature_dim must be a positive even integer");
  if (heads <= 0 || feature_dim % heads != 0) fail("heads must divide feature_dim");
  if (motion_layers < 1 || space_layers < 1) fail("layer counts must be positive");
  if (window_alpha < 0 && window_alpha != kUnboundedWindow) fail("window_alpha must be >= 0 or unbounded");
  if (max_joints < 1) fail("max_joints must be positive");
  if (window_frames < 1) fail("window_frames must be positive");
}

RffBasis RffBasis::sample(int feature_dim, std::uint64_t seed) {
  Rng rng = make_stream(seed, "rff");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0 / (2.0 * std::numbers::pi));
  RffBasis b;
  const int half = feature_dim / 2;
  b.weights.resize(half, 3);
  for (int r = 0; r < half; ++r) {
    for (int c = 0; c < 3; ++c) b.weights(r, c) = normal(rng);
  }
  b.offsets.resize(half);
  for (int r = 0; r < half; ++r) b.offsets[r] = uniform(rng);
  return b;
}

Mat rff_encode(const Mat& points, const RffBasis& basis) {
  require_shape(points.cols() == 3, "rff inputs must be n x 3");
  const Eigen::Index half = basis.weights.rows();
  const double s = std::sqrt(2.0 / static_cast<double>(2 * half));
  Mat proj = points * basis.weights.transpose();
  proj.rowwise() += basis.offsets.transpose();
  Mat out(points.rows(), 2 * half);
  out.leftCols(half) = s * proj.array().sin().matrix();
  out.rightCols(half) = s * proj.array().cos().matrix();
  return out;
}

void ParameterSet::add(std::string name, Mat value) {
  if (index_.count(name)) throw Error(ErrorKind::Format, "duplicate tensor " + name);
  index_[name] = tensors_.size();
  tensors_.push_back({std::move(name), std::move(value)});
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::Format, "unknown tensor " + name);
  return it->second;
}

Mat& ParameterSet::at(const std::string& name) { return tensors_[index_of(name)].value; }
const Mat& ParameterSet::at(const std::string& name) const { return tensors_[index_of(name)].value; }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& t : tensors_) out.add(t.name, Mat::Zero(t.value.rows(), t.value.cols()));
  return out;
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

bool ParameterSet::operator==(const ParameterSet& o) const {
  if (tensors_.size() != o.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = o.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    if (a.value != b.value) return false;
  }
  return true;
}

namespace {

std::string layer_name(const char* block, int layer, const char* leaf) {
  return std::string(block) + "." + std::to_string(layer) + "." + leaf;
}

}  // namespace

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_stream(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = config.feature_dim;
  ParameterSet p;
  auto weight = [&](const std::string& name, int rows, int cols) {
    Mat w(rows, cols);
    const double s = 1.0 / std::sqrt(static_cast<double>(rows));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = s * normal(rng);
    p.add(name, std::move(w));
  };
  auto constant = [&](const std::string& name, int cols, double v) { p.add(name, Mat::Constant(1, cols, v)); };

  for (int l = 0; l < config.motion_layers; ++l) {
    for (const char* w : {"wq", "wk", "wv", "wp"}) weight(layer_name("motion", l, w), d, d);
    constant(layer_name("motion", l, "ln_gain"), d, 1.0);
    constant(layer_name("motion", l, "ln_bias"), d, 0.0);
  }
  for (int l = 0; l < config.space_layers; ++l) {
    for (const char* w : {"local.wq", "local.wk", "local.wv", "local.wo", "global.wq", "global.wk", "global.wv",
                          "global.wo"}) {
      weight(layer_name("space", l, w), d, d);
    }
    weight(layer_name("space", l, "mlp.w1"), 2 * d, d);
    constant(layer_name("space", l, "mlp.b1"), d, 0.0);
    weight(layer_name("space", l, "mlp.w2"), d, d);
    constant(layer_name("space", l, "mlp.b2"), d, 0.0);
    constant(layer_name("space", l, "ln_gain"), d, 1.0);
    constant(layer_name("space", l, "ln_bias"), d, 0.0);
  }
  weight("decoder.w1", d, d);
  constant("decoder.b1", d, 0.0);
  weight("decoder.w2", d, 3);
  constant("decoder.b2", 3, 0.0);
  if (config.temporal_embedding == TemporalEmbedding::Learned) {
    Mat table(config.window_frames, d);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = 0.02 * normal(rng);
    p.add("temporal_embedding", std::move(table));
  }
  return p;
}

LiftingModel LiftingModel::create(const ModelConfig& config) {
  config.validate();
  return LiftingModel{config, RffBasis::sample(config.feature_dim, config.rff_seed),
                      init_parameters(config, config.init_seed)};
}

std::vector<std::uint8_t> build_joint_mask(const std::vector<bool>& present, int max_joints) {
  if (static_cast<int>(present.size()) > max_joints) {
    throw Error(ErrorKind::TooManyJoints, std::to_string(present.size()) + " joints exceed max_joints " +
                                              std::to_string(max_joints));
  }
  std::vector<std::uint8_t> mask(max_joints, 0);
  for (std::size_t i = 0; i < present.size(); ++i) mask[i] = present[i] ? 1 : 0;
  return mask;
}

Mat build_window_mask(int frames, int alpha) {
  Mat z(frames, frames);
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < frames; ++i) {
      z(t, i) = (alpha == kUnboundedWindow || std::abs(t - i) <= alpha) ? 1.0 : 0.0;
    }
  }
  return z;
}

Vec TokenLayout::row_mask() const {
  Vec m(frames * joints);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < joints; ++j) m[t * joints + j] = joint_mask[j] ? 1.0 : 0.0;
  }
  return m;
}

std::shared_ptr<const ad::AttentionPattern> TokenLayout::motion_pattern() const {
  auto pattern = std::make_shared<ad::AttentionPattern>();
  pattern->multiplicative = multiplicative_window;
  const Mat z = build_window_mask(frames, window_alpha);
  for (int j = 0; j < joints; ++j) {
    if (!joint_mask[j]) continue;
    ad::AttentionGroup g;
    g.tokens.resize(frames);
    g.allowed = Mat::Zero(frames, frames);
    for (int t = 0; t < frames; ++t) {
      g.tokens[t] = t * joints + j;
      if (presence(t, j)) g.allowed.col(t).setOnes();
    }
    g.gate = z;
    pattern->groups.push_back(std::move(g));
  }
  return pattern;
}

namespace {

std::shared_ptr<const ad::AttentionPattern> space_pattern(const TokenLayout& layout, bool use_adjacency) {
  auto pattern = std::make_shared<ad::AttentionPattern>();
  std::vector<int> structural;
  for (int j = 0; j < layout.joints; ++j) {
    if (layout.joint_mask[j]) structural.push_back(j);
  }
  const int n = static_cast<int>(structural.size());
  for (int t = 0; t < layout.frames; ++t) {
    ad::AttentionGroup g;
    g.tokens.resize(n);
    g.allowed = Mat::Zero(n, n);
    g.gate = Mat::Ones(n, n);
    for (int a = 0; a < n; ++a) {
      g.tokens[a] = t * layout.joints + structural[a];
      for (int b = 0; b < n; ++b) {
        if (!layout.presence(t, structural[b])) continue;
        const bool linked = a == b || layout.adjacency(structural[a], structural[b]) != 0;
        if (!use_adjacency || linked) g.allowed(a, b) = 1.0;
      }
    }
    pattern->groups.push_back(std::move(g));
  }
  return pattern;
}

}  // namespace

std::shared_ptr<const ad::AttentionPattern> TokenLayout::space_local_pattern() const {
  return space_pattern(*this, true);
}

std::shared_ptr<const ad::AttentionPattern> TokenLayout::space_global_pattern() const {
  return space_pattern(*this, false);
}

ParamVars::ParamVars(ad::Tape& tape, const ParameterSet& params, bool trainable) : params_(&params) {
  vars_.reserve(params.size());
  for (const auto& t : params.tensors()) vars_.push_back(trainable ? tape.parameter(t.value) : tape.constant(t.value));
}

ad::Var ParamVars::operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }

void validate_input(const ModelConfig& config, const LiftInput& input) {
  const int frames = input.keypoints.frames;
  const int joints = input.keypoints.joints;
  if (joints > config.max_joints) {
    throw Error(ErrorKind::TooManyJoints,
                std::to_string(joints) + " joints exceed max_joints " + std::to_string(config.max_joints));
  }
  require_shape(frames >= 1 && joints >= 1, "empty keypoint sequence");
  require_shape(input.presence.frames == frames && input.presence.joints == joints, "presence shape mismatch");
  require_shape(input.adjacency.rows() == joints && input.adjacency.cols() == joints, "adjacency shape mismatch");
  require_shape(input.joint_mask.empty() || static_cast<int>(input.joint_mask.size()) == joints,
                "joint mask length mismatch");
  if (!input.keypoints.data.allFinite()) throw Error(ErrorKind::NonFinite, "keypoints contain NaN/Inf");
}

TokenLayout make_layout(const ModelConfig& config, const LiftInput& input) {
  TokenLayout layout;
  layout.frames = input.keypoints.frames;
  layout.joints = input.keypoints.joints;
  layout.joint_mask = input.joint_mask.empty() ? std::vector<std::uint8_t>(layout.joints, 1) : input.joint_mask;
  layout.presence = input.presence;
  for (int t = 0; t < layout.frames; ++t) {
    for (int j = 0; j < layout.joints; ++j) {
      if (!layout.joint_mask[j]) layout.presence.set(t, j, false);
    }
  }
  layout.adjacency = input.adjacency;
  layout.window_alpha = config.window_alpha;
  layout.multiplicative_window = config.multiplicative_window;
  return layout;
}

ad::Var input_features(ad::Tape& tape, const ParamVars& p, const LiftingModel& model, const LiftInput& input,
                       const TokenLayout& layout) {
  const ModelConfig& cfg = model.config;
  const int n = layout.frames * layout.joints;
  const double time_den = cfg.window_frames > 1 ? static_cast<double>(cfg.window_frames - 1) : 1.0;
  Mat points = Mat::Zero(n, 3);
  std::vector<int> time_index(n, -1);
  for (int t = 0; t < layout.frames; ++t) {
    const int tt = t + input.time_offset;
    for (int j = 0; j < layout.joints; ++j) {
      const int r = t * layout.joints + j;
      points(r, 0) = input.keypoints.at(t, j)(0);
      points(r, 1) = input.keypoints.at(t, j)(1);
      if (cfg.temporal_embedding == TemporalEmbedding::AnalyticalRff) points(r, 2) = tt / time_den;
      if (layout.presence(t, j)) time_index[r] = std::clamp(tt, 0, cfg.window_frames - 1);
    }
  }
  Mat features = rff_encode(points, model.basis);
  for (int r = 0; r < n; ++r) {
    if (time_index[r] < 0) features.row(r).setZero();
  }
  ad::Var x = tape.constant(std::move(features));
  if (cfg.temporal_embedding == TemporalEmbedding::Learned) {
    x = tape.add_gathered_rows(x, p["temporal_embedding"], std::move(time_index));
  }
  return x;
}

ad::Var windowed_mhsa(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, int layer, ad::Var x,
                      const TokenLayout& layout, ad::Var* attention_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.feature_dim) / config.heads);
  const ad::Var q = tape.matmul(x, p[layer_name("motion", layer, "wq")]);
  const ad::Var k = tape.matmul(x, p[layer_name("motion", layer, "wk")]);
  const ad::Var v = tape.matmul(x, p[layer_name("motion", layer, "wv")]);
  const ad::Var att = tape.attention(q, k, v, layout.motion_pattern(), config.heads, scale);
  if (attention_out) *attention_out = att;
  const ad::Var proj = tape.matmul(att, p[layer_name("motion", layer, "wp")]);
  const ad::Var normed = tape.layer_norm(tape.add(x, proj), p[layer_name("motion", layer, "ln_gain")],
                                         p[layer_name("motion", layer, "ln_bias")]);
  return tape.scale_rows(normed, layout.row_mask());
}

ad::Var motion_encoder(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, ad::Var x,
                       const TokenLayout& layout) {
  for (int l = 0; l < config.motion_layers; ++l) x = windowed_mhsa(tape, p, config, l, x, layout);
  return x;
}

ad::Var space_encoder_layer(ad::Tape& tape, const ParamVars& p, const ModelConfig& config, int layer, ad::Var x,
                            const TokenLayout& layout, SpaceStreams* streams) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.feature_dim) / config.heads);
  auto stream = [&](const char* prefix, std::shared_ptr<const ad::AttentionPattern> pattern) {
    const std::string base = std::string(prefix) + ".";
    const ad::Var q = tape.matmul(x, p[layer_name("space", layer, (base + "wq").c_str())]);
    const ad::Var k = tape.matmul(x, p[layer_name("space", layer, (base + "wk").c_str())]);
    const ad::Var v = tape.matmul(x, p[layer_name("space", layer, (base + "wv").c_str())]);
    const ad::Var att = tape.attention(q, k, v, std::move(pattern), config.heads, scale);
    return tape.matmul(att, p[layer_name("space", layer, (base + "wo").c_str())]);
  };
  const ad::Var local = stream("local", layout.space_local_pattern());
  const ad::Var global = stream("global", layout.space_global_pattern());
  if (streams) *streams = {local, global};
  const ad::Var both = tape.concat_cols(local, global);
  const ad::Var hidden =
      tape.gelu(tape.add_row(tape.matmul(both, p[layer_name("space", layer, "mlp.w1")]),
                             p[layer_name("space", layer, "mlp.b1")]));
  const ad::Var fused = tape.add_row(tape.matmul(hidden, p[layer_name("space", layer, "mlp.w2")]),
                                     p[layer_name("space", layer, "mlp.b2")]);
  const ad::Var normed = tape.layer_norm(tape.add(x, fused), p[layer_name("space", layer, "ln_gain")],
                                         p[layer_name("space", layer, "ln_bias")]);
  return tape.scale_rows(normed, layout.row_mask());
}

ad::Var decode_canonical(ad::Tape& tape, const ParamVars& p, ad::Var x, const TokenLayout& layout) {
  const ad::Var hidden = tape.gelu(tape.add_row(tape.matmul(x, p["decoder.w1"]), p["decoder.b1"]));
  const ad::Var out = tape.add_row(tape.matmul(hidden, p["decoder.w2"]), p["decoder.b2"]);
  return tape.scale_rows(out, layout.row_mask());
}

ad::Var forward(ad::Tape& tape, const ParamVars& p, const LiftingModel& model, const LiftInput& input) {
  validate_input(model.config, input);
  const TokenLayout layout = make_layout(model.config, input);
  ad::Var x = input_features(tape, p, model, input, layout);
  x = motion_encoder(tape, p, model.config, x, layout);
  for (int l = 0; l < model.config.space_layers; ++l) x = space_encoder_layer(tape, p, model.config, l, x, layout);
  return decode_canonical(tape, p, x, layout);
}

namespace {

LiftInput slice_frames(const LiftInput& in, int start, int count) {
  LiftInput out;
  const int joints = in.keypoints.joints;
  out.keypoints = Track2(count, joints);
  out.keypoints.data = in.keypoints.data.middleRows(start * joints, count * joints);
  out.presence = Presence(count, joints);
  for (int t = 0; t < count; ++t) {
    for (int j = 0; j < joints; ++j) out.presence.set(t, j, in.presence(start + t, j));
  }
  out.joint_mask = in.joint_mask;
  out.adjacency = in.adjacency;
  out.time_offset = in.time_offset;
  return out;
}

}  // namespace

Track3 lift(const LiftingModel& model, const LiftInput& input) {
  validate_input(model.config, input);
  const int frames = input.keypoints.frames;
  const int joints = input.keypoints.joints;
  const int window = model.config.window_frames;
  Track3 out(frames, joints);
  int covered = 0;
  while (covered < frames) {
    const int start = std::max(0, std::min(covered, frames - window));
    const int count = std::min(window, frames - start);
    const LiftInput chunk = slice_frames(input, start, count);
    ad::Tape tape;
    const ParamVars p(tape, model.params, false);
    const ad::Var y = forward(tape, p, model, chunk);
    const Mat& values = tape.value(y);
    for (int t = covered; t < start + count; ++t) {
      out.frame(t) = values.middleRows((t - start) * joints, joints);
    }
    covered = start + count;
  }
  return out;
}

}  // namespace lift3d::model
