#include "lift3d/training.hpp"

#include "lift3d/geometry.hpp"
#include "lift3d/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace lift3d::training {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must be in [0, 1)");
  }
  if (velocity_weight < 0.0) fail("velocity_weight must be non-negative");
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch_sequences < 1) fail("batch_sequences must be positive");
  if (frames_per_clip < 1) fail("frames_per_clip must be positive");
  if (velocity_weight > 0.0 && frames_per_clip < 2) fail("frames_per_clip must be >= 2 when velocity_weight > 0");
  if (!(occlusion >= 0.0 && occlusion <= 1.0)) fail("occlusion must be in [0, 1]");
  if (input_noise < 0.0) fail("input_noise must be non-negative");
  if (max_steps < 0) fail("max_steps must be non-negative");
  if (validate_every < 1) fail("validate_every must be positive");
  if (jobs < 1) fail("jobs must be positive");
}

Sample make_sample(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs, int start,
                   int frames) {
  const int joints = seq.joints();
  require_shape(start >= 0 && frames >= 1 && start + frames <= seq.frames(), "clip outside the sequence");
  require_shape(inputs.keypoints.frames == seq.frames() && inputs.keypoints.joints == joints,
                "inputs do not match the sequence");
  Sample s;
  s.keypoints = Track2(frames, joints);
  s.keypoints.data = inputs.keypoints.data.middleRows(start * joints, frames * joints);
  s.target = Track3(frames, joints);
  s.target.data = seq.skeleton.joints.data.middleRows(start * joints, frames * joints);
  s.presence = Presence(frames, joints);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < joints; ++j) s.presence.set(t, j, inputs.presence(start + t, j));
  }
  s.label_mask = Presence(frames, joints, true);
  s.adjacency = seq.skeleton.chain.adjacency;
  s.joint_mask.assign(joints, 1);
  s.category = seq.skeleton.category;
  return s;
}

Batch make_batch(std::vector<Sample> samples) {
  Batch b;
  for (const auto& s : samples) b.max_joints = std::max(b.max_joints, s.keypoints.joints);
  for (auto& s : samples) {
    const int joints = s.keypoints.joints;
    const int frames = s.keypoints.frames;
    if (s.joint_mask.empty()) s.joint_mask.assign(joints, 1);
    if (joints == b.max_joints) continue;
    const int jm = b.max_joints;
    Sample p;
    p.keypoints = Track2(frames, jm);
    p.target = Track3(frames, jm);
    p.presence = Presence(frames, jm, false);
    p.label_mask = Presence(frames, jm, false);
    for (int t = 0; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        p.keypoints.at(t, j) = s.keypoints.at(t, j);
        p.target.at(t, j) = s.target.at(t, j);
        p.presence.set(t, j, s.presence(t, j));
        p.label_mask.set(t, j, s.label_mask(t, j));
      }
    }
    p.adjacency = Eigen::MatrixXi::Zero(jm, jm);
    p.adjacency.topLeftCorner(joints, joints) = s.adjacency;
    p.joint_mask.assign(jm, 0);
    std::copy(s.joint_mask.begin(), s.joint_mask.end(), p.joint_mask.begin());
    p.category = s.category;
    s = std::move(p);
  }
  b.samples = std::move(samples);
  return b;
}

model::LiftInput to_lift_input(const Sample& s) {
  model::LiftInput in;
  in.keypoints = s.keypoints;
  in.presence = s.presence;
  in.joint_mask = s.joint_mask;
  in.adjacency = s.adjacency;
  return in;
}

namespace {

void check_loss_shapes(const Track3& y, const Track3& y_hat, const Presence& mask) {
  require_shape(y.frames == y_hat.frames && y.joints == y_hat.joints, "prediction and labels differ in shape");
  require_shape(mask.frames == y.frames && mask.joints == y.joints, "mask shape mismatch");
}

std::vector<int> present_joints(const Presence& mask, int t) {
  std::vector<int> idx;
  for (int j = 0; j < mask.joints; ++j) {
    if (mask(t, j)) idx.push_back(j);
  }
  return idx;
}

Mat gather(const Track3& x, int t, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = x.at(t, idx[i]);
  return out;
}

[[noreturn]] void degenerate_frame(int t, const std::string& why) {
  throw Error(ErrorKind::DegenerateFrame, "frame " + std::to_string(t) + ": " + why);
}

}  // namespace

AlignedPrediction align_prediction(const Track3& y, const Track3& y_canon, const Presence& mask) {
  check_loss_shapes(y, y_canon, mask);
  AlignedPrediction out;
  out.aligned = Track3(y.frames, y.joints);
  out.rotations.assign(y.frames, Mat3::Identity());
  out.scales.assign(y.frames, 1.0);
  for (int t = 0; t < y.frames; ++t) {
    const auto idx = present_joints(mask, t);
    if (idx.empty()) continue;
    if (idx.size() < 3) degenerate_frame(t, "fewer than 3 present joints");
    const Mat target = gather(y, t, idx);
    const Mat source = gather(y_canon, t, idx);
    geometry::AlignmentResult a;
    try {
      a = geometry::solve_procrustes(target, source, true);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateCloud) throw;
      degenerate_frame(t, e.what());
    }
    const Mat aligned = geometry::apply_alignment(a, source);
    for (std::size_t i = 0; i < idx.size(); ++i) out.aligned.at(t, idx[i]) = aligned.row(i);
    out.rotations[t] = a.rotation;
    out.scales[t] = a.scale;
  }
  return out;
}

LossValue position_loss(const Track3& y, const Track3& y_hat, const Presence& mask) {
  check_loss_shapes(y, y_hat, mask);
  LossValue v;
  for (int t = 0; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j)) continue;
      v.raw += (y.at(t, j) - y_hat.at(t, j)).norm();
      ++v.terms;
    }
  }
  v.mean = v.terms > 0 ? v.raw / v.terms : 0.0;
  return v;
}

LossValue velocity_loss(const Track3& y, const Track3& y_hat, const Presence& mask) {
  check_loss_shapes(y, y_hat, mask);
  if (y.frames < 2) throw Error(ErrorKind::TooShort, "velocity loss needs at least 2 frames");
  LossValue v;
  for (int t = 1; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      if (!mask(t, j) || !mask(t - 1, j)) continue;
      v.raw += ((y.at(t, j) - y.at(t - 1, j)) - (y_hat.at(t, j) - y_hat.at(t - 1, j))).norm();
      ++v.terms;
    }
  }
  v.mean = v.terms > 0 ? v.raw / v.terms : 0.0;
  return v;
}

LossBreakdown total_loss(const Track3& y, const Track3& y_canon, const Presence& mask, double velocity_weight,
                         bool procrustes) {
  return loss_gradient(y, y_canon, mask, velocity_weight, procrustes, AlignmentGradient::StopGradient).loss;
}

LossGradient loss_gradient(const Track3& y, const Track3& y_canon, const Presence& mask, double velocity_weight,
                           bool procrustes, AlignmentGradient mode, const std::vector<FrameAlignment>* frozen) {
  check_loss_shapes(y, y_canon, mask);
  const int frames = y.frames;
  const int joints = y.joints;
  if (frozen) require_shape(static_cast<int>(frozen->size()) == frames, "frozen alignment has the wrong length");

  struct FrameData {
    std::vector<int> idx;
    Mat source_c;
    Mat target_c;
  };
  std::vector<FrameData> fd(frames);

  LossGradient out;
  out.alignment.assign(frames, FrameAlignment{});
  Track3 y_hat = y_canon;
  if (procrustes) {
    for (int t = 0; t < frames; ++t) {
      FrameData& f = fd[t];
      f.idx = present_joints(mask, t);
      if (f.idx.empty()) continue;
      if (f.idx.size() < 3) degenerate_frame(t, "fewer than 3 present joints");
      const Mat target = gather(y, t, f.idx);
      const Mat source = gather(y_canon, t, f.idx);
      const Row3 ybar = target.colwise().mean();
      f.source_c = source.rowwise() - source.colwise().mean();
      f.target_c = target.rowwise() - ybar;
      FrameAlignment& a = out.alignment[t];
      if (frozen) {
        a = (*frozen)[t];
      } else {
        try {
          const auto r = geometry::solve_procrustes(target, source, true);
          a.rotation = r.rotation;
          a.scale = r.scale;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateCloud) throw;
          degenerate_frame(t, e.what());
        }
      }
      const Mat aligned = (a.scale * f.source_c * a.rotation).rowwise() + ybar;
      for (std::size_t i = 0; i < f.idx.size(); ++i) y_hat.at(t, f.idx[i]) = aligned.row(i);
    }
  }

  LossBreakdown& loss = out.loss;
  loss.position = position_loss(y, y_hat, mask);
  if (frames >= 2 || velocity_weight > 0.0) loss.velocity = velocity_loss(y, y_hat, mask);
  loss.total = loss.position.mean + velocity_weight * loss.velocity.mean;

  // Gradient with respect to y_hat.
  Mat g = Mat::Zero(static_cast<Eigen::Index>(frames) * joints, 3);
  if (loss.position.terms > 0) {
    const double w = 1.0 / loss.position.terms;
    for (int t = 0; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        if (!mask(t, j)) continue;
        const Row3 r = y_hat.at(t, j) - y.at(t, j);
        const double n = r.norm();
        if (n > 0.0) g.row(t * joints + j) += w * r / n;
      }
    }
  }
  if (loss.velocity.terms > 0 && velocity_weight != 0.0) {
    const double w = velocity_weight / loss.velocity.terms;
    for (int t = 1; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        if (!mask(t, j) || !mask(t - 1, j)) continue;
        const Row3 v = (y_hat.at(t, j) - y_hat.at(t - 1, j)) - (y.at(t, j) - y.at(t - 1, j));
        const double n = v.norm();
        if (n == 0.0) continue;
        g.row(t * joints + j) += w * v / n;
        g.row((t - 1) * joints + j) -= w * v / n;
      }
    }
  }

  if (!procrustes) {
    out.d_canon = std::move(g);
    return out;
  }

  out.d_canon = Mat::Zero(g.rows(), 3);
  for (int t = 0; t < frames; ++t) {
    const FrameData& f = fd[t];
    if (f.idx.empty()) continue;
    const Mat3& r = out.alignment[t].rotation;
    const double s = out.alignment[t].scale;
    Mat gf(static_cast<Eigen::Index>(f.idx.size()), 3);
    for (std::size_t i = 0; i < f.idx.size(); ++i) gf.row(i) = g.row(t * joints + f.idx[i]);
    Mat d_src = s * gf * r.transpose();
    if (mode == AlignmentGradient::FullSvd && !frozen) {
      const Mat3 d_rot = s * f.source_c.transpose() * gf;
      const double d_scale = gf.cwiseProduct(f.source_c * r).sum();
      const double norm2 = f.source_c.squaredNorm();
      const geometry::RotationSolve solve = geometry::rotation_from_covariance(f.source_c.transpose() * f.target_c);
      const Mat3 d_cov = geometry::rotation_covariance_vjp(solve, d_rot) + (d_scale / norm2) * r;
      d_src += f.target_c * d_cov.transpose() - (2.0 * s * d_scale / norm2) * f.source_c;
    }
    d_src.rowwise() -= d_src.colwise().mean();
    for (std::size_t i = 0; i < f.idx.size(); ++i) out.d_canon.row(t * joints + f.idx[i]) = d_src.row(i);
  }
  return out;
}

namespace {

Track3 as_track(const Mat& values, int frames, int joints) {
  Track3 t(frames, joints);
  t.data = values;
  return t;
}

AlignmentGradient gradient_mode(const TrainConfig& c) {
  return c.full_svd_gradient ? AlignmentGradient::FullSvd : AlignmentGradient::StopGradient;
}

}  // namespace

double sample_loss(const model::LiftingModel& model, const Sample& sample, const TrainConfig& config,
                   const std::vector<FrameAlignment>* frozen) {
  ad::Tape tape;
  const model::ParamVars p(tape, model.params, false);
  const ad::Var y = model::forward(tape, p, model, to_lift_input(sample));
  const Track3 canon = as_track(tape.value(y), sample.keypoints.frames, sample.keypoints.joints);
  return loss_gradient(sample.target, canon, sample.label_mask, config.velocity_weight, config.procrustes_loss,
                       gradient_mode(config), frozen)
      .loss.total;
}

GradientResult compute_gradients(const model::LiftingModel& model, const Batch& batch, const TrainConfig& config) {
  const int n = static_cast<int>(batch.samples.size());
  require_shape(n > 0, "empty batch");
  const int blocks = std::max(1, std::min(config.jobs, n));
  std::vector<model::ParameterSet> partial(blocks);
  GradientResult out;
  out.per_sample.resize(n);

  parallel_for(blocks, blocks, [&](int b) {
    model::ParameterSet acc = model.params.zeros_like();
    const int begin = b * n / blocks;
    const int end = (b + 1) * n / blocks;
    for (int i = begin; i < end; ++i) {
      const Sample& s = batch.samples[i];
      ad::Tape tape;
      const model::ParamVars p(tape, model.params, true);
      const ad::Var y = model::forward(tape, p, model, to_lift_input(s));
      const Track3 canon = as_track(tape.value(y), s.keypoints.frames, s.keypoints.joints);
      LossGradient lg = loss_gradient(s.target, canon, s.label_mask, config.velocity_weight, config.procrustes_loss,
                                      gradient_mode(config));
      out.per_sample[i] = lg.loss;
      tape.backward(y, lg.d_canon);
      for (std::size_t k = 0; k < acc.size(); ++k) {
        const Mat& g = tape.grad(p.vars()[k]);
        if (g.size() != 0) acc.tensors()[k].value += g;
      }
    }
    partial[b] = std::move(acc);
  });

  out.grads = std::move(partial[0]);
  for (int b = 1; b < blocks; ++b) {
    for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads.tensors()[k].value += partial[b].tensors()[k].value;
  }
  for (const auto& l : out.per_sample) out.loss += l.total;
  if (!std::isfinite(out.loss)) throw Error(ErrorKind::NonFinite, "loss is not finite");
  for (const auto& t : out.grads.tensors()) {
    if (!t.value.allFinite()) throw Error(ErrorKind::NonFinite, "gradient of '" + t.name + "' is not finite");
  }
  return out;
}

AdamState make_adam_state(const model::ParameterSet& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(model::ParameterSet& params, const model::ParameterSet& grads, AdamState& state,
                const TrainConfig& config) {
  require_shape(params.size() == grads.size() && params.size() == state.m.size(), "optimizer tensor count mismatch");
  state.step += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = config.learning_rate;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Mat& p = params.tensors()[k].value;
    const Mat& g = grads.tensors()[k].value;
    Mat& m = state.m.tensors()[k].value;
    Mat& v = state.v.tensors()[k].value;
    require_shape(p.rows() == g.rows() && p.cols() == g.cols(), "gradient shape mismatch for " + params.tensors()[k].name);
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const Mat update = (m / c1).array() / ((v / c2).array().sqrt() + config.adam_eps);
    p -= lr * (update + config.weight_decay * p);
  }
}

metrics::MetricReport validate_model(const model::LiftingModel& model,
                                     const std::vector<dataset::SequenceRecord>& sequences, int jobs) {
  metrics::EvalOptions opts;
  opts.jobs = jobs;
  metrics::Scenario noisy;
  noisy.kind = metrics::Scenario::Kind::Noisy;
  return metrics::evaluate(metrics::ModelLifter(model), sequences, noisy, opts);
}

namespace {

dataset::KeypointSequence2D augment(const dataset::SequenceRecord& seq, const TrainConfig& config, Rng& rng) {
  dataset::KeypointSequence2D in = seq.observed;
  if (config.input_noise > 0.0) {
    std::normal_distribution<double> normal(0.0, config.input_noise);
    for (int t = 0; t < in.keypoints.frames; ++t) {
      for (int j = 0; j < in.keypoints.joints; ++j) {
        if (!in.presence(t, j)) continue;
        in.keypoints.at(t, j) += Row2(normal(rng), normal(rng));
      }
    }
  }
  if (config.occlusion > 0.0) in = dataset::mask_random_joints(in, config.occlusion, draw_seed(rng));
  return in;
}

}  // namespace

TrainResult train(const TrainData& data, const model::ModelConfig& model_config, const TrainConfig& config,
                  const TrainHooks& hooks, std::optional<TrainState> resume) {
  config.validate();
  if (data.train.empty()) throw Error(ErrorKind::EmptyDataset, "training split is empty");
  const auto& val = data.validation.empty() ? data.train : data.validation;

  TrainState state;
  if (resume) {
    state = std::move(*resume);
  } else {
    state.model = model::LiftingModel::create(model_config);
    state.adam = make_adam_state(state.model.params);
    state.best_params = state.model.params;
  }
  if (state.best_params.size() == 0) state.best_params = state.model.params;

  TrainResult result;
  const int n = static_cast<int>(data.train.size());
  bool stop = config.max_steps > 0 && state.step >= config.max_steps;

  while (!stop && state.epoch < config.epochs) {
    const int epoch = state.epoch;
    Rng rng = make_stream(config.seed, "epoch/" + std::to_string(epoch));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    LossBreakdown parts;
    int counted = 0;
    for (int start = 0; start < n; start += config.batch_sequences) {
      if (config.max_steps > 0 && state.step >= config.max_steps) {
        stop = true;
        break;
      }
      std::vector<Sample> samples;
      for (int i = start; i < std::min(n, start + config.batch_sequences); ++i) {
        const auto& seq = data.train[order[i]];
        const int clip = std::min(config.frames_per_clip, seq.frames());
        std::uniform_int_distribution<int> pick(0, seq.frames() - clip);
        const int first = pick(rng);
        samples.push_back(make_sample(seq, augment(seq, config, rng), first, clip));
      }
      const Batch batch = make_batch(std::move(samples));
      GradientResult g;
      try {
        g = compute_gradients(state.model, batch, config);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFinite) throw;
        result.aborted = true;
        result.abort_reason = e.what();
        stop = true;
        break;
      }
      model::ParameterSet before = state.model.params;
      AdamState adam_before = state.adam;
      adamw_step(state.model.params, g.grads, state.adam, config);
      if (!state.model.params.all_finite()) {
        state.model.params = std::move(before);
        state.adam = std::move(adam_before);
        result.aborted = true;
        result.abort_reason = "parameters became non-finite";
        stop = true;
        break;
      }
      state.step += 1;
      const double b = static_cast<double>(batch.samples.size());
      loss_sum += g.loss / b;
      for (const auto& l : g.per_sample) {
        parts.position.raw += l.position.raw / b;
        parts.position.mean += l.position.mean / b;
        parts.velocity.raw += l.velocity.raw / b;
        parts.velocity.mean += l.velocity.mean / b;
      }
      ++counted;
    }
    if (result.aborted) break;
    state.epoch = epoch + 1;

    const bool last = stop || state.epoch >= config.epochs;
    if (counted == 0 || (state.epoch % config.validate_every != 0 && !last)) continue;
    const metrics::MetricReport report = validate_model(state.model, val, config.jobs);
    LogRecord rec;
    rec.epoch = state.epoch;
    rec.step = state.step;
    rec.train_loss = loss_sum / counted;
    rec.train_position_raw = parts.position.raw / counted;
    rec.train_position_mean = parts.position.mean / counted;
    rec.train_velocity_raw = parts.velocity.raw / counted;
    rec.train_velocity_mean = parts.velocity.mean / counted;
    rec.val_fa_mpjpe = report.fa_mpjpe;
    rec.val_sa_mpjpe = report.sa_mpjpe;
    rec.val_sa_mpve = report.sa_mpve;
    rec.lr = config.learning_rate;
    rec.procrustes = config.procrustes_loss;
    const bool is_best = state.best_val_fa_mpjpe < 0.0 || rec.val_fa_mpjpe < state.best_val_fa_mpjpe;
    if (is_best) {
      state.best_val_fa_mpjpe = rec.val_fa_mpjpe;
      state.best_params = state.model.params;
    }
    result.log.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec, state, is_best);
  }

  result.best = state.model;
  result.best.params = state.best_params;
  result.final_state = std::move(state);
  return result;
}

GradcheckConfig default_gradcheck_config() {
  GradcheckConfig c;
  c.model.feature_dim = 8;
  c.model.heads = 2;
  c.model.motion_layers = 1;
  c.model.space_layers = 1;
  c.model.window_alpha = 2;
  c.model.max_joints = 5;
  c.model.window_frames = 4;
  return c;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
}

namespace {

Sample random_sample(int frames, int joints, std::uint64_t seed) {
  Rng rng = make_stream(seed, "gradcheck/sample");
  std::normal_distribution<double> normal(0.0, 0.5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Sample s;
  s.keypoints = Track2(frames, joints);
  for (Eigen::Index i = 0; i < s.keypoints.data.size(); ++i) s.keypoints.data.data()[i] = unit(rng);
  s.target = Track3(frames, joints);
  for (Eigen::Index i = 0; i < s.target.data.size(); ++i) s.target.data.data()[i] = normal(rng);
  s.presence = Presence(frames, joints, true);
  if (frames > 1 && joints > 1) {
    s.presence.set(1, joints - 1, false);
    s.keypoints.at(1, joints - 1).setZero();
  }
  s.label_mask = Presence(frames, joints, true);
  std::vector<int> parent(joints, kinematics::kNoParent);
  for (int j = 1; j < joints; ++j) {
    std::uniform_int_distribution<int> pick(0, j - 1);
    parent[j] = pick(rng);
  }
  s.adjacency = kinematics::adjacency_from_parents(parent);
  s.joint_mask.assign(joints, 1);
  return s;
}

void finish_report(GradcheckReport& r, double tolerance) {
  std::set<std::string> failed;
  r.passed = true;
  for (auto& e : r.entries) {
    e.pass = e.rel_error < tolerance;
    r.max_rel_error = std::max(r.max_rel_error, e.rel_error);
    if (!e.pass) {
      r.passed = false;
      failed.insert(e.tensor);
    }
  }
  r.failed_tensors.assign(failed.begin(), failed.end());
}

}  // namespace

GradcheckReport gradcheck_model(const GradcheckConfig& config) {
  model::ModelConfig mc = config.model;
  mc.init_seed = config.seed;
  mc.rff_seed = config.seed;
  model::LiftingModel model = model::LiftingModel::create(mc);
  const Sample sample = random_sample(config.frames, config.joints, config.seed);

  TrainConfig tc;
  tc.velocity_weight = config.velocity_weight;
  tc.procrustes_loss = config.procrustes;
  tc.full_svd_gradient = config.mode == AlignmentGradient::FullSvd;
  tc.frames_per_clip = std::max(2, config.frames);

  Batch batch;
  batch.max_joints = config.joints;
  batch.samples.push_back(sample);
  GradientResult g = compute_gradients(model, batch, tc);

  std::optional<std::size_t> corrupt;
  if (!config.corrupt_tensor.empty()) {
    if (!model.params.contains(config.corrupt_tensor)) {
      throw Error(ErrorKind::Config, "unknown tensor '" + config.corrupt_tensor + "'");
    }
    corrupt = model.params.index_of(config.corrupt_tensor);
    g.grads.tensors()[*corrupt].value.array() += config.corrupt_amount;
  }

  // The surrogate loss freezes the alignment at the base point in stop-gradient mode.
  std::vector<FrameAlignment> base_alignment;
  const std::vector<FrameAlignment>* frozen = nullptr;
  if (config.procrustes && config.mode == AlignmentGradient::StopGradient) {
    ad::Tape tape;
    const model::ParamVars p(tape, model.params, false);
    const ad::Var y = model::forward(tape, p, model, to_lift_input(sample));
    const Track3 canon = as_track(tape.value(y), config.frames, config.joints);
    base_alignment = loss_gradient(sample.target, canon, sample.label_mask, tc.velocity_weight, true,
                                   AlignmentGradient::StopGradient)
                         .alignment;
    frozen = &base_alignment;
  }

  Rng rng = make_stream(config.seed, "gradcheck/coords");
  const int tensors = static_cast<int>(model.params.size());
  std::uniform_int_distribution<int> pick_tensor(0, tensors - 1);
  GradcheckReport report;
  for (int c = 0; c < config.coordinates; ++c) {
    const std::size_t k = (c == 0 && corrupt) ? *corrupt : static_cast<std::size_t>(pick_tensor(rng));
    Mat& value = model.params.tensors()[k].value;
    std::uniform_int_distribution<int> pick_row(0, static_cast<int>(value.rows()) - 1);
    std::uniform_int_distribution<int> pick_col(0, static_cast<int>(value.cols()) - 1);
    const int r = pick_row(rng);
    const int col = pick_col(rng);
    const double original = value(r, col);
    value(r, col) = original + config.step;
    const double plus = sample_loss(model, sample, tc, frozen);
    value(r, col) = original - config.step;
    const double minus = sample_loss(model, sample, tc, frozen);
    value(r, col) = original;

    GradcheckEntry e;
    e.tensor = model.params.tensors()[k].name;
    e.row = r;
    e.col = col;
    e.analytic = g.grads.tensors()[k].value(r, col);
    e.numeric = (plus - minus) / (2.0 * config.step);
    e.rel_error = relative_error(e.analytic, e.numeric);
    report.entries.push_back(e);
  }
  finish_report(report, config.tolerance);
  return report;
}

GradcheckReport gradcheck_ik(int coordinates, double step, double tolerance, std::uint64_t seed) {
  const dataset::SynthesizedRig rig = dataset::synthesize_random_rig(6, 5, 0.4, seed);
  Rng rng = make_stream(seed, "gradcheck/ik");
  std::normal_distribution<double> normal(0.0, 0.05);
  Track3 target = kinematics::forward_kinematics(rig.chain, rig.theta, rig.root_path);
  for (Eigen::Index i = 0; i < target.data.size(); ++i) target.data.data()[i] += normal(rng);
  kinematics::PoseAngles theta = rig.theta;
  for (Eigen::Index i = 0; i < theta.theta.data.size(); ++i) theta.theta.data.data()[i] += 2.0 * normal(rng);
  Mat root = rig.root_path;
  const double smooth = 0.1;

  const kinematics::IkGradient grad = kinematics::ik_objective_gradient(rig.chain, theta, root, target, smooth);
  const Eigen::Index n_theta = theta.theta.data.size();
  std::uniform_int_distribution<Eigen::Index> pick(0, n_theta + root.size() - 1);
  GradcheckReport report;
  for (int c = 0; c < coordinates; ++c) {
    const Eigen::Index i = pick(rng);
    const bool is_theta = i < n_theta;
    double& x = is_theta ? theta.theta.data.data()[i] : root.data()[i - n_theta];
    const double original = x;
    x = original + step;
    const double plus = kinematics::ik_objective(rig.chain, theta, root, target, smooth);
    x = original - step;
    const double minus = kinematics::ik_objective(rig.chain, theta, root, target, smooth);
    x = original;
    GradcheckEntry e;
    e.tensor = is_theta ? "theta" : "root_position";
    const Eigen::Index local = is_theta ? i : i - n_theta;
    const Eigen::Index rows = is_theta ? theta.theta.data.rows() : root.rows();
    e.row = static_cast<int>(local % rows);
    e.col = static_cast<int>(local / rows);
    e.analytic = is_theta ? grad.d_theta.data.data()[i] : grad.d_root.data()[i - n_theta];
    e.numeric = (plus - minus) / (2.0 * step);
    e.rel_error = relative_error(e.analytic, e.numeric);
    report.entries.push_back(e);
  }
  finish_report(report, tolerance);
  return report;
}

}  // namespace lift3d::training
