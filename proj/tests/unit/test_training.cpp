#include "lift3d/training.hpp"
#include "support.hpp"
#include "toy.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace lift3d;
using namespace lift3d::training;
using lift3d::test::max_abs_diff;
using lift3d::test::random_rotation;
using lift3d::test::random_track3;
using lift3d::test::toy_record;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.feature_dim = 16;
  c.heads = 2;
  c.motion_layers = 1;
  c.space_layers = 1;
  c.window_alpha = 2;
  c.max_joints = 8;
  c.window_frames = 8;
  c.rff_seed = 1;
  c.init_seed = 2;
  return c;
}

TrainConfig quick_train(int steps) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 100000;
  c.max_steps = steps;
  c.batch_sequences = 2;
  c.frames_per_clip = 8;
  c.validate_every = 5;
  c.seed = 3;
  return c;
}

TrainData toy_data(double jitter = 0.0) {
  TrainData d;
  d.train = {toy_record("t_000", "t", 5, 8, 11, 0.0, jitter), toy_record("t_001", "t", 5, 8, 12, 0.0, jitter)};
  return d;
}

Track3 per_frame_similarity(const Track3& y, Rng& rng) {
  Track3 out = y;
  for (int t = 0; t < y.frames; ++t) {
    out.frame(t) = (0.5 + t) * y.frame(t) * random_rotation(rng);
    out.frame(t).rowwise() += Row3(t, -2.0 * t, 1.0);
  }
  return out;
}

// Central differences of a scalar function of the canonical prediction.
template <typename F>
Mat numeric_gradient(const Track3& x, F f, double h = 1e-6) {
  Mat g(x.data.rows(), 3);
  Track3 probe = x;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double v = probe.data.data()[i];
    probe.data.data()[i] = v + h;
    const double plus = f(probe);
    probe.data.data()[i] = v - h;
    const double minus = f(probe);
    probe.data.data()[i] = v;
    g.data()[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

Sample sample_from(const dataset::SequenceRecord& rec) { return make_sample(rec, rec.observed, 0, rec.frames()); }

}  // namespace

TEST(Align, IdentityPrediction) {
  Rng rng(1);
  const Track3 y = random_track3(rng, 4, 6);
  const AlignedPrediction a = align_prediction(y, y, metrics::full_mask(4, 6));
  EXPECT_LT(max_abs_diff(a.aligned.data, y.data), 1e-9);
  for (int t = 0; t < 4; ++t) {
    EXPECT_LT(max_abs_diff(a.rotations[t], Mat3::Identity()), 1e-9);
    EXPECT_NEAR(a.scales[t], 1.0, 1e-9);
  }
}

TEST(Align, PlantedPerFrameRotations) {
  Rng rng(2);
  const Track3 y = random_track3(rng, 5, 7);
  const Track3 canon = per_frame_similarity(y, rng);
  const AlignedPrediction a = align_prediction(y, canon, metrics::full_mask(5, 7));
  EXPECT_LT(max_abs_diff(a.aligned.data, y.data), 1e-6);
  for (const Mat3& r : a.rotations) EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
}

TEST(Align, PureScale) {
  Rng rng(3);
  const Track3 y = random_track3(rng, 3, 5);
  Track3 canon = y;
  canon.data *= 2.0;
  const AlignedPrediction a = align_prediction(y, canon, metrics::full_mask(3, 5));
  for (double s : a.scales) EXPECT_NEAR(s, 0.5, 1e-9);
  EXPECT_LT(max_abs_diff(a.aligned.data, y.data), 1e-9);
}

TEST(Align, DegenerateFrame) {
  Rng rng(4);
  const Track3 y = random_track3(rng, 3, 4);
  Presence mask(3, 4);
  mask.set(2, 0, false);
  mask.set(2, 1, false);
  try {
    align_prediction(y, y, mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateFrame);
    EXPECT_NE(e.detail().find("frame 2"), std::string::npos);
  }
}

TEST(Loss, PositionExamples) {
  Track3 y(2, 3), p(2, 3);
  const Presence mask(2, 3);
  EXPECT_EQ(position_loss(y, y, mask).raw, 0.0);
  p.at(1, 2) << 3.0, 4.0, 0.0;
  const LossValue v = position_loss(y, p, mask);
  EXPECT_DOUBLE_EQ(v.raw, 5.0);
  EXPECT_EQ(v.terms, 6);
  EXPECT_DOUBLE_EQ(v.mean, 5.0 / 6.0);
}

TEST(Loss, MatchesDoubleLoopOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Track3 y = random_track3(rng, 4, 5), p = random_track3(rng, 4, 5);
    Presence mask(4, 5);
    mask.set(trial % 4, trial % 5, false);
    double pos = 0.0, vel = 0.0;
    for (int t = 0; t < 4; ++t)
      for (int j = 0; j < 5; ++j) {
        if (!mask(t, j)) continue;
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += (y.at(t, j)[c] - p.at(t, j)[c]) * (y.at(t, j)[c] - p.at(t, j)[c]);
        pos += std::sqrt(s);
        if (t == 0 || !mask(t - 1, j)) continue;
        s = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = (y.at(t, j)[c] - y.at(t - 1, j)[c]) - (p.at(t, j)[c] - p.at(t - 1, j)[c]);
          s += d * d;
        }
        vel += std::sqrt(s);
      }
    EXPECT_NEAR(position_loss(y, p, mask).raw, pos, 1e-9);
    EXPECT_NEAR(velocity_loss(y, p, mask).raw, vel, 1e-9);
  }
}

TEST(Loss, VelocityExamples) {
  Rng rng(6);
  const Track3 y = random_track3(rng, 5, 4);
  Track3 shifted = y;
  shifted.data.rowwise() += Row3(1.0, 2.0, 3.0);
  EXPECT_LT(velocity_loss(y, shifted, Presence(5, 4)).raw, 1e-12);
  EXPECT_EQ(velocity_loss(y, y, Presence(5, 4)).raw, 0.0);

  Track3 a(2, 1), b(2, 1);
  a.at(1, 0) << 1.0, 2.0, 2.0;
  b.at(0, 0) << 0.0, 0.0, 1.0;
  // (1,2,2) - (0,0,-1) = (1,2,3)
  EXPECT_DOUBLE_EQ(velocity_loss(a, b, Presence(2, 1)).raw, std::sqrt(14.0));
  try {
    velocity_loss(Track3(1, 3), Track3(1, 3), Presence(1, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooShort);
  }
}

TEST(Loss, TotalExamples) {
  Rng rng(7);
  const Track3 y = random_track3(rng, 4, 6);
  const Presence mask(4, 6);
  for (bool procrustes : {true, false}) EXPECT_LT(total_loss(y, y, mask, 5000.0, procrustes).total, 1e-9);
  const Track3 p = random_track3(rng, 4, 6);
  const LossBreakdown l0 = total_loss(y, p, mask, 0.0, false);
  EXPECT_EQ(l0.total, position_loss(y, p, mask).mean);
  const LossBreakdown l = total_loss(y, p, mask, 7.0, false);
  EXPECT_DOUBLE_EQ(l.total, l.position.mean + 7.0 * l.velocity.mean);
}

TEST(Loss, ProcrustesAbsorbsPerFrameRotation) {
  Rng rng(8);
  const Track3 y = random_track3(rng, 5, 6);
  Track3 noisy = y;
  noisy.data += random_track3(rng, 5, 6, 0.05).data;
  const Track3 rotated = per_frame_similarity(noisy, rng);
  const Presence mask(5, 6);
  const LossBreakdown on = total_loss(y, rotated, mask, 5000.0, true);
  const LossBreakdown off = total_loss(y, rotated, mask, 5000.0, false);
  EXPECT_LT(on.total, off.total);
  EXPECT_NEAR(on.position.mean, total_loss(y, noisy, mask, 0.0, true).position.mean, 1e-6);
  EXPECT_GE(on.total, 0.0);
}

TEST(Loss, PaddedJointsContributeNothing) {
  Rng rng(9);
  const Track3 y = random_track3(rng, 3, 5), p = random_track3(rng, 3, 5);
  Track3 yp(3, 7), pp(3, 7);
  Presence mask(3, 7, false);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 5; ++j) {
      yp.at(t, j) = y.at(t, j);
      pp.at(t, j) = p.at(t, j);
      mask.set(t, j, true);
    }
  pp.at(1, 6) << 9.0, 9.0, 9.0;
  for (bool procrustes : {true, false}) {
    const LossGradient a = loss_gradient(y, p, Presence(3, 5), 50.0, procrustes, AlignmentGradient::FullSvd);
    const LossGradient b = loss_gradient(yp, pp, mask, 50.0, procrustes, AlignmentGradient::FullSvd);
    EXPECT_NEAR(a.loss.total, b.loss.total, 1e-12);
    for (int t = 0; t < 3; ++t) {
      for (int j = 0; j < 5; ++j) EXPECT_LT((a.d_canon.row(t * 5 + j) - b.d_canon.row(t * 7 + j)).norm(), 1e-12);
      for (int j = 5; j < 7; ++j) EXPECT_EQ(Row3(b.d_canon.row(t * 7 + j)), Row3::Zero());
    }
  }
}

TEST(LossGradient, FullSvdMatchesFiniteDifferences) {
  Rng rng(10);
  const Track3 y = random_track3(rng, 4, 5);
  const Track3 p = random_track3(rng, 4, 5);
  Presence mask(4, 5);
  mask.set(2, 1, false);
  const LossGradient g = loss_gradient(y, p, mask, 3.0, true, AlignmentGradient::FullSvd);
  const Mat fd = numeric_gradient(p, [&](const Track3& x) { return total_loss(y, x, mask, 3.0, true).total; });
  EXPECT_LT(max_abs_diff(g.d_canon, fd), 1e-6);
}

TEST(LossGradient, StopGradientMatchesFrozenAlignment) {
  Rng rng(11);
  const Track3 y = random_track3(rng, 3, 6);
  const Track3 p = random_track3(rng, 3, 6);
  const Presence mask(3, 6);
  const LossGradient g = loss_gradient(y, p, mask, 3.0, true, AlignmentGradient::StopGradient);
  const auto frozen = g.alignment;
  const Mat fd = numeric_gradient(p, [&](const Track3& x) {
    return loss_gradient(y, x, mask, 3.0, true, AlignmentGradient::StopGradient, &frozen).loss.total;
  });
  EXPECT_LT(max_abs_diff(g.d_canon, fd), 1e-6);
  // The frozen surrogate is not the true loss gradient.
  const Mat full = loss_gradient(y, p, mask, 3.0, true, AlignmentGradient::FullSvd).d_canon;
  EXPECT_GT(max_abs_diff(g.d_canon, full), 1e-4);
}

TEST(LossGradient, WithoutProcrustesMatchesFiniteDifferences) {
  Rng rng(12);
  const Track3 y = random_track3(rng, 3, 4), p = random_track3(rng, 3, 4);
  const Presence mask(3, 4);
  const LossGradient g = loss_gradient(y, p, mask, 2.0, false, AlignmentGradient::FullSvd);
  const Mat fd = numeric_gradient(p, [&](const Track3& x) { return total_loss(y, x, mask, 2.0, false).total; });
  EXPECT_LT(max_abs_diff(g.d_canon, fd), 1e-6);
}

TEST(LossGradient, ZeroVelocityWeightIsPositionGradient) {
  // With lambda = 0 the loss separates over frames: mean over T*J = (1/T) sum of per-frame means.
  Rng rng(13);
  const Track3 y = random_track3(rng, 4, 5), p = random_track3(rng, 4, 5);
  const LossGradient g = loss_gradient(y, p, Presence(4, 5), 0.0, true, AlignmentGradient::FullSvd);
  for (int t = 0; t < 4; ++t) {
    Track3 yt(1, 5), pt(1, 5);
    yt.data = y.frame(t);
    pt.data = p.frame(t);
    const LossGradient gt = loss_gradient(yt, pt, Presence(1, 5), 0.0, true, AlignmentGradient::FullSvd);
    EXPECT_LT(max_abs_diff(g.d_canon.middleRows(t * 5, 5), gt.d_canon / 4.0), 1e-12);
  }
}

TEST(Batch, PadsToLargestRig) {
  const auto a = toy_record("a", "x", 4, 3, 1);
  const auto b = toy_record("b", "y", 6, 3, 2);
  const Batch batch = make_batch({sample_from(a), sample_from(b)});
  EXPECT_EQ(batch.max_joints, 6);
  const Sample& s = batch.samples[0];
  EXPECT_EQ(s.keypoints.joints, 6);
  EXPECT_EQ(s.joint_mask, (std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0}));
  for (int t = 0; t < 3; ++t)
    for (int j = 4; j < 6; ++j) {
      EXPECT_EQ(Row2(s.keypoints.at(t, j)), Row2::Zero());
      EXPECT_EQ(Row3(s.target.at(t, j)), Row3::Zero());
      EXPECT_FALSE(s.presence(t, j));
      EXPECT_FALSE(s.label_mask(t, j));
    }
  EXPECT_EQ(s.adjacency.rightCols(2).sum(), 0);
  EXPECT_EQ(batch.samples[1].keypoints, sample_from(b).keypoints);
}

TEST(ComputeGradients, PaddingDoesNotChangeGradients) {
  const model::LiftingModel m = model::LiftingModel::create(tiny_model());
  const auto a = toy_record("a", "x", 4, 4, 1);
  const auto b = toy_record("b", "y", 6, 4, 2);
  TrainConfig config = quick_train(1);
  const GradientResult alone = compute_gradients(m, make_batch({sample_from(a)}), config);
  const GradientResult padded = compute_gradients(m, make_batch({sample_from(a), sample_from(b)}), config);
  const GradientResult other = compute_gradients(m, make_batch({sample_from(b)}), config);
  EXPECT_NEAR(padded.per_sample[0].total, alone.per_sample[0].total, 1e-12);
  for (std::size_t k = 0; k < alone.grads.size(); ++k) {
    const Mat sum = alone.grads.tensors()[k].value + other.grads.tensors()[k].value;
    EXPECT_LT(max_abs_diff(padded.grads.tensors()[k].value, sum), 1e-9 * (1.0 + sum.cwiseAbs().maxCoeff()))
        << alone.grads.tensors()[k].name;
  }
}

TEST(ComputeGradients, DuplicatedSampleDoublesGradient) {
  const model::LiftingModel m = model::LiftingModel::create(tiny_model());
  const Sample s = sample_from(toy_record("a", "x", 5, 4, 3));
  TrainConfig config = quick_train(1);
  const GradientResult one = compute_gradients(m, make_batch({s}), config);
  const GradientResult two = compute_gradients(m, make_batch({s, s}), config);
  for (std::size_t k = 0; k < one.grads.size(); ++k) {
    EXPECT_EQ(two.grads.tensors()[k].value, Mat(2.0 * one.grads.tensors()[k].value)) << one.grads.tensors()[k].name;
  }
  config.jobs = 2;
  const GradientResult parallel = compute_gradients(m, make_batch({s, s}), config);
  EXPECT_TRUE(parallel.grads == two.grads);
}

TEST(ComputeGradients, NonFiniteInputsThrow) {
  const model::LiftingModel m = model::LiftingModel::create(tiny_model());
  Sample s = sample_from(toy_record("a", "x", 5, 4, 3));
  s.target.at(1, 1)(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    compute_gradients(m, make_batch({s}), quick_train(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
}

TEST(Adam, MatchesHandFormula) {
  model::ParameterSet p;
  p.add("w", (Mat(1, 2) << 1.0, -2.0).finished());
  model::ParameterSet g = p.zeros_like();
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.01;
  AdamState st = make_adam_state(p);
  const double grads[2][2] = {{0.5, -1.0}, {0.25, 3.0}};
  double w[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 2; ++step) {
    g.at("w") << grads[step - 1][0], grads[step - 1][1];
    adamw_step(p, g, st, c);
    for (int i = 0; i < 2; ++i) {
      const double gi = grads[step - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      w[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * w[i]);
      EXPECT_NEAR(p.at("w")(0, i), w[i], 1e-14);
    }
  }
  EXPECT_EQ(st.step, 2);
}

TEST(Gradcheck, DefaultPassesInBothModes) {
  for (AlignmentGradient mode : {AlignmentGradient::StopGradient, AlignmentGradient::FullSvd}) {
    GradcheckConfig c = default_gradcheck_config();
    c.mode = mode;
    c.seed = 5;
    const GradcheckReport r = gradcheck_model(c);
    EXPECT_EQ(r.entries.size(), 30u);
    EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
  GradcheckConfig off = default_gradcheck_config();
  off.procrustes = false;
  EXPECT_TRUE(gradcheck_model(off).passed);
}

TEST(Gradcheck, CorruptionIsReportedByTensor) {
  GradcheckConfig c = default_gradcheck_config();
  c.corrupt_tensor = "decoder.w1";
  const GradcheckReport r = gradcheck_model(c);
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.failed_tensors.size(), 1u);
  EXPECT_EQ(r.failed_tensors[0], "decoder.w1");
  c.corrupt_tensor = "no.such.tensor";
  EXPECT_THROW(gradcheck_model(c), Error);
}

TEST(Gradcheck, SeedChangesCoordinatesAndStillPasses) {
  GradcheckConfig a = default_gradcheck_config(), b = default_gradcheck_config();
  b.seed = 77;
  const GradcheckReport ra = gradcheck_model(a), rb = gradcheck_model(b);
  EXPECT_TRUE(rb.passed);
  bool differ = false;
  for (std::size_t i = 0; i < ra.entries.size(); ++i)
    differ |= ra.entries[i].tensor != rb.entries[i].tensor || ra.entries[i].row != rb.entries[i].row;
  EXPECT_TRUE(differ);
}

TEST(Gradcheck, InverseKinematics) {
  const GradcheckReport r = gradcheck_ik(30, 1e-6, 1e-4, 3);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 2.0), 0.5);
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.frames_per_clip = 1;
  EXPECT_THROW(c.validate(), Error);
  c.velocity_weight = 0.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Train, DeterministicPerSeed) {
  const TrainData d = toy_data();
  const TrainResult a = train(d, tiny_model(), quick_train(20));
  const TrainResult b = train(d, tiny_model(), quick_train(20));
  ASSERT_FALSE(a.log.empty());
  EXPECT_EQ(a.log, b.log);
  EXPECT_TRUE(a.final_state.model.params == b.final_state.model.params);
  TrainConfig other = quick_train(20);
  other.seed = 4;
  other.occlusion = 0.2;
  EXPECT_NE(train(d, tiny_model(), other).log, a.log);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const TrainData d = toy_data();
  TrainConfig full = quick_train(0);
  full.epochs = 12;
  full.validate_every = 1;
  const TrainResult straight = train(d, tiny_model(), full);
  TrainConfig first = full;
  first.epochs = 5;
  const TrainResult part = train(d, tiny_model(), first);
  const TrainResult resumed = train(d, tiny_model(), full, {}, part.final_state);
  EXPECT_EQ(resumed.final_state.step, straight.final_state.step);
  for (std::size_t k = 0; k < straight.final_state.model.params.size(); ++k) {
    EXPECT_LT(max_abs_diff(resumed.final_state.model.params.tensors()[k].value,
                           straight.final_state.model.params.tensors()[k].value),
              1e-6);
  }
  std::vector<LogRecord> joined = part.log;
  joined.insert(joined.end(), resumed.log.begin(), resumed.log.end());
  ASSERT_EQ(joined.size(), straight.log.size());
  for (std::size_t i = 0; i < joined.size(); ++i) EXPECT_NEAR(joined[i].train_loss, straight.log[i].train_loss, 1e-9);
}

TEST(Train, BestCheckpointHasLowestValidationError) {
  const TrainData d = toy_data();
  TrainConfig c = quick_train(40);
  c.validate_every = 1;
  std::vector<double> seen;
  TrainHooks hooks;
  hooks.on_record = [&](const LogRecord& r, const TrainState&, bool) { seen.push_back(r.val_fa_mpjpe); };
  const TrainResult r = train(d, tiny_model(), c, hooks);
  ASSERT_EQ(seen.size(), r.log.size());
  const double best = *std::min_element(seen.begin(), seen.end());
  EXPECT_EQ(r.final_state.best_val_fa_mpjpe, best);
  EXPECT_NEAR(validate_model(r.best, d.train, 1).fa_mpjpe, best, 1e-9);
}

TEST(Train, AbortsOnNonFiniteKeepingLastGoodState) {
  TrainData d = toy_data();
  d.train[1].skeleton.joints.at(3, 2)(1) = std::numeric_limits<double>::infinity();
  d.validation = {toy_data().train[0]};
  const TrainResult r = train(d, tiny_model(), quick_train(10));
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.abort_reason.empty());
  EXPECT_TRUE(r.final_state.model.params.all_finite());
  EXPECT_TRUE(r.best.params.all_finite());
  EXPECT_EQ(r.final_state.step, 0);
}

TEST(Train, EmptyTrainSplit) {
  try {
    train(TrainData{}, tiny_model(), quick_train(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
}

TEST(Train, LossFallsWithAndWithoutProcrustes) {
  const TrainData d = toy_data();
  for (bool procrustes : {true, false}) {
    TrainConfig c = quick_train(150);
    c.procrustes_loss = procrustes;
    c.validate_every = 1;
    const TrainResult r = train(d, tiny_model(), c);
    ASSERT_GE(r.log.size(), 2u);
    EXPECT_LT(r.log.back().train_loss, 0.5 * r.log.front().train_loss) << "procrustes " << procrustes;
  }
}

TEST(Train, VelocityWeightReducesVelocityError) {
  const TrainData d = toy_data(0.01);
  auto velocity_error = [&](double weight) {
    TrainConfig c = quick_train(300);
    c.velocity_weight = weight;
    return validate_model(train(d, tiny_model(), c).final_state.model, d.train, 1).sa_mpve;
  };
  EXPECT_LT(velocity_error(5000.0), velocity_error(0.0));
}
