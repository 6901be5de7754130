#include "lift3d/metrics.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <numbers>

using namespace lift3d;
using namespace lift3d::metrics;
using lift3d::test::max_abs_diff;
using lift3d::test::random_rotation;
using lift3d::test::random_track3;

namespace {

Mat3 axis_rotation(int axis, double angle) {
  Vec3 a = Vec3::Zero();
  a[axis] = 1.0;
  return Eigen::AngleAxisd(angle, a).toRotationMatrix();
}

// Maximises tr(R^T M) by an Euler grid followed by shrinking coordinate search.
Mat3 grid_rotation(const Mat3& m) {
  auto score = [&](const Mat3& r) { return (r.transpose() * m).trace(); };
  Mat3 best = Mat3::Identity();
  double best_score = score(best);
  const int n = 24;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        const double step = 2.0 * std::numbers::pi / n;
        const Mat3 r = axis_rotation(2, a * step) * axis_rotation(1, b * step) * axis_rotation(0, c * step);
        const double s = score(r);
        if (s > best_score) best_score = s, best = r;
      }
  for (double step = 0.2; step > 1e-12; step *= 0.5) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (int axis = 0; axis < 3; ++axis)
        for (double sign : {-1.0, 1.0}) {
          const Mat3 r = best * axis_rotation(axis, sign * step);
          const double s = score(r);
          if (s > best_score) best_score = s, best = r, improved = true;
        }
    }
  }
  return best;
}

struct Centred {
  Mat target, source;
};

// Per-frame centred clouds of all present joints, stacked.
Centred stack_centred(const Track3& y, const Track3& p) {
  Centred c{Mat(y.data.rows(), 3), Mat(y.data.rows(), 3)};
  for (int t = 0; t < y.frames; ++t) {
    const Row3 yc = y.frame(t).colwise().mean();
    const Row3 pc = p.frame(t).colwise().mean();
    c.target.middleRows(t * y.joints, y.joints) = y.frame(t).rowwise() - yc;
    c.source.middleRows(t * y.joints, y.joints) = p.frame(t).rowwise() - pc;
  }
  return c;
}

double oracle_aligned_error(const Mat& target, const Mat& source) {
  const Mat3 m = source.transpose() * target;
  const Mat3 r = grid_rotation(m);
  const double s = (r.transpose() * m).trace() / source.squaredNorm();
  return (target - s * source * r).rowwise().norm().mean();
}

// Scalar-loop Procrustes of one centred point set; rows are points.
void naive_align(const std::vector<Vec3>& tgt, const std::vector<Vec3>& src, Mat3& rot, double& scale) {
  Mat3 cov = Mat3::Zero();
  double norm2 = 0.0;
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      norm2 += src[i][a] * src[i][a];
      for (int b = 0; b < 3; ++b) cov(a, b) += src[i][a] * tgt[i][b];
    }
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  rot = svd.matrixU() * d * svd.matrixV().transpose();
  double trace = 0.0;
  for (int k = 0; k < 3; ++k) trace += svd.singularValues()[k] * d(k, k);
  scale = trace / norm2;
}

double naive_fa(const Track3& y, const Track3& p) {
  double sum = 0.0;
  for (int t = 0; t < y.frames; ++t) {
    Vec3 yc = Vec3::Zero(), pc = Vec3::Zero();
    for (int j = 0; j < y.joints; ++j) {
      yc += y.at(t, j).transpose() / y.joints;
      pc += p.at(t, j).transpose() / y.joints;
    }
    std::vector<Vec3> tgt, src;
    for (int j = 0; j < y.joints; ++j) {
      tgt.push_back(y.at(t, j).transpose() - yc);
      src.push_back(p.at(t, j).transpose() - pc);
    }
    Mat3 r;
    double s;
    naive_align(tgt, src, r, s);
    for (int j = 0; j < y.joints; ++j) sum += (tgt[j] - s * r.transpose() * src[j]).norm();
  }
  return sum / (y.frames * y.joints);
}

// Returns {sa_mpjpe, sa_mpve} from loops.
std::pair<double, double> naive_sa(const Track3& y, const Track3& p) {
  std::vector<Vec3> tgt, src, yc(y.frames, Vec3::Zero()), pc(y.frames, Vec3::Zero());
  for (int t = 0; t < y.frames; ++t) {
    for (int j = 0; j < y.joints; ++j) {
      yc[t] += y.at(t, j).transpose() / y.joints;
      pc[t] += p.at(t, j).transpose() / y.joints;
    }
    for (int j = 0; j < y.joints; ++j) {
      tgt.push_back(y.at(t, j).transpose() - yc[t]);
      src.push_back(p.at(t, j).transpose() - pc[t]);
    }
  }
  Mat3 r;
  double s;
  naive_align(tgt, src, r, s);
  std::vector<Vec3> aligned(tgt.size());
  double pos = 0.0;
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    aligned[i] = s * r.transpose() * src[i] + yc[i / y.joints];
    pos += (y.data.row(i).transpose() - aligned[i]).norm();
  }
  double vel = 0.0;
  for (int t = 1; t < y.frames; ++t)
    for (int j = 0; j < y.joints; ++j) {
      const int i = t * y.joints + j, k = (t - 1) * y.joints + j;
      vel += ((y.data.row(i) - y.data.row(k)).transpose() - (aligned[i] - aligned[k])).norm();
    }
  return {pos / tgt.size(), vel / ((y.frames - 1) * y.joints)};
}

Track3 rotate_frames(const Track3& y, const std::vector<Mat3>& rot, const std::vector<double>& scale) {
  Track3 out = y;
  for (int t = 0; t < y.frames; ++t) out.frame(t) = scale[t] * y.frame(t) * rot[t];
  return out;
}

dataset::SequenceRecord tiny_record(const std::string& id, const std::string& category, int joints, std::uint64_t seed) {
  Rng rng(seed);
  const int frames = 4;
  const Track3 world = random_track3(rng, frames, joints, 0.3);
  Track3 shifted = world;
  shifted.data.col(2).array() += 3.0;
  geometry::Camera cam = geometry::place_camera(shifted, {512, 512}, 0.05, 0.3);
  const Track2 px = geometry::project_perspective(shifted, cam);
  auto norm = dataset::normalize_sequence(px, Presence(frames, joints), shifted, 1000.0);
  std::vector<int> parent(joints);
  std::vector<Vec3> offsets(joints, Vec3(0.1, 0.0, 0.0));
  for (int j = 0; j < joints; ++j) parent[j] = j - 1;
  dataset::SequenceRecord rec;
  rec.record = norm.record;
  rec.observed = norm.keypoints;
  rec.observed.camera = cam;
  rec.skeleton = norm.skeleton;
  rec.skeleton.chain = kinematics::KinematicChain::from_parents(parent, offsets);
  rec.skeleton.category = category;
  rec.skeleton.sequence_id = id;
  return rec;
}

std::vector<dataset::SequenceRecord> tiny_pool() {
  return {tiny_record("a_000", "a", 5, 1), tiny_record("a_001", "a", 5, 2), tiny_record("b_000", "b", 7, 3)};
}

// Prediction = labels rotated per frame, so FA is zero but SA is not.
class WobbleLifter : public Lifter {
 public:
  Track3 predict(const dataset::SequenceRecord& seq, const dataset::KeypointSequence2D& inputs) const override {
    Track3 out = seq.skeleton.joints;
    int hidden = 0;
    for (int t = 0; t < inputs.presence.frames; ++t)
      for (int j = 0; j < inputs.presence.joints; ++j) hidden += !inputs.presence(t, j);
    for (int t = 0; t < out.frames; ++t) out.frame(t) = out.frame(t) * axis_rotation(1, 0.2 * t + 0.01 * hidden);
    return out;
  }
};

}  // namespace

TEST(FaMpjpe, AbsorbsPerFrameRotationAndScale) {
  Rng rng(1);
  const Track3 y = random_track3(rng, 5, 10, 100.0);
  std::vector<Mat3> rot;
  std::vector<double> scale;
  for (int t = 0; t < 5; ++t) rot.push_back(random_rotation(rng)), scale.push_back(0.3 + t);
  Track3 p = rotate_frames(y, rot, scale);
  for (int t = 0; t < 5; ++t) p.frame(t).rowwise() += Row3(10.0 * t, -4.0, 7.0);
  EXPECT_LT(fa_mpjpe(y, p, full_mask(5, 10)), 1e-9);
}

TEST(FaMpjpe, MeanArithmeticAfterAlignment) {
  Track3 y(1, 10), aligned(1, 10);
  Rng rng(2);
  y.data = lift3d::test::random_cloud(rng, 10, 3, 100.0);
  aligned = y;
  aligned.at(0, 4) += Row3(0.0, 10.0, 0.0);
  EXPECT_DOUBLE_EQ(mean_joint_error(y, aligned, full_mask(1, 10)), 1.0);
  // Re-aligning spreads the outlier over all joints; the squared residual cannot grow.
  const auto a = geometry::solve_procrustes(y.data, aligned.data, true);
  EXPECT_LE(a.residual, 100.0);
  EXPECT_GT(fa_mpjpe(y, aligned, full_mask(1, 10)), 0.5);
}

TEST(FaMpjpe, MatchesGridOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Track3 y = random_track3(rng, 1, 8, 100.0);
    const Track3 p = random_track3(rng, 1, 8, 100.0);
    const Centred c = stack_centred(y, p);
    EXPECT_NEAR(fa_mpjpe(y, p, full_mask(1, 8)), oracle_aligned_error(c.target, c.source), 1e-4);
  }
}

TEST(FaMpjpe, DegenerateFrame) {
  Track3 y(2, 4), p(2, 4);
  Rng rng(4);
  y.data = lift3d::test::random_cloud(rng, 8, 3);
  p.data = y.data;
  p.frame(1).setZero();
  try {
    fa_mpjpe(y, p, full_mask(2, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateFrame);
    EXPECT_NE(e.detail().find("frame 1"), std::string::npos);
  }
}

TEST(SaMpjpe, AbsorbsOneSharedRotation) {
  Rng rng(5);
  const Track3 y = random_track3(rng, 6, 9, 100.0);
  const Mat3 r = random_rotation(rng);
  Track3 p = y;
  p.data = 2.5 * y.data * r.transpose();
  EXPECT_LT(sa_mpjpe(y, p, full_mask(6, 9)), 1e-9);
  EXPECT_LT(sa_mpve(y, p, full_mask(6, 9)), 1e-9);
}

TEST(SaMpjpe, PerFrameRotationsSeparateTheMetrics) {
  Rng rng(6);
  const Track3 y = random_track3(rng, 2, 10, 100.0);
  const Track3 p = rotate_frames(y, {axis_rotation(1, 0.0), axis_rotation(1, 0.8)}, {1.0, 1.0});
  const Presence mask = full_mask(2, 10);
  EXPECT_LT(fa_mpjpe(y, p, mask), 1e-6);
  const double sa = sa_mpjpe(y, p, mask);
  EXPECT_GT(sa, 1.0);
  const Centred c = stack_centred(y, p);
  EXPECT_NEAR(sa, oracle_aligned_error(c.target, c.source), 1e-4);
}

TEST(SaMpjpe, EqualsConcatenatedCloudProcrustes) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Track3 y = random_track3(rng, 4, 6, 50.0);
    const Track3 p = random_track3(rng, 4, 6, 50.0);
    const Centred c = stack_centred(y, p);
    const auto a = geometry::solve_procrustes(c.target, c.source, true);
    const double expected = (c.target - a.scale * c.source * a.rotation).rowwise().norm().mean();
    EXPECT_NEAR(sa_mpjpe(y, p, full_mask(4, 6)), expected, 1e-9);
  }
}

TEST(SaMpjpe, SingleFrameEqualsFrameAligned) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Track3 y = random_track3(rng, 1, 7, 30.0);
    const Track3 p = random_track3(rng, 1, 7, 30.0);
    EXPECT_NEAR(sa_mpjpe(y, p, full_mask(1, 7)), fa_mpjpe(y, p, full_mask(1, 7)), 1e-9);
  }
}

TEST(SaMpjpe, DegenerateSequence) {
  Track3 y(2, 2), p(2, 2);
  Presence mask(2, 2, false);
  mask.set(0, 0, true);
  mask.set(1, 1, true);
  try {
    sa_mpjpe(y, p, mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateSequence);
  }
}

TEST(SaMpve, OffsetsAndIdentityGiveZero) {
  Rng rng(9);
  const Track3 y = random_track3(rng, 5, 6, 100.0);
  Track3 p = y;
  p.data.rowwise() += Row3(30.0, -10.0, 5.0);
  EXPECT_LT(sa_mpve(y, p, full_mask(5, 6)), 1e-9);
  EXPECT_LT(sa_mpve(y, y, full_mask(5, 6)), 1e-9);
}

TEST(SaMpve, HandComputedVelocity) {
  Track3 y(2, 1), p(2, 1);
  y.at(1, 0) << 3.0, 0.0, 0.0;
  p.at(1, 0) << 0.0, 4.0, 0.0;
  // (3,0,0) - (0,4,0) has norm 5.
  EXPECT_DOUBLE_EQ(mean_velocity_error(y, p, full_mask(2, 1)), 5.0);
  Track3 one(1, 5);
  EXPECT_THROW(sa_mpve(one, one, full_mask(1, 5)), Error);
  try {
    mean_velocity_error(one, one, full_mask(1, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooShort);
  }
}

TEST(Metrics, FrameAlignedNeverExceedsSequenceAligned) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Track3 y = random_track3(rng, 5, 6, 100.0);
    Track3 p = y;
    p.data += random_track3(rng, 5, 6, 20.0 * (trial % 5)).data;
    const Presence mask = full_mask(5, 6);
    EXPECT_LE(fa_mpjpe(y, p, mask), sa_mpjpe(y, p, mask) + 1e-9) << trial;
  }
}

TEST(Metrics, InvariantToGlobalSimilarityOfPrediction) {
  Rng rng(11);
  const Track3 y = random_track3(rng, 4, 7, 100.0);
  const Track3 p = random_track3(rng, 4, 7, 100.0);
  Track3 q = p;
  q.data = 0.37 * p.data * random_rotation(rng);
  const Presence mask = full_mask(4, 7);
  EXPECT_NEAR(fa_mpjpe(y, p, mask), fa_mpjpe(y, q, mask), 1e-6);
  EXPECT_NEAR(sa_mpjpe(y, p, mask), sa_mpjpe(y, q, mask), 1e-6);
  EXPECT_NEAR(sa_mpve(y, p, mask), sa_mpve(y, q, mask), 1e-6);
}

TEST(Metrics, MatchScalarLoopReimplementation) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Track3 y = random_track3(rng, 3, 6, 40.0);
    const Track3 p = random_track3(rng, 3, 6, 40.0);
    const Presence mask = full_mask(3, 6);
    const auto [sa, mpve] = naive_sa(y, p);
    EXPECT_NEAR(fa_mpjpe(y, p, mask), naive_fa(y, p), 1e-9);
    EXPECT_NEAR(sa_mpjpe(y, p, mask), sa, 1e-9);
    EXPECT_NEAR(sa_mpve(y, p, mask), mpve, 1e-9);
  }
}

TEST(Metrics, AbsentJointsAreIgnored) {
  Rng rng(13);
  const Track3 y = random_track3(rng, 3, 6, 40.0);
  Track3 p = random_track3(rng, 3, 6, 40.0);
  Presence mask = full_mask(3, 6);
  mask.set(1, 2, false);
  const double fa = fa_mpjpe(y, p, mask), sa = sa_mpjpe(y, p, mask);
  p.at(1, 2) << 1e6, 1e6, 1e6;
  EXPECT_EQ(fa_mpjpe(y, p, mask), fa);
  EXPECT_EQ(sa_mpjpe(y, p, mask), sa);
}

TEST(Metrics, WholeSequenceCenteringOption) {
  Rng rng(14);
  const Track3 y = random_track3(rng, 4, 5, 40.0);
  Track3 p = y;
  for (int t = 0; t < 4; ++t) p.frame(t).rowwise() += Row3(5.0 * t, 0.0, 0.0);
  SequenceAlignmentOptions whole;
  whole.whole_sequence_centering = true;
  EXPECT_LT(sa_mpjpe(y, p, full_mask(4, 5)), 1e-9);
  EXPECT_GT(sa_mpjpe(y, p, full_mask(4, 5), whole), 1.0);
  SequenceAlignmentOptions no_scale;
  no_scale.with_scale = false;
  Track3 big = y;
  big.data *= 2.0;
  EXPECT_LT(sa_mpjpe(y, big, full_mask(4, 5)), 1e-9);
  EXPECT_GT(sa_mpjpe(y, big, full_mask(4, 5), no_scale), 1.0);
}

TEST(Scenario, ParseAndLabel) {
  for (const std::string s : {"clean", "noisy", "occluded(0.1)", "occluded(0.6)", "holdout(fox)", "unseen_rig"}) {
    EXPECT_EQ(Scenario::parse(s).label(), s);
  }
  EXPECT_EQ(Scenario::parse("occluded(0.3)").fraction, 0.3);
  EXPECT_EQ(Scenario::parse("holdout(bear)").category, "bear");
  for (const std::string bad : {"", "occluded", "occluded(2)", "holdout()", "dirty"}) {
    EXPECT_THROW(Scenario::parse(bad), Error) << bad;
  }
}

TEST(Scenario, InputsPerKind) {
  const auto rec = tiny_record("a_000", "a", 5, 1);
  EXPECT_EQ(scenario_inputs(rec, Scenario::parse("noisy"), 1), rec.observed);
  const auto clean = scenario_inputs(rec, Scenario::parse("clean"), 1);
  EXPECT_LT(max_abs_diff(clean.keypoints.data, dataset::clean_keypoints(rec).data), 1e-12);
  EXPECT_EQ(scenario_inputs(rec, Scenario::parse("occluded(0)"), 1), clean);
  const auto occ = scenario_inputs(rec, Scenario::parse("occluded(0.4)"), 1);
  EXPECT_EQ(occ.presence.count(), 4 * 3);
  EXPECT_EQ(scenario_inputs(rec, Scenario::parse("occluded(0.4)"), 1), occ);
}

TEST(Scenario, SequenceSelection) {
  const auto pool = tiny_pool();
  EXPECT_EQ(scenario_sequences(pool, Scenario::parse("holdout(a)"), 0).size(), 2u);
  const auto unseen = scenario_sequences(pool, Scenario::parse("unseen_rig"), 5);
  ASSERT_EQ(unseen.size(), 1u);
  EXPECT_EQ(unseen[0]->skeleton.sequence_id, "b_000");
  EXPECT_EQ(scenario_sequences(pool, Scenario::parse("clean"), 99).size(), 3u);
}

TEST(Evaluate, GroundTruthGivesZeroMetrics) {
  const auto pool = tiny_pool();
  const MetricReport r = evaluate(GroundTruthLifter{}, pool, Scenario::parse("noisy"), {});
  EXPECT_EQ(r.sequence_count, 3);
  EXPECT_EQ(r.frame_count, 12);
  EXPECT_LT(r.fa_mpjpe, 1e-9);
  EXPECT_LT(r.sa_mpjpe, 1e-9);
  EXPECT_LT(r.sa_mpve, 1e-9);
  EXPECT_EQ(r.per_category.at("a").sequences, 2);
}

TEST(Evaluate, ReportsMillimetresAndUnweightedMeans) {
  const auto pool = tiny_pool();
  const MetricReport r = evaluate(WobbleLifter{}, pool, Scenario::parse("clean"), {});
  double fa = 0.0, sa = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& seq = pool[i];
    const Track3 pred = WobbleLifter{}.predict(seq, scenario_inputs(seq, Scenario::parse("clean"), 0));
    const Presence mask = full_mask(seq.frames(), seq.joints());
    EXPECT_NEAR(r.per_sequence[i].sa_mpjpe, seq.record.scale_3d * sa_mpjpe(seq.skeleton.joints, pred, mask), 1e-9);
    fa += r.per_sequence[i].fa_mpjpe;
    sa += r.per_sequence[i].sa_mpjpe;
  }
  EXPECT_NEAR(r.fa_mpjpe, fa / 3.0, 1e-12);
  EXPECT_NEAR(r.sa_mpjpe, sa / 3.0, 1e-12);
  EXPECT_GT(r.sa_mpjpe, 1.0);
  EXPECT_NEAR(r.per_category.at("a").sa_mpjpe, (r.per_sequence[0].sa_mpjpe + r.per_sequence[1].sa_mpjpe) / 2, 1e-12);
  for (const auto& m : r.per_sequence) {
    EXPECT_GE(m.fa_mpjpe, 0.0);
    EXPECT_LE(m.fa_mpjpe, m.sa_mpjpe + 1e-9);
  }
}

TEST(Evaluate, OcclusionZeroMatchesCleanAndRunsAreDeterministic) {
  const auto pool = tiny_pool();
  MetricReport clean = evaluate(WobbleLifter{}, pool, Scenario::parse("clean"), {});
  MetricReport occ0 = evaluate(WobbleLifter{}, pool, Scenario::parse("occluded(0)"), {});
  occ0.scenario = clean.scenario;
  EXPECT_EQ(clean, occ0);
  EvalOptions parallel;
  parallel.jobs = 3;
  EXPECT_EQ(evaluate(WobbleLifter{}, pool, Scenario::parse("occluded(0.4)"), {}),
            evaluate(WobbleLifter{}, pool, Scenario::parse("occluded(0.4)"), parallel));
}

TEST(Evaluate, EmptySelectionAndMissingPredictions) {
  const auto pool = tiny_pool();
  try {
    evaluate(GroundTruthLifter{}, pool, Scenario::parse("holdout(zebra)"), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyDataset);
  }
  const PredictionLifter partial({{"a_000", pool[0].skeleton.joints}});
  EXPECT_THROW(evaluate(partial, pool, Scenario::parse("noisy"), {}), Error);
  const PredictionLifter full({{"a_000", pool[0].skeleton.joints},
                               {"a_001", pool[1].skeleton.joints},
                               {"b_000", pool[2].skeleton.joints}});
  EXPECT_EQ(evaluate(full, pool, Scenario::parse("noisy"), {}),
            evaluate(GroundTruthLifter{}, pool, Scenario::parse("noisy"), {}));
}
