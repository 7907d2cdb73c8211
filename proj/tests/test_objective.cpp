#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

#include "mvpose/errors.hpp"
#include "mvpose/geometry.hpp"
#include "mvpose/heatmap.hpp"
#include "mvpose/objective.hpp"
#include "mvpose/rng.hpp"
#include "mvpose/synth.hpp"

using namespace mvpose;

namespace {

MultiViewSample draw_sample(const SkeletonDef& skel, int nv, uint64_t seed) {
  Rng rng(seed);
  RigSpec spec;
  spec.views = nv;
  const CameraRig rig = make_rig(spec, Eigen::Vector3d(0, 950, 0), rng);
  for (int tries = 0; tries < 100; ++tries) {
    try {
      return synthesize(sample_pose(skel, rng), rig, NoiseSpec{}, skel, rng,
                        int(seed));
    } catch (const NumericalError&) {
    }
  }
  throw std::runtime_error("no in-view sample for this seed");
}

ViewSpec view_spec_from(const ViewObservation& obs) {
  ViewSpec v;
  v.k = obs.k;
  v.anchor_uv = obs.uv;
  v.anchor_mask.assign(obs.uv.cols(), 1);
  v.phi = obs.phi;
  return v;
}

ViewSpec blank_view(int j) {
  ViewSpec v;
  v.anchor_uv = Eigen::Matrix2Xd::Zero(2, j);
  v.anchor_mask.assign(j, 0);
  v.phi = Eigen::VectorXd::Ones(j);
  return v;
}

struct BuiltBatch {
  Batch batch;
  Eigen::VectorXd params;
  std::vector<MultiViewSample> drawn;
};

BuiltBatch consistent_direct(int n_samples, int nv, uint64_t seed,
                             bool gt_rot = false) {
  BuiltBatch bb;
  bb.batch.problem.skel = SkeletonDef::default_human15();
  for (int i = 0; i < n_samples; ++i) {
    MultiViewSample ms =
        draw_sample(bb.batch.problem.skel, nv, seed + 9973 * i);
    SampleSpec ss;
    for (const auto& ob : ms.views) ss.views.push_back(view_spec_from(ob));
    if (gt_rot)
      for (const auto& t : ms.truth)
        ss.view_rot.push_back(t.extrinsics.rotation);
    bb.batch.samples.push_back(std::move(ss));
    bb.drawn.push_back(std::move(ms));
  }
  const ParamLayout lay = make_layout(bb.batch);
  bb.params.setZero(lay.total);
  for (int s = 0; s < n_samples; ++s)
    for (int v = 0; v < nv; ++v)
      for (int q = 0; q < lay.joints; ++q) {
        bb.params[lay.loc_u(s, v, q)] = bb.drawn[s].views[v].uv(0, q);
        bb.params[lay.loc_v(s, v, q)] = bb.drawn[s].views[v].uv(1, q);
        bb.params[lay.loc_zr(s, v, q)] = bb.drawn[s].truth[v].zr[q];
      }
  return bb;
}

void jitter_direct(BuiltBatch& bb, double px, double dz, uint64_t seed) {
  const ParamLayout lay = make_layout(bb.batch);
  Rng rng(seed);
  for (int s = 0; s < int(bb.batch.samples.size()); ++s)
    for (int v = 0; v < bb.batch.samples[s].view_count(); ++v)
      for (int q = 0; q < lay.joints; ++q) {
        bb.params[lay.loc_u(s, v, q)] += rng.uniform(-px, px);
        bb.params[lay.loc_v(s, v, q)] += rng.uniform(-px, px);
        bb.params[lay.loc_zr(s, v, q)] += rng.uniform(-dz, dz);
      }
}

BuiltBatch consistent_heatmap(int nv, uint64_t seed, int grid_cells,
                              double logit_noise = 0.0) {
  BuiltBatch bb;
  bb.batch.problem.skel = SkeletonDef::default_human15();
  bb.batch.problem.mode = ParamMode::heatmap_logits;
  MultiViewSample ms = draw_sample(bb.batch.problem.skel, nv, seed);
  SampleSpec ss;
  for (const auto& ob : ms.views) {
    ViewSpec v = view_spec_from(ob);
    const double u0 = ob.uv.row(0).minCoeff();
    const double v0 = ob.uv.row(1).minCoeff();
    const double span = std::max(ob.uv.row(0).maxCoeff() - u0,
                                 ob.uv.row(1).maxCoeff() - v0) +
                        120.0;
    v.grid = HeatmapGrid::for_span(u0 - 60.0, v0 - 60.0, span, grid_cells);
    ss.views.push_back(v);
  }
  bb.batch.samples.push_back(std::move(ss));
  bb.drawn.push_back(std::move(ms));
  const ParamLayout lay = make_layout(bb.batch);
  bb.params.setZero(lay.total);
  Rng rng(Rng::derive(seed, 77));
  for (int v = 0; v < nv; ++v) {
    const auto& spec = bb.batch.samples[0].views[v];
    const auto& obs = bb.drawn[0].views[v];
    const double sig = bb.batch.problem.gauss_sigma_cells * spec.grid.stride;
    for (int q = 0; q < lay.joints; ++q) {
      const HeatmapArray g =
          render_gaussian(obs.uv(0, q), obs.uv(1, q), sig, spec.grid);
      for (int c = 0; c < spec.grid.cells(); ++c) {
        bb.params[lay.loc_score(0, v, q, c)] =
            g(c / spec.grid.width, c % spec.grid.width) +
            logit_noise * rng.normal();
        bb.params[lay.loc_hz(0, v, q, c)] =
            bb.drawn[0].truth[v].zr[q] + logit_noise * rng.normal();
      }
    }
  }
  return bb;
}

Eigen::Matrix3Xd recon_view(const BuiltBatch& bb, int s, int v) {
  const ParamLayout lay = make_layout(bb.batch);
  const SkeletonDef& skel = bb.batch.problem.skel;
  Pose25D p;
  p.u.resize(lay.joints);
  p.v.resize(lay.joints);
  p.zr.resize(lay.joints);
  p.phi = Eigen::VectorXd::Ones(lay.joints);
  for (int q = 0; q < lay.joints; ++q) {
    p.u[q] = bb.params[lay.loc_u(s, v, q)];
    p.v[q] = bb.params[lay.loc_v(s, v, q)];
    p.zr[q] = bb.params[lay.loc_zr(s, v, q)];
  }
  p.zr.array() -= p.zr[skel.root];
  return reconstruct(p, bb.batch.samples[s].views[v].k, skel).joints;
}

std::vector<Eigen::Matrix3Xd> truth_poses(const MultiViewSample& ms) {
  std::vector<Eigen::Matrix3Xd> out;
  for (const auto& t : ms.truth) out.push_back(t.pose_cam_mm / t.scale_mm);
  return out;
}

void bf_align(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& tgt,
              const Eigen::VectorXd& w, Eigen::Matrix3d& r,
              Eigen::Vector3d& t) {
  const double ws = w.sum();
  const Eigen::Vector3d ms = (src * w) / ws, mt = (tgt * w) / ws;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int q = 0; q < src.cols(); ++q)
    h += w[q] * (src.col(q) - ms) * (tgt.col(q) - mt).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0)
    d(2, 2) = -1.0;
  r = svd.matrixV() * d * svd.matrixU().transpose();
  t = mt - r * ms;
}

double bf_pair_value(const Eigen::Matrix3Xd& pa, const Eigen::Matrix3Xd& pb,
                     const Eigen::VectorXd& w) {
  Eigen::Matrix3d r;
  Eigen::Vector3d t;
  bf_align(pb, pa, w, r, t);
  double val = 0.0;
  for (int q = 0; q < pa.cols(); ++q) {
    if (w[q] <= 0) continue;
    const Eigen::Vector3d res = pa.col(q) - (r * pb.col(q) + t);
    val += w[q] * 0.5 *
           (res.cwiseAbs().sum() + (r.transpose() * res).cwiseAbs().sum());
  }
  return val;
}

Eigen::Matrix3Xd exact_mean_pose(const SkeletonDef& skel) {
  Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Zero(3, skel.joint_count());
  std::vector<uint8_t> placed(skel.joint_count(), 0);
  placed[skel.edges[0].first] = 1;
  const Eigen::Vector3d axes[6] = {{1, 0, 0},  {0, 1, 0},  {0, 0, 1},
                                   {-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  bool progress = true;
  while (progress) {
    progress = false;
    for (int e = 0; e < skel.edge_count(); ++e) {
      auto [a, b] = skel.edges[e];
      if (placed[a] == placed[b]) continue;
      const int from = placed[a] ? a : b, to = placed[a] ? b : a;
      pts.col(to) = pts.col(from) + skel.mean_limb_normalized[e] * axes[e % 6];
      placed[to] = 1;
      progress = true;
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("layout packs views contiguously in both modes") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  Batch b;
  b.problem.skel = skel;
  b.samples.resize(2);
  b.samples[0].views = {blank_view(15), blank_view(15)};
  b.samples[1].views = {blank_view(15)};

  const ParamLayout direct = make_layout(b);
  CHECK(direct.joints == 15);
  CHECK(direct.offset[0][0] == 0);
  CHECK(direct.offset[0][1] == 45);
  CHECK(direct.offset[1][0] == 90);
  CHECK(direct.total == 135);
  CHECK(direct.view_params(0, 1) == 45);
  CHECK(direct.loc_u(0, 1, 3) == 48);
  CHECK(direct.loc_v(0, 1, 3) == 63);
  CHECK(direct.loc_zr(0, 1, 3) == 78);

  b.problem.mode = ParamMode::heatmap_logits;
  for (auto& s : b.samples)
    for (auto& v : s.views) v.grid = HeatmapGrid::identity(4, 4);
  const ParamLayout hm = make_layout(b);
  CHECK(hm.cells[0][0] == 16);
  CHECK(hm.view_params(0, 0) == 2 * 15 * 16);
  CHECK(hm.offset[0][1] == 480);
  CHECK(hm.offset[1][0] == 960);
  CHECK(hm.total == 1440);
  CHECK(hm.loc_score(0, 1, 2, 5) == 480 + 2 * 16 + 5);
  CHECK(hm.loc_hz(0, 0, 14, 15) == (15 + 14) * 16 + 15);
}

TEST_CASE("validation rejects malformed problems") {
  BuiltBatch bb = consistent_direct(1, 2, 31);

  SUBCASE("negative weights") {
    bb.batch.problem.weights.alpha = -1.0;
    CHECK_THROWS_AS(eval_batch(bb.batch, bb.params), ValidationError);
  }
  SUBCASE("parameter size mismatch") {
    Eigen::VectorXd off = bb.params.head(bb.params.size() - 1);
    CHECK_THROWS_AS(eval_batch(bb.batch, off), ValidationError);
  }
  SUBCASE("negative confidence") {
    bb.batch.samples[0].views[0].phi[2] = -0.1;
    CHECK_THROWS_AS(eval_batch(bb.batch, bb.params), ValidationError);
  }
  SUBCASE("depth targets without a mask") {
    bb.batch.samples[0].views[0].zr_gt = Eigen::VectorXd::Zero(15);
    CHECK_THROWS_AS(eval_batch(bb.batch, bb.params), ValidationError);
  }
  SUBCASE("sample without views") {
    bb.batch.samples.push_back({});
    CHECK_THROWS_AS(make_layout(bb.batch), ValidationError);
  }
  SUBCASE("view_rot count mismatch") {
    bb.batch.samples[0].view_rot = {Eigen::Matrix3d::Identity()};
    CHECK_THROWS_AS(eval_batch(bb.batch, bb.params), ValidationError);
  }
  SUBCASE("heatmap mode without grids") {
    bb.batch.problem.mode = ParamMode::heatmap_logits;
    CHECK_THROWS_AS(make_layout(bb.batch), ValidationError);
  }
}

TEST_CASE("heatmap loss matches rendered targets and direct summation") {
  HeatmapStack stack;
  stack.grid = HeatmapGrid::identity(64, 64);
  stack.h2d = {HeatmapArray::Zero(64, 64)};
  stack.hz = {HeatmapArray::Zero(64, 64)};
  Eigen::Matrix2Xd centers(2, 1);
  centers << 32.0, 32.0;

  SUBCASE("all-zero prediction against a centered gaussian") {
    double ref = 0.0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const double g =
            std::exp(-((c - 32.0) * (c - 32.0) + (r - 32.0) * (r - 32.0)) /
                     (2.0 * 2.0 * 2.0));
        ref += g * g;
      }
    ref /= 64.0 * 64.0;
    const double loss = heatmap_loss(stack, centers, {1}, 2.0);
    CHECK(loss == doctest::Approx(ref).epsilon(1e-12));
    CHECK(loss > 0.0);
  }
  SUBCASE("prediction equal to the rendered target") {
    stack.h2d[0] = render_gaussian(30.25, 41.5, 2.0, stack.grid);
    centers << 30.25, 41.5;
    CHECK(heatmap_loss(stack, centers, {1}, 2.0) == 0.0);
  }
  SUBCASE("invisible joints are excluded") {
    CHECK(heatmap_loss(stack, centers, {0}, 2.0) == 0.0);
    stack.h2d.push_back(render_gaussian(10.0, 10.0, 2.0, stack.grid));
    stack.hz.push_back(HeatmapArray::Zero(64, 64));
    Eigen::Matrix2Xd c2(2, 2);
    c2 << 32.0, 10.0, 32.0, 10.0;
    const double only_second = heatmap_loss(stack, c2, {0, 1}, 2.0);
    CHECK(only_second == 0.0);
    const double both = heatmap_loss(stack, c2, {1, 1}, 2.0);
    const double first = heatmap_loss(stack, c2, {1, 0}, 2.0);
    CHECK(both == doctest::Approx(first / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("depth loss arithmetic") {
  Eigen::VectorXd gt = Eigen::VectorXd::Zero(17);
  Eigen::VectorXd pred = gt;
  std::vector<uint8_t> mask(17, 1);
  CHECK(depth_loss(pred, gt, mask) == 0.0);

  pred[3] += 0.1;
  CHECK(depth_loss(pred, gt, mask) ==
        doctest::Approx(0.01 / 17.0).epsilon(1e-12));

  std::vector<uint8_t> none(17, 0);
  CHECK(depth_loss(pred, gt, none) == 0.0);
  CHECK_THROWS_AS(depth_loss(pred, Eigen::VectorXd::Zero(5), mask),
                  ValidationError);
}

TEST_CASE("limb loss at mean lengths, one long limb, zero confidences") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  Pose3D pose;
  pose.joints = exact_mean_pose(skel);
  pose.scale_state = ScaleState::normalized;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(15);

  CHECK(limb_length_loss(pose, ones, skel) == 0.0);

  int head_edge = -1;
  for (int e = 0; e < skel.edge_count(); ++e)
    if (skel.edges[e].second == 2) head_edge = e;
  REQUIRE(head_edge >= 0);
  const auto [neck, head] = skel.edges[head_edge];
  const Eigen::Vector3d dir =
      (pose.joints.col(head) - pose.joints.col(neck)).normalized();
  pose.joints.col(head) =
      pose.joints.col(neck) +
      (skel.mean_limb_normalized[head_edge] + 0.1) * dir;
  CHECK(limb_length_loss(pose, ones, skel) ==
        doctest::Approx(0.01).epsilon(1e-9));

  CHECK(limb_length_loss(pose, Eigen::VectorXd::Zero(15), skel) == 0.0);
}

TEST_CASE("consistency loss vanishes on rigidly related reconstructions") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  const MultiViewSample ms = draw_sample(skel, 3, 101);
  const auto poses = truth_poses(ms);
  const std::vector<Eigen::VectorXd> phi(3, Eigen::VectorXd::Ones(15));

  const McResult est = multiview_consistency_loss(poses, phi);
  CHECK(est.value <= 1e-9);
  CHECK(est.terms == 3 * 15);
  CHECK(est.skipped_pairs == 0);
  CHECK(!est.single_view);

  std::vector<Eigen::Matrix3d> rots;
  for (const auto& t : ms.truth) rots.push_back(t.extrinsics.rotation);
  const McResult pinned = multiview_consistency_loss(poses, phi, rots);
  CHECK(pinned.value <= 1e-9);

  const McResult single =
      multiview_consistency_loss({poses[0]}, {phi[0]});
  CHECK(single.single_view);
  CHECK(single.value == 0.0);
  CHECK(single.terms == 0);
}

TEST_CASE("consistency loss matches brute force after a depth perturbation") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  const MultiViewSample ms = draw_sample(skel, 2, 211);
  std::vector<Eigen::Matrix3Xd> poses = truth_poses(ms);

  Pose25D p;
  p.u = ms.views[1].uv.row(0).transpose();
  p.v = ms.views[1].uv.row(1).transpose();
  p.zr = ms.truth[1].zr;
  p.phi = Eigen::VectorXd::Ones(15);
  p.zr[5] += 0.1;
  poses[1] = reconstruct(p, ms.views[1].k, skel).joints;

  std::vector<Eigen::VectorXd> phi(2, Eigen::VectorXd::Ones(15));
  const McResult got = multiview_consistency_loss(poses, phi);
  CHECK(got.value > 1e-3);
  const double ref =
      bf_pair_value(poses[0], poses[1], phi[0].cwiseProduct(phi[1]));
  CHECK(got.value == doctest::Approx(ref).epsilon(1e-12));

  SUBCASE("zero confidence removes the perturbed joint's term") {
    phi[1][5] = 0.0;
    const McResult gated = multiview_consistency_loss(poses, phi);
    CHECK(gated.terms == 14);
    CHECK(gated.value <= 1e-9);
  }
  SUBCASE("too few positive weights skips the pair") {
    phi[0].setZero();
    phi[0][0] = phi[0][1] = 1.0;
    const McResult skipped = multiview_consistency_loss(poses, phi);
    CHECK(skipped.skipped_pairs == 1);
    CHECK(skipped.value == 0.0);
  }
}

TEST_CASE("consistency loss is order independent and absorbs rigid motion") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  const MultiViewSample ms = draw_sample(skel, 2, 307);
  std::vector<Eigen::Matrix3Xd> poses = truth_poses(ms);

  Rng rng(17);
  for (int q = 0; q < 15; ++q) {
    poses[0](2, q) += rng.uniform(-0.15, 0.15);
    poses[1](2, q) += rng.uniform(-0.15, 0.15);
  }
  std::vector<Eigen::VectorXd> phi(2, Eigen::VectorXd::Ones(15));
  phi[0][4] = 0.3;
  phi[1][9] = 0.6;

  const McResult fwd = multiview_consistency_loss(poses, phi);
  const McResult rev =
      multiview_consistency_loss({poses[1], poses[0]}, {phi[1], phi[0]});
  CHECK(fwd.value > 0.01);
  CHECK(fwd.value == doctest::Approx(rev.value).epsilon(1e-9));

  const auto clean = truth_poses(ms);
  const McResult before = multiview_consistency_loss(clean, phi);
  const Eigen::Matrix3d r =
      Eigen::AngleAxisd(0.8, Eigen::Vector3d(1, 2, -1).normalized())
          .toRotationMatrix();
  std::vector<Eigen::Matrix3Xd> moved = clean;
  moved[1] = (r * moved[1]).colwise() + Eigen::Vector3d(0.4, -0.2, 0.9);
  const McResult after = multiview_consistency_loss(moved, phi);
  CHECK(before.value <= 1e-8);
  CHECK(after.value <= 1e-8);
  CHECK(std::abs(after.value - before.value) <= 1e-8);
}

TEST_CASE("engine composition: weight ablation and supervised arithmetic") {
  SUBCASE("alpha = beta = 0 reduces to the anchor term") {
    BuiltBatch bb = consistent_direct(1, 2, 419);
    jitter_direct(bb, 1.5, 0.03, 5);
    bb.batch.problem.weights.alpha = 0.0;
    bb.batch.problem.weights.beta = 0.0;
    const BatchEval ev = eval_batch(bb.batch, bb.params);
    CHECK(ev.total == ev.l_h);

    const ParamLayout lay = make_layout(bb.batch);
    double ref = 0.0;
    for (int v = 0; v < 2; ++v)
      for (int q = 0; q < 15; ++q) {
        const double eu = bb.params[lay.loc_u(0, v, q)] -
                          bb.batch.samples[0].views[v].anchor_uv(0, q);
        const double evv = bb.params[lay.loc_v(0, v, q)] -
                           bb.batch.samples[0].views[v].anchor_uv(1, q);
        ref += eu * eu + evv * evv;
      }
    ref /= 30.0;
    CHECK(ev.l_h == doctest::Approx(ref).epsilon(1e-12));

    bb.batch.problem.anchor_weight = 2.5;
    const BatchEval scaled = eval_batch(bb.batch, bb.params);
    CHECK(scaled.total == doctest::Approx(2.5 * ref).epsilon(1e-12));
  }

  SUBCASE("fully supervised composition hits the stated value") {
    const SkeletonDef skel = SkeletonDef::default_human15();
    Batch b;
    b.problem.skel = skel;
    b.problem.fully_supervised = true;
    ViewSpec v = blank_view(15);
    v.anchor_mask[3] = 1;
    v.zr_gt = Eigen::VectorXd::Zero(15);
    v.depth_mask.assign(15, 0);
    v.depth_mask[5] = 1;
    v.zr_gt[5] = 0.2;
    SampleSpec ss;
    ss.views = {v};
    b.samples = {ss};

    const ParamLayout lay = make_layout(b);
    Eigen::VectorXd params = Eigen::VectorXd::Zero(lay.total);
    params[lay.loc_u(0, 0, 3)] = 0.4;
    params[lay.loc_v(0, 0, 3)] = 0.2;
    params[lay.loc_zr(0, 0, 5)] = 0.3;

    const BatchEval ev = eval_batch(b, params);
    CHECK(ev.l_h == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(ev.l_z == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(ev.total == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(ev.count_h == 1);
    CHECK(ev.count_z == 1);
    CHECK(ev.count_mc == 0);
    CHECK(ev.count_b == 0);

    b.problem.weights.psi = 0.0;
    const BatchEval no_z = eval_batch(b, params);
    CHECK(no_z.total == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("consistent noiseless batch evaluates to zero") {
  for (const bool gt_rot : {false, true}) {
    CAPTURE(gt_rot);
    BuiltBatch bb = consistent_direct(2, 4, 523, gt_rot);
    const BatchEval ev = eval_batch(bb.batch, bb.params);
    CHECK(ev.total <= 1e-8);
    CHECK(ev.l_h == 0.0);
    CHECK(ev.l_mc <= 1e-9);
    CHECK(ev.l_b <= 1e-12);
    CHECK(ev.count_h == 2 * 4 * 15);
    CHECK(ev.count_mc == 2 * 6 * 15);
    CHECK(ev.count_b == 2 * 4 * 14);
    CHECK(ev.failed_views == 0);
    CHECK(ev.skipped_pairs == 0);
    CHECK(ev.single_view_samples == 0);
  }
}

TEST_CASE("engine totals match standalone terms on a perturbed batch") {
  for (const bool gt_rot : {false, true}) {
    CAPTURE(gt_rot);
    BuiltBatch bb = consistent_direct(1, 2, 631, gt_rot);
    const ParamLayout lay = make_layout(bb.batch);
    bb.params[lay.loc_zr(0, 0, 5)] += 0.08;
    bb.params[lay.loc_zr(0, 1, 9)] -= 0.05;
    bb.params[lay.loc_u(0, 0, 7)] += 2.0;

    const BatchEval ev = eval_batch(bb.batch, bb.params);
    REQUIRE(ev.failed_views == 0);
    REQUIRE(ev.skipped_pairs == 0);

    const std::vector<Eigen::Matrix3Xd> poses = {recon_view(bb, 0, 0),
                                                 recon_view(bb, 0, 1)};
    const std::vector<Eigen::VectorXd> phi = {
        bb.batch.samples[0].views[0].phi, bb.batch.samples[0].views[1].phi};
    std::vector<Eigen::Matrix3d> rots;
    if (gt_rot) rots = bb.batch.samples[0].view_rot;
    const McResult mc = multiview_consistency_loss(poses, phi, rots);
    CHECK(mc.terms == ev.count_mc);
    CHECK(ev.l_mc * ev.count_mc ==
          doctest::Approx(mc.value).epsilon(1e-12));

    double limb_sum = 0.0;
    for (int v = 0; v < 2; ++v) {
      Pose3D pose;
      pose.joints = poses[v];
      pose.scale_state = ScaleState::normalized;
      limb_sum += limb_length_loss(pose, phi[v], bb.batch.problem.skel);
    }
    CHECK(ev.l_b * ev.count_b ==
          doctest::Approx(limb_sum).epsilon(1e-12));
  }
}

TEST_CASE("bitwise fixed point has a vanishing gradient") {
  const SkeletonDef skel = SkeletonDef::default_human15();
  const MultiViewSample ms = draw_sample(skel, 1, 733);

  Batch b;
  b.problem.skel = skel;
  SampleSpec ss;
  ss.views = {view_spec_from(ms.views[0]), view_spec_from(ms.views[0])};
  ss.view_rot = {Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()};
  b.samples = {ss};

  const ParamLayout lay = make_layout(b);
  Eigen::VectorXd params(lay.total);
  for (int v = 0; v < 2; ++v)
    for (int q = 0; q < 15; ++q) {
      params[lay.loc_u(0, v, q)] = ms.views[0].uv(0, q);
      params[lay.loc_v(0, v, q)] = ms.views[0].uv(1, q);
      params[lay.loc_zr(0, v, q)] = ms.truth[0].zr[q];
    }

  Eigen::VectorXd grad;
  const BatchEval ev = eval_batch_grad(b, params, grad);
  CHECK(ev.l_h == 0.0);
  CHECK(ev.l_mc == 0.0);
  CHECK(ev.l_b <= 1e-12);
  CHECK(ev.grad_inf_norm <= 1e-7);
  CHECK(grad.cwiseAbs().maxCoeff() <= 1e-7);

  SUBCASE("limb term alone is at its minimum") {
    b.problem.anchor_weight = 0.0;
    b.problem.weights.alpha = 0.0;
    Eigen::VectorXd g2;
    eval_batch_grad(b, params, g2);
    CHECK(g2.cwiseAbs().maxCoeff() <= 1e-7);
  }
  SUBCASE("consistency term alone is at its minimum") {
    b.problem.anchor_weight = 0.0;
    b.problem.weights.beta = 0.0;
    Eigen::VectorXd g3;
    const BatchEval only_mc = eval_batch_grad(b, params, g3);
    CHECK(only_mc.total == 0.0);
    CHECK(g3.cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("consistency gradient reaches the 2D parameters") {
  SUBCASE("direct parameterization") {
    BuiltBatch bb = consistent_direct(1, 2, 839);
    bb.batch.problem.anchor_weight = 0.0;
    bb.batch.problem.weights.beta = 0.0;
    const ParamLayout lay = make_layout(bb.batch);
    bb.params[lay.loc_u(0, 0, 3)] += 2.0;

    Eigen::VectorXd grad;
    const BatchEval ev = eval_batch_grad(bb.batch, bb.params, grad);
    REQUIRE(ev.skipped_pairs == 0);
    CHECK(ev.l_mc > 0.0);
    const double uv_grad =
        grad.segment(lay.offset[0][0], 30).cwiseAbs().maxCoeff();
    CHECK(uv_grad > 1e-6);
  }
  SUBCASE("heatmap parameterization") {
    BuiltBatch bb = consistent_heatmap(2, 907, 8);
    bb.batch.problem.anchor_weight = 0.0;
    bb.batch.problem.weights.beta = 0.0;
    const ParamLayout lay = make_layout(bb.batch);
    const auto& spec = bb.batch.samples[0].views[0];
    const HeatmapArray shifted = render_gaussian(
        bb.drawn[0].views[0].uv(0, 3) + 25.0, bb.drawn[0].views[0].uv(1, 3),
        bb.batch.problem.gauss_sigma_cells * spec.grid.stride, spec.grid);
    for (int c = 0; c < spec.grid.cells(); ++c)
      bb.params[lay.loc_score(0, 0, 3, c)] =
          shifted(c / spec.grid.width, c % spec.grid.width);

    Eigen::VectorXd grad;
    const BatchEval ev = eval_batch_grad(bb.batch, bb.params, grad);
    REQUIRE(ev.failed_views == 0);
    REQUIRE(ev.skipped_pairs == 0);
    CHECK(ev.l_mc > 0.0);
    const double score_grad =
        grad.segment(lay.loc_score(0, 0, 3, 0), spec.grid.cells())
            .cwiseAbs()
            .maxCoeff();
    CHECK(score_grad > 1e-8);
  }
}

TEST_CASE("gradient evaluation is deterministic") {
  BuiltBatch bb = consistent_direct(2, 3, 1009);
  jitter_direct(bb, 1.0, 0.05, 6);
  Eigen::VectorXd g1, g2;
  eval_batch_grad(bb.batch, bb.params, g1);
  eval_batch_grad(bb.batch, bb.params, g2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad check is exact on a quadratic objective") {
  BuiltBatch bb = consistent_direct(1, 1, 1103);
  bb.batch.problem.fully_supervised = true;
  auto& view = bb.batch.samples[0].views[0];
  view.zr_gt = bb.drawn[0].truth[0].zr;
  view.depth_mask.assign(15, 1);
  jitter_direct(bb, 0.5, 0.02, 7);

  // A quadratic has zero truncation error, so a generous step only shrinks
  // the cancellation noise in the central difference.
  const GradCheckReport rep = grad_check(bb.batch, bb.params, 1e-3);
  CHECK(rep.pass);
  CHECK(rep.checked == bb.params.size());
  CHECK(rep.excluded_kink == 0);
  CHECK(rep.max_rel_err <= 1e-9);
}

TEST_CASE("grad check passes on the weakly supervised objective") {
  BuiltBatch bb = consistent_direct(2, 2, 1201);
  jitter_direct(bb, 1.0, 0.04, 8);
  const BatchEval ev = eval_batch(bb.batch, bb.params);
  REQUIRE(ev.failed_views == 0);
  REQUIRE(ev.skipped_pairs == 0);

  const GradCheckReport rep = grad_check(bb.batch, bb.params);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-5);
  CHECK(rep.checked > 0);
  CHECK(rep.checked + rep.excluded_kink + rep.excluded_boundary ==
        bb.params.size());

  const GradCheckReport coarse = grad_check(bb.batch, bb.params, 1e-2, 1e-5);
  CHECK(coarse.max_rel_err > rep.max_rel_err);
}

TEST_CASE("grad check passes with pinned rotations") {
  BuiltBatch bb = consistent_direct(1, 3, 1301, true);
  jitter_direct(bb, 1.0, 0.04, 9);
  const BatchEval ev = eval_batch(bb.batch, bb.params);
  REQUIRE(ev.failed_views == 0);
  REQUIRE(ev.skipped_pairs == 0);

  const GradCheckReport rep = grad_check(bb.batch, bb.params);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("grad check passes in heatmap mode") {
  BuiltBatch bb = consistent_heatmap(2, 1409, 8, 0.05);
  const BatchEval ev = eval_batch(bb.batch, bb.params);
  REQUIRE(ev.failed_views == 0);
  REQUIRE(ev.skipped_pairs == 0);

  const GradCheckReport rep = grad_check(bb.batch, bb.params);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-5);
  CHECK(rep.checked > 0);
}

TEST_CASE("nonfinite gradients are reported with their origin") {
  SUBCASE("nan parameters poison the loss") {
    BuiltBatch bb = consistent_direct(1, 1, 1511);
    bb.batch.problem.fully_supervised = true;
    auto& view = bb.batch.samples[0].views[0];
    view.zr_gt = bb.drawn[0].truth[0].zr;
    view.depth_mask.assign(15, 1);
    bb.params[3] = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd grad;
    CHECK_THROWS_AS(eval_batch_grad(bb.batch, bb.params, grad),
                    NonFiniteGradient);
  }

  SUBCASE("nan reconstruction in one view poisons the gradient") {
    BuiltBatch bb = consistent_direct(1, 3, 1513);
    const ParamLayout lay = make_layout(bb.batch);
    bb.params[lay.loc_zr(0, 0, 5)] =
        std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd grad;
    CHECK_THROWS_AS(eval_batch_grad(bb.batch, bb.params, grad),
                    NonFiniteGradient);
  }

  SUBCASE("clamped tangency blows up the root-depth backward pass") {
    const SkeletonDef skel = SkeletonDef::default_human15();
    Batch b;
    b.problem.skel = skel;
    ViewSpec v = blank_view(15);
    v.k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0);
    SampleSpec ss;
    ss.views = {v};
    b.samples = {ss};

    const ParamLayout lay = make_layout(b);
    Eigen::VectorXd params = Eigen::VectorXd::Zero(lay.total);
    for (int q = 0; q < 15; ++q) {
      params[lay.loc_u(0, 0, q)] = 0.02 * (q - 7);
      params[lay.loc_v(0, 0, q)] = 0.015 * (q - 7);
    }
    params[lay.loc_u(0, 0, 0)] = -0.1;
    params[lay.loc_v(0, 0, 0)] = 0.0;
    params[lay.loc_u(0, 0, 1)] = 0.1;
    params[lay.loc_v(0, 0, 1)] = 0.0;
    params[lay.loc_zr(0, 0, 1)] = -(1.0 + 1e-8);

    const RootDepthSolve probe = solve_root_depth_detail(
        Eigen::Vector3d(0.1, 0.0, 1.0), Eigen::Vector3d(-0.1, 0.0, 1.0),
        -(1.0 + 1e-8), 0.0);
    REQUIRE(probe.sqrt_disc == 0.0);
    REQUIRE(probe.z_root > 0.0);

    CHECK(std::isfinite(eval_batch(b, params).total));
    Eigen::VectorXd grad;
    try {
      eval_batch_grad(b, params, grad);
      FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
      CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
    }
  }
}

TEST_CASE("single-view samples and dead batches are flagged") {
  const SkeletonDef skel = SkeletonDef::default_human15();

  SUBCASE("single view sets the warning flag and zero consistency") {
    BuiltBatch bb = consistent_direct(1, 1, 1601);
    const BatchEval ev = eval_batch(bb.batch, bb.params);
    CHECK(ev.single_view_samples == 1);
    CHECK(ev.l_mc == 0.0);
    CHECK(ev.count_mc == 0);
  }

  SUBCASE("a batch whose every pair fails alignment throws") {
    BuiltBatch bb = consistent_direct(1, 2, 1607);
    for (auto& v : bb.batch.samples[0].views) {
      v.phi.setZero();
      v.phi[0] = v.phi[1] = 1.0;
    }
    CHECK_THROWS_AS(eval_batch(bb.batch, bb.params), AllPairsSkipped);
  }
}

TEST_CASE("reports serialize to json") {
  BuiltBatch bb = consistent_direct(1, 2, 1709);
  jitter_direct(bb, 0.5, 0.02, 10);
  Eigen::VectorXd grad;
  const BatchEval ev = eval_batch_grad(bb.batch, bb.params, grad);
  const auto parsed = nlohmann::json::parse(ev.to_json());
  CHECK(parsed["total"].get<double>() == ev.total);
  CHECK(parsed["counts"]["mc"].get<int>() == ev.count_mc);
  CHECK(parsed["skipped_pairs"].get<int>() == 0);
  CHECK(parsed["grad_inf_norm"].get<double>() == ev.grad_inf_norm);

  const GradCheckReport rep = grad_check(bb.batch, bb.params);
  const auto rj = nlohmann::json::parse(rep.to_json());
  CHECK(rj["pass"].get<bool>() == rep.pass);
  CHECK(rj["checked"].get<int>() == rep.checked);
  CHECK(rj["max_rel_err"].get<double>() == rep.max_rel_err);
}
