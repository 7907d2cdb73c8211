#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mvpose/camera.hpp"
#include "mvpose/heatmap.hpp"
#include "mvpose/pose.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

struct LossWeights {
  double psi = 5.0;     // depth loss (fully supervised)
  double alpha = 10.0;  // multi-view consistency
  double beta = 100.0;  // limb length
};

// How predictions are parameterized: either per-joint (u, v, zr) triples, or
// raw per-joint score and latent-depth maps decoded through the softmax /
// soft-argmax / depth-readout chain.
enum class ParamMode { direct25d, heatmap_logits };

// Per-view training inputs. phi is a constant: no gradient flows into it.
struct ViewSpec {
  CameraIntrinsics k;
  HeatmapGrid grid;                  // heatmap_logits mode only
  Eigen::Matrix2Xd anchor_uv;        // 2 x J target coordinates
  std::vector<uint8_t> anchor_mask;  // joints with a usable 2D target
  Eigen::VectorXd phi;               // per-joint confidences
  Eigen::VectorXd zr_gt;             // fully supervised targets (empty in WS)
  std::vector<uint8_t> depth_mask;   // joints with a depth target
};

struct SampleSpec {
  std::vector<ViewSpec> views;
  // When sized like views, pair rotations are taken from these ground-truth
  // world-to-camera rotations (rot[a] * rot[b]^T) instead of being estimated;
  // translations are still fit to the predictions.
  std::vector<Eigen::Matrix3d> view_rot;

  int view_count() const { return int(views.size()); }
};

struct ProblemSpec {
  SkeletonDef skel;
  ParamMode mode = ParamMode::direct25d;
  LossWeights weights;
  bool fully_supervised = false;  // L_H + psi L_z instead of L_H + a L_MC + b L_B
  double anchor_weight = 1.0;     // scales the 2D anchor term
  double lambda = 50.0;           // softmax temperature
  double gauss_sigma_cells = 2.0; // target Gaussian width, in grid cells
};

struct Batch {
  ProblemSpec problem;
  std::vector<SampleSpec> samples;
};

// Flat parameter vector layout. direct25d packs [u(J), v(J), zr(J)] per view;
// heatmap_logits packs [scores(J*cells), hz(J*cells)] per view, each joint's
// map row-major. zr entries are raw: the pipeline re-centers on the root.
struct ParamLayout {
  ParamMode mode = ParamMode::direct25d;
  int joints = 0;
  std::vector<std::vector<int>> offset;  // [sample][view]
  std::vector<std::vector<int>> cells;   // [sample][view], 0 in direct mode
  int total = 0;

  int view_params(int s, int v) const {
    return mode == ParamMode::direct25d ? 3 * joints
                                        : 2 * joints * cells[s][v];
  }
  int loc_u(int s, int v, int j) const { return offset[s][v] + j; }
  int loc_v(int s, int v, int j) const { return offset[s][v] + joints + j; }
  int loc_zr(int s, int v, int j) const {
    return offset[s][v] + 2 * joints + j;
  }
  int loc_score(int s, int v, int j, int c) const {
    return offset[s][v] + j * cells[s][v] + c;
  }
  int loc_hz(int s, int v, int j, int c) const {
    return offset[s][v] + (joints + j) * cells[s][v] + c;
  }
};

ParamLayout make_layout(const Batch& batch);

// Component values are averages over their contributing terms, so the weights
// stay batch-size independent: total = w_anchor*l_h + alpha*l_mc + beta*l_b
// (weakly supervised) or w_anchor*l_h + psi*l_z (fully supervised).
struct BatchEval {
  double total = 0.0;
  double l_h = 0.0, l_z = 0.0, l_mc = 0.0, l_b = 0.0;
  int count_h = 0, count_z = 0, count_mc = 0, count_b = 0;
  int skipped_pairs = 0, failed_views = 0, single_view_samples = 0;
  double grad_inf_norm = 0.0;
  bool has_grad = false;

  std::string to_json() const;
};

// Snapshot of every data-dependent discrete decision plus the per-pair rigid
// transforms, so finite differences probe the same smooth branch the analytic
// gradient lives on. Root depths stay live; only the alignment solves and the
// skip/ok flags are pinned.
struct FrozenPair {
  bool skipped = true;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct FrozenContext {
  std::vector<std::vector<FrozenPair>> pairs;  // [sample][pair, a<b in order]
  std::vector<std::vector<uint8_t>> view_ok;   // [sample][view]
};

BatchEval eval_batch(const Batch& batch, const Eigen::VectorXd& params);

// Forward plus exact reverse-mode gradient. R, t, and phi get no gradient;
// everything else (softmax, soft-argmax, depth readout, root-depth quadratic,
// reconstruction, both losses) is differentiated in closed form.
// Throws NonFiniteGradient naming the first offending sample.
BatchEval eval_batch_grad(const Batch& batch, const Eigen::VectorXd& params,
                          Eigen::VectorXd& grad);

FrozenContext freeze_context(const Batch& batch, const Eigen::VectorXd& params);

// Evaluate on the frozen branch. l1_signs, when given, receives the signs of
// every weighted L1 residual coordinate (in both comparison frames) in
// deterministic order; comparing the vectors at +/-h detects kink crossings.
// Throws if a view recorded as ok can no longer reconstruct at these
// parameters.
BatchEval eval_frozen(const Batch& batch, const Eigen::VectorXd& params,
                      const FrozenContext& ctx,
                      std::vector<int8_t>* l1_signs = nullptr);

// Gradient on the frozen branch: the same reverse-mode pass as
// eval_batch_grad, but with the pair transforms and skip decisions pinned by
// ctx instead of re-estimated from the current parameters.
BatchEval eval_frozen_grad(const Batch& batch, const Eigen::VectorXd& params,
                           const FrozenContext& ctx, Eigen::VectorXd& grad);

struct GradCheckReport {
  int checked = 0;
  int excluded_kink = 0;      // perturbation flips an L1 residual sign
  int excluded_boundary = 0;  // perturbation leaves the evaluable region
  double max_rel_err = 0.0;
  int worst_param = -1;
  double tolerance = 0.0;
  bool pass = false;

  std::string to_json() const;
};

// Central finite differences against the analytic gradient, on the frozen
// branch. rel err = |g - fd| / max(|g|, |fd|, 1e-3).
GradCheckReport grad_check(const Batch& batch, const Eigen::VectorXd& params,
                           double step = 1e-5, double tolerance = 1e-5);

// Standalone loss terms matching the batch engine's accumulation.

// Mean over visible joints and cells of (raw h2d - unit-peak Gaussian)^2.
// Empty visible set gives 0.
double heatmap_loss(const HeatmapStack& pred,
                    const Eigen::Matrix2Xd& gt_centers,
                    const std::vector<uint8_t>& visible, double sigma_px);

// Mean squared error over masked joints; empty mask gives 0.
double depth_loss(const Eigen::VectorXd& zr_pred, const Eigen::VectorXd& zr_gt,
                  const std::vector<uint8_t>& mask);

struct McResult {
  double value = 0.0;  // raw confidence-weighted L1 sum over pairs and joints
  int terms = 0;       // contributing (pair, joint) entries
  int skipped_pairs = 0;
  bool single_view = false;
};

// Sum over unordered view pairs of the confidence-weighted L1 discrepancy
// after rigid alignment. Each pair contributes the mean of the residual's L1
// norm measured in both views' frames, 0.5*(|r|_1 + |R^T r|_1), so the value
// is independent of view order and equals half the ordered-pair sum. Pass
// world-to-camera rotations to pin the pair rotations to ground truth.
McResult multiview_consistency_loss(
    const std::vector<Eigen::Matrix3Xd>& poses,
    const std::vector<Eigen::VectorXd>& phi,
    const std::vector<Eigen::Matrix3d>& view_rot = {});

// Raw sum over edges of phi_j phi_j' (|p_j - p_j'| - mean_normalized_length)^2.
double limb_length_loss(const Pose3D& pose, const Eigen::VectorXd& phi,
                        const SkeletonDef& skel);

}  // namespace mvpose
