#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvpose/metrics.hpp"
#include "mvpose/objective.hpp"
#include "mvpose/rng.hpp"
#include "mvpose/synth.hpp"

namespace mvpose {

std::string to_string(ParamMode mode);
ParamMode param_mode_from_string(const std::string& name);

// Per-sample, per-view free variables standing in for trained model weights:
// (u, v, zr) per joint in direct25d mode, raw h2d/hz grids in heatmap_logits
// mode. Flattened per ParamLayout of the full-dataset batch.
struct ParameterBlock {
  ParamMode mode = ParamMode::direct25d;
  Eigen::VectorXd values;
};

// Flat binary: mode as int64 LE, count as int64 LE, then count f64 values.
void write_params(const ParameterBlock& params, const std::string& path);
ParameterBlock read_params(const std::string& path);

struct TrainConfig {
  ParamMode mode = ParamMode::direct25d;
  LossWeights weights;            // psi, alpha, beta
  bool fully_supervised = false;  // anchor + psi L_z from dataset truth depths
  double anchor_weight = 1.0;
  double lambda = 50.0;
  double gauss_sigma_cells = 2.0;
  int grid_cells = 32;  // heatmap_logits training grids (cells x cells)

  double lr = 5e-4;
  double lr_drop_factor = 0.1;
  double lr_drop_frac = 0.8;  // fraction of the budget after which lr drops
  int iters = 2000;

  // Batch composition. 0 = full batch; positive values draw that many
  // labeled2d / multi-view samples per iteration from seeded streams.
  int batch_labeled = 0;
  int batch_multiview = 0;
  int view_cap = 0;  // max views per sample per iteration; 0 = no cap

  double tau = 0.5;                // 2D anchor confidence threshold
  bool use_gt_extrinsics = false;  // pin pair rotations from dataset truth
  uint64_t seed = 0;

  // Depth proposal cadence. With estimated extrinsics the gradient flow alone
  // does not reach the consistency optimum: reflected depth configurations
  // are near-consistent basins (two reflections compose to a rotation), and
  // because the pair transforms come from a squared fit while the loss is L1,
  // the stop-gradient field has attractors that are not minima of the loss.
  // Every propose_every iterations the trainer therefore runs value-gated
  // proposals per multi-view sample: depth reflections (whole sample, per
  // view, per joint), consensus re-synthesis (replace each view's depths with
  // the ones induced by the aligned cross-view average pose, seeded from each
  // base view and each view pair), and per-coordinate depth line searches.
  // A proposal is kept only when that sample's objective strictly drops, so
  // every accepted move is a descent step on the unchanged loss. 0 disables.
  int propose_every = 100;

  int history_every = 50;  // CSV row cadence
  int eval_every = 0;      // periodic EvalReport cadence; 0 = none
  double divergence_factor = 1e3;

  void validate() const;  // throws ValidationError
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// A Batch assembled from dataset samples plus the bookkeeping that maps its
// rows back to the dataset.
struct BatchBundle {
  Batch batch;
  ParamLayout layout;
  std::vector<int> sample_index;             // dataset sample per batch row
  std::vector<std::vector<int>> view_index;  // dataset view per batch view
  int anchors_dropped = 0;  // (view, joint) anchors removed by the filter
};

// Assembles the batch: anchor targets are the observed 2D; on unlabeled
// samples the per-joint anchor mask comes from pseudo_gt_filter at cfg.tau
// (a discarded pose loses all its anchors), labeled2d samples keep every
// anchor. phi always carries the observed confidences, so filtered joints
// still participate in the consistency and limb terms. heatmap grids span
// each view's observation box with margin; fully_supervised adds the truth
// depths as targets; use_gt_extrinsics pins view_rot from the truth.
BatchBundle build_batch(const Dataset& data, const TrainConfig& cfg);

// Subset form for minibatches: `rows` picks dataset samples; `view_rng`
// draws the retained views when view_cap applies (nullptr keeps the first
// view_cap views).
BatchBundle build_batch(const Dataset& data, const TrainConfig& cfg,
                        const std::vector<int>& rows, Rng* view_rng);

// direct25d: (u, v) start at the observed 2D and zr draws from
// Uniform[-0.2, 0.2] with the root forced to 0. heatmap_logits: h2d starts
// as a unit-peak Gaussian at the observed 2D, hz starts at zero.
ParameterBlock init_params(const BatchBundle& bundle, Rng& rng);
ParameterBlock init_params(const Dataset& data, const TrainConfig& cfg,
                           Rng& rng);

struct AdamState {
  Eigen::VectorXd m, v;
  int64_t step = 0;
};

// In-place Adam update with bias correction. Allocates zero moments on first
// use; throws NonFiniteUpdate when any updated value is not finite.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct HistoryRow {
  int iter = 0;
  double lr = 0.0;
  double total = 0.0, l_h = 0.0, l_z = 0.0, l_mc = 0.0, l_b = 0.0;
  double grad_inf_norm = 0.0;
  int skipped_pairs = 0, failed_views = 0;
};

struct TrainResult {
  ParameterBlock params;
  std::vector<HistoryRow> history;                // one row per iteration
  std::vector<std::pair<int, EvalReport>> evals;  // at eval_every cadence
  std::vector<std::string> warnings;
  double initial_total = 0.0;
  double final_total = 0.0;  // forward pass at the trained parameters
  int proposals = 0;         // accepted depth proposals
};

// Full-batch Adam by default; batch_labeled/batch_multiview switch to seeded
// minibatches over the same parameter vector. The learning rate drops by
// lr_drop_factor at lr_drop_frac of the budget. Throws DivergenceDetected
// when the loss exceeds divergence_factor times its initial value.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

// Decodes the (sample, view) segment of `values` into a 2.5D pose
// (soft-argmax decode in heatmap mode, zr re-centered at the root).
Pose25D decode_view(const BatchBundle& bundle, const Eigen::VectorXd& values,
                    int sample, int view);

// Decode every view, reconstruct, recover the metric scale, and score
// against the dataset truth. Views whose reconstruction throws are excluded
// and counted in the report.
EvalReport evaluate(const BatchBundle& bundle, const Eigen::VectorXd& values,
                    const Dataset& data);
EvalReport evaluate(const ParameterBlock& params, const Dataset& data,
                    const TrainConfig& cfg);

// Scores already-reconstructed normalized camera-frame poses, one per
// (sample, view), shaped like data.samples.
EvalReport evaluate_poses(const std::vector<std::vector<Pose3D>>& poses,
                          const Dataset& data);

// history.csv content: header plus every `every`-th row and the last row.
std::string history_csv(const std::vector<HistoryRow>& rows, int every);

// Writes config.json, params.bin, history.csv, evals.jsonl, report.json.
void save_run(const std::string& dir, const TrainConfig& cfg,
              const TrainResult& result, const EvalReport& final_eval);

struct GradSuiteReport {
  int cases = 0, passed = 0;
  int checked = 0, excluded_kink = 0, excluded_boundary = 0;
  double max_rel_err = 0.0;
  int worst_case = -1;
  bool pass = false;

  std::string to_json() const;
};

// Random small problems cycling over {anchor, limb, consistency, full}
// objectives in both parameter modes, each run through grad_check.
GradSuiteReport run_gradcheck_suite(uint64_t seed, int cases,
                                    double step = 1e-5,
                                    double tolerance = 1e-5);

}  // namespace mvpose
