#include "mvpose/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "mvpose/errors.hpp"
#include "mvpose/geometry.hpp"
#include "mvpose/heatmap.hpp"
#include <json.hpp>

namespace mvpose {

namespace {

using json = nlohmann::json;

constexpr double kPckRadiusMm = 150.0;

// Square grid over the view's observation box; long-lens rigs put limbs well
// outside the nominal image, so the span carries a generous margin.
HeatmapGrid grid_for_view(const ViewObservation& obs, int cells) {
  const double umin = obs.uv.row(0).minCoeff();
  const double umax = obs.uv.row(0).maxCoeff();
  const double vmin = obs.uv.row(1).minCoeff();
  const double vmax = obs.uv.row(1).maxCoeff();
  const double span = 1.5 * std::max(umax - umin, vmax - vmin) + 48.0;
  const double cu = 0.5 * (umin + umax);
  const double cv = 0.5 * (vmin + vmax);
  return HeatmapGrid::for_span(cu - 0.5 * span, cv - 0.5 * span, span, cells);
}

// k distinct indices from [0, n), ascending.
std::vector<int> pick_distinct(int n, int k, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  for (int i = 0; i < k; ++i)
    std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> pick_rows(const std::vector<int>& pool, int k, Rng& rng) {
  if (k >= int(pool.size())) return pool;
  std::vector<int> rows;
  rows.reserve(k);
  for (int i : pick_distinct(int(pool.size()), k, rng)) rows.push_back(pool[i]);
  return rows;
}

void gather_segments(const ParamLayout& full, const Eigen::VectorXd& full_vals,
                     const BatchBundle& sub, Eigen::VectorXd& sub_vals) {
  sub_vals.resize(sub.layout.total);
  for (size_t r = 0; r < sub.sample_index.size(); ++r) {
    const int ds = sub.sample_index[r];
    for (size_t v = 0; v < sub.view_index[r].size(); ++v) {
      const int dv = sub.view_index[r][v];
      const int n = sub.layout.view_params(int(r), int(v));
      sub_vals.segment(sub.layout.offset[r][v], n) =
          full_vals.segment(full.offset[ds][dv], n);
    }
  }
}

void scatter_segments(const ParamLayout& full, const BatchBundle& sub,
                      const Eigen::VectorXd& sub_grad,
                      Eigen::VectorXd& full_grad) {
  for (size_t r = 0; r < sub.sample_index.size(); ++r) {
    const int ds = sub.sample_index[r];
    for (size_t v = 0; v < sub.view_index[r].size(); ++v) {
      const int dv = sub.view_index[r][v];
      const int n = sub.layout.view_params(int(r), int(v));
      full_grad.segment(full.offset[ds][dv], n) =
          sub_grad.segment(sub.layout.offset[r][v], n);
    }
  }
}

// Objective value of a single-sample batch plus its failed-view count;
// numerical failures count as +inf so a proposal landing in a degenerate
// configuration is simply rejected.
struct SampleEval {
  double total = std::numeric_limits<double>::infinity();
  int failed = std::numeric_limits<int>::max();
};

SampleEval sample_eval(const Batch& sub, const Eigen::VectorXd& x) {
  try {
    const BatchEval e = eval_batch(sub, x);
    return {e.total, e.failed_views};
  } catch (const NumericalError&) {
    return {};
  }
}

// A view that fails reconstruction drops its consistency and limb terms from
// the mean-normalized total, so knocking a view out can lower the value while
// destroying the pose. Proposals therefore compare candidates as +inf
// whenever they reconstruct fewer views than the current state.
double masked_total(const Batch& sub, const Eigen::VectorXd& x,
                    int fail_base) {
  const SampleEval e = sample_eval(sub, x);
  return e.failed > fail_base ? std::numeric_limits<double>::infinity()
                              : e.total;
}

// Proposals must beat the current value by a margin, so every accepted move
// is a strict descent step on the unchanged objective.
double descent_gate(double total) {
  return total - std::max(1e-12, 1e-9 * total);
}

Pose25D decode_direct(const ParamLayout& lay, const Eigen::VectorXd& x, int v,
                      int root, const Eigen::VectorXd& phi) {
  Pose25D p;
  p.u.resize(lay.joints);
  p.v.resize(lay.joints);
  p.zr.resize(lay.joints);
  for (int q = 0; q < lay.joints; ++q) {
    p.u[q] = x[lay.loc_u(0, v, q)];
    p.v[q] = x[lay.loc_v(0, v, q)];
    p.zr[q] = x[lay.loc_zr(0, v, q)];
  }
  p.zr.array() -= p.zr[root];
  p.phi = phi;
  return p;
}

// Index of pair (a, b), a < b, in a sample's frozen pair list.
int pair_index(int a, int b, int nv) {
  int idx = 0;
  for (int i = 0; i < nv; ++i)
    for (int j = i + 1; j < nv; ++j) {
      if (i == a && j == b) return idx;
      ++idx;
    }
  return -1;
}

// Consensus proposal (direct25d): reconstruct each view's pose, average the
// views in a common frame via the frozen pair fits, and rewrite every view's
// relative depths from that average. Candidates are seeded from each view's
// frame (all-view average) and from each pair (two-view average); the best
// strict improvement is kept. Pulls a sample out of mutually inconsistent
// depth states that gradient steps only crawl along.
bool consensus_pass(const Batch& sub, const ParamLayout& lay,
                    const SkeletonDef& skel, Eigen::VectorXd& x,
                    double& total, int& fail_base) {
  const SampleSpec& spec = sub.samples[0];
  const int nv = int(spec.views.size());
  std::vector<Pose3D> poses(nv);
  FrozenContext ctx;
  try {
    ctx = freeze_context(sub, x);
    for (int v = 0; v < nv; ++v) {
      if (!ctx.view_ok[0][v]) return false;
      poses[v] =
          reconstruct(decode_direct(lay, x, v, skel.root, spec.views[v].phi),
                      spec.views[v].k, skel);
    }
  } catch (const NumericalError&) {
    return false;
  }
  // Map view b points into view a's frame through the recorded fits.
  auto to_frame = [&](int a, int b,
                      const Eigen::Matrix3Xd& pb) -> Eigen::Matrix3Xd {
    if (a == b) return pb;
    if (a < b) {
      const FrozenPair& fp = ctx.pairs[0][pair_index(a, b, nv)];
      return (fp.rotation * pb).colwise() + fp.translation;
    }
    const FrozenPair& fp = ctx.pairs[0][pair_index(b, a, nv)];
    return fp.rotation.transpose() * (pb.colwise() - fp.translation);
  };
  auto write_cand = [&](int base, const Eigen::Matrix3Xd& xbar,
                        Eigen::VectorXd& cand) {
    for (int v = 0; v < nv; ++v) {
      const Eigen::Matrix3Xd y = to_frame(v, base, xbar);
      for (int q = 0; q < lay.joints; ++q)
        cand[lay.loc_zr(0, v, q)] = y(2, q) - y(2, skel.root);
    }
  };
  double best = descent_gate(total);
  Eigen::VectorXd best_cand;
  for (int w = 0; w < nv; ++w) {
    Eigen::Matrix3Xd xbar = Eigen::Matrix3Xd::Zero(3, lay.joints);
    for (int v = 0; v < nv; ++v) xbar += to_frame(w, v, poses[v].joints);
    xbar /= double(nv);
    Eigen::VectorXd cand = x;
    write_cand(w, xbar, cand);
    const double f = masked_total(sub, cand, fail_base);
    if (f < best) {
      best = f;
      best_cand = std::move(cand);
    }
  }
  for (int a = 0; a < nv; ++a)
    for (int b = a + 1; b < nv; ++b) {
      const Eigen::Matrix3Xd xbar =
          0.5 * (poses[a].joints + to_frame(a, b, poses[b].joints));
      Eigen::VectorXd cand = x;
      write_cand(a, xbar, cand);
      const double f = masked_total(sub, cand, fail_base);
      if (f < best) {
        best = f;
        best_cand = std::move(cand);
      }
    }
  if (best_cand.size() == 0) return false;
  x = std::move(best_cand);
  const SampleEval e = sample_eval(sub, x);
  total = e.total;
  fail_base = e.failed;
  return true;
}

// Per-coordinate search over one relative depth at a time: coarse scan of
// +-0.5 around the current value, then a golden-section polish of the best
// cell. Catches single-joint valleys the block moves step over.
int line_pass(const Batch& sub, const ParamLayout& lay, int root,
              Eigen::VectorXd& x, double& total, int& fail_base) {
  int accepted = 0;
  const int nv = int(sub.samples[0].views.size());
  constexpr double kStep = 0.02;
  constexpr double kGolden = 0.6180339887498949;
  for (int v = 0; v < nv; ++v)
    for (int q = 0; q < lay.joints; ++q) {
      if (q == root) continue;
      const int idx = lay.loc_zr(0, v, q);
      auto feval = [&](double z) {
        x[idx] = z;
        return masked_total(sub, x, fail_base);
      };
      const double z0 = x[idx];
      const double f0 = total;
      double bz = z0, bf = f0;
      for (int k = -25; k <= 25; ++k) {
        if (k == 0) continue;
        const double f = feval(z0 + kStep * k);
        if (f < bf) {
          bf = f;
          bz = x[idx];
        }
      }
      double a = bz - kStep, b = bz + kStep;
      double c1 = b - kGolden * (b - a), c2 = a + kGolden * (b - a);
      double f1 = feval(c1);
      double f2 = feval(c2);
      for (int t = 0; t < 25; ++t) {
        if (f1 < f2) {
          b = c2;
          c2 = c1;
          f2 = f1;
          c1 = b - kGolden * (b - a);
          f1 = feval(c1);
        } else {
          a = c1;
          c1 = c2;
          f1 = f2;
          c2 = a + kGolden * (b - a);
          f2 = feval(c2);
        }
      }
      const double zb = f1 < f2 ? c1 : c2;
      const double fb = std::min(f1, f2);
      const double fbest = std::min(fb, bf);
      if (fbest < descent_gate(f0)) {
        x[idx] = fb < bf ? zb : bz;
        const SampleEval e = sample_eval(sub, x);
        total = e.total;
        fail_base = e.failed;
        ++accepted;
      } else {
        x[idx] = z0;
      }
    }
  return accepted;
}

// Compound rescue move for a sample whose total is an extreme outlier with
// stalled progress: descend the single-sample objective for `iters`
// iterations (a tenth of the rate over the last quarter, for polish) with
// consensus and line moves at every hundredth iteration, and keep the end
// state only if it strictly beats the starting one. Warm bursts
// (reinit=false) finish a crawl at full rate after the global schedule has
// dropped; cold bursts (reinit=true) first redraw the relative depths the way
// initialization does, hopping out of basins no local move can leave. Gated
// end to end, either form is an ordinary descent step on the unchanged
// objective.
bool rescue_burst(const Batch& sub, const ParamLayout& lay,
                  const SkeletonDef& skel, double lr, bool reinit, int iters,
                  Rng& rng, Eigen::VectorXd& x, double& total,
                  int& fail_base) {
  const int nv = int(sub.samples[0].views.size());
  Eigen::VectorXd cand = x;
  if (reinit) {
    for (int v = 0; v < nv; ++v) {
      for (int q = 0; q < lay.joints; ++q)
        cand[lay.loc_zr(0, v, q)] = rng.uniform(-0.2, 0.2);
      cand[lay.loc_zr(0, v, skel.root)] = 0.0;
    }
  }
  SampleEval e = sample_eval(sub, cand);
  if (!std::isfinite(e.total)) return false;
  double ct = e.total;
  int cf = e.failed;
  const Eigen::VectorXd burst_start = cand;
  AdamState st;
  Eigen::VectorXd g;
  try {
    for (int it = 1; it <= iters; ++it) {
      eval_batch_grad(sub, cand, g);
      adam_step(cand, g, st, 4 * it > 3 * iters ? 0.1 * lr : lr);
      if (it % 100 == 0) {
        e = sample_eval(sub, cand);
        if (!std::isfinite(e.total)) return false;
        ct = e.total;
        cf = e.failed;
        consensus_pass(sub, lay, skel, cand, ct, cf);
        line_pass(sub, lay, skel.root, cand, ct, cf);
        consensus_pass(sub, lay, skel, cand, ct, cf);
      }
    }
  } catch (const NumericalError&) {
    return false;
  }
  e = sample_eval(sub, cand);
  if (!std::isfinite(e.total)) return false;
  // Pattern extrapolation along the burst displacement, doubling the step
  // until the objective stops improving.
  const Eigen::VectorXd dir = cand - burst_start;
  if (dir.cwiseAbs().maxCoeff() > 0.0) {
    double best_t = 0.0, best_f = descent_gate(e.total);
    for (double step = 1.0; step <= 32.0; step *= 2.0) {
      const Eigen::VectorXd ext = cand + step * dir;
      const double f = masked_total(sub, ext, e.failed);
      if (f < best_f) {
        best_f = f;
        best_t = step;
      } else if (best_t > 0.0) {
        break;
      }
    }
    if (best_t > 0.0) {
      cand += best_t * dir;
      e = sample_eval(sub, cand);
      if (!std::isfinite(e.total)) return false;
    }
  }
  if (e.total < descent_gate(total) && e.failed <= fail_base) {
    x = std::move(cand);
    total = e.total;
    fail_base = e.failed;
    return true;
  }
  return false;
}

// Shared metric accumulator for evaluate / evaluate_poses.
struct ViewScore {
  Eigen::VectorXd per_joint;
  double sum_m = 0, sum_n = 0, sum_p = 0;
  double sum_pck = 0, sum_npck = 0, sum_depth = 0;
  int evaluated = 0;

  explicit ViewScore(int joints) : per_joint(Eigen::VectorXd::Zero(joints)) {}

  void add(const Pose3D& normalized, const ViewTruth& truth,
           const SkeletonDef& skel) {
    const double scale = recover_scale(normalized, skel);
    const Eigen::Matrix3Xd pred_mm = scale * normalized.joints;
    const Eigen::Matrix3Xd& gt = truth.pose_cam_mm;
    sum_m += mpjpe(pred_mm, gt, skel.root);
    sum_n += nmpjpe(pred_mm, gt, skel.root);
    sum_p += pmpjpe(pred_mm, gt);
    sum_pck += pck(pred_mm, gt, skel.root, kPckRadiusMm);
    sum_npck += npck(pred_mm, gt, skel.root, kPckRadiusMm);
    const Eigen::Vector3d pr = pred_mm.col(skel.root);
    const Eigen::Vector3d gr = gt.col(skel.root);
    for (int q = 0; q < int(per_joint.size()); ++q)
      per_joint[q] += ((pred_mm.col(q) - pr) - (gt.col(q) - gr)).norm();
    const double z_root = normalized.joints(2, skel.root);
    double depth = 0;
    for (int q = 0; q < int(per_joint.size()); ++q)
      depth += std::abs((normalized.joints(2, q) - z_root) - truth.zr[q]);
    sum_depth += depth / double(per_joint.size());
    ++evaluated;
  }

  EvalReport report(int excluded) const {
    EvalReport rep;
    rep.evaluated_views = evaluated;
    rep.excluded_views = excluded;
    rep.per_joint_mpjpe_mm = per_joint;
    if (evaluated > 0) {
      rep.mpjpe_mm = sum_m / evaluated;
      rep.nmpjpe_mm = sum_n / evaluated;
      rep.pmpjpe_mm = sum_p / evaluated;
      rep.pck_percent = sum_pck / evaluated;
      rep.npck_percent = sum_npck / evaluated;
      rep.depth_abs_err = sum_depth / evaluated;
      rep.per_joint_mpjpe_mm /= double(evaluated);
    }
    return rep;
  }
};

}  // namespace

std::string to_string(ParamMode mode) {
  return mode == ParamMode::direct25d ? "direct25d" : "heatmap_logits";
}

ParamMode param_mode_from_string(const std::string& name) {
  if (name == "direct25d") return ParamMode::direct25d;
  if (name == "heatmap_logits") return ParamMode::heatmap_logits;
  throw ValidationError("unknown parameter mode: " + name);
}

void TrainConfig::validate() const {
  if (iters <= 0) throw ValidationError("iteration budget must be positive");
  if (lr <= 0) throw ValidationError("learning rate must be positive");
  if (lr_drop_factor <= 0)
    throw ValidationError("lr_drop_factor must be positive");
  if (lr_drop_frac < 0 || lr_drop_frac > 1)
    throw ValidationError("lr_drop_frac must lie in [0, 1]");
  if (weights.psi < 0 || weights.alpha < 0 || weights.beta < 0)
    throw ValidationError("loss weights must be nonnegative");
  if (anchor_weight < 0)
    throw ValidationError("anchor_weight must be nonnegative");
  if (lambda < 0) throw ValidationError("lambda must be nonnegative");
  if (gauss_sigma_cells <= 0)
    throw ValidationError("gauss_sigma_cells must be positive");
  if (grid_cells < 2) throw ValidationError("grid_cells must be at least 2");
  if (batch_labeled < 0 || batch_multiview < 0 || view_cap < 0)
    throw ValidationError("batch composition counts must be nonnegative");
  if (tau < 0 || tau > 1) throw ValidationError("tau must lie in [0, 1]");
  if (propose_every < 0)
    throw ValidationError("propose_every must be nonnegative");
  if (history_every < 1) throw ValidationError("history_every must be >= 1");
  if (eval_every < 0) throw ValidationError("eval_every must be nonnegative");
  if (divergence_factor <= 1)
    throw ValidationError("divergence_factor must exceed 1");
}

std::string TrainConfig::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["psi"] = weights.psi;
  j["alpha"] = weights.alpha;
  j["beta"] = weights.beta;
  j["fully_supervised"] = fully_supervised;
  j["anchor_weight"] = anchor_weight;
  j["lambda"] = lambda;
  j["gauss_sigma_cells"] = gauss_sigma_cells;
  j["grid_cells"] = grid_cells;
  j["lr"] = lr;
  j["lr_drop_factor"] = lr_drop_factor;
  j["lr_drop_frac"] = lr_drop_frac;
  j["iters"] = iters;
  j["batch_labeled"] = batch_labeled;
  j["batch_multiview"] = batch_multiview;
  j["view_cap"] = view_cap;
  j["tau"] = tau;
  j["use_gt_extrinsics"] = use_gt_extrinsics;
  j["seed"] = seed;
  j["propose_every"] = propose_every;
  j["history_every"] = history_every;
  j["eval_every"] = eval_every;
  j["divergence_factor"] = divergence_factor;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad train config JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    c.mode = param_mode_from_string(j.value("mode", to_string(c.mode)));
    c.weights.psi = j.value("psi", c.weights.psi);
    c.weights.alpha = j.value("alpha", c.weights.alpha);
    c.weights.beta = j.value("beta", c.weights.beta);
    c.fully_supervised = j.value("fully_supervised", c.fully_supervised);
    c.anchor_weight = j.value("anchor_weight", c.anchor_weight);
    c.lambda = j.value("lambda", c.lambda);
    c.gauss_sigma_cells = j.value("gauss_sigma_cells", c.gauss_sigma_cells);
    c.grid_cells = j.value("grid_cells", c.grid_cells);
    c.lr = j.value("lr", c.lr);
    c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
    c.lr_drop_frac = j.value("lr_drop_frac", c.lr_drop_frac);
    c.iters = j.value("iters", c.iters);
    c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
    c.batch_multiview = j.value("batch_multiview", c.batch_multiview);
    c.view_cap = j.value("view_cap", c.view_cap);
    c.tau = j.value("tau", c.tau);
    c.use_gt_extrinsics = j.value("use_gt_extrinsics", c.use_gt_extrinsics);
    c.seed = j.value("seed", c.seed);
    c.propose_every = j.value("propose_every", c.propose_every);
    c.history_every = j.value("history_every", c.history_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad train config field: ") + e.what());
  }
  c.validate();
  return c;
}

void write_params(const ParameterBlock& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  const int64_t mode = params.mode == ParamMode::direct25d ? 0 : 1;
  const int64_t count = params.values.size();
  out.write(reinterpret_cast<const char*>(&mode), sizeof(mode));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(params.values.data()),
            std::streamsize(sizeof(double)) * count);
  if (!out) throw ValidationError("failed writing " + path);
}

ParameterBlock read_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  int64_t mode = 0, count = 0;
  in.read(reinterpret_cast<char*>(&mode), sizeof(mode));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || (mode != 0 && mode != 1) || count < 0)
    throw ValidationError("bad parameter file header in " + path);
  ParameterBlock pb;
  pb.mode = mode == 0 ? ParamMode::direct25d : ParamMode::heatmap_logits;
  pb.values.resize(count);
  in.read(reinterpret_cast<char*>(pb.values.data()),
          std::streamsize(sizeof(double)) * count);
  if (!in) throw ValidationError("truncated parameter file " + path);
  return pb;
}

BatchBundle build_batch(const Dataset& data, const TrainConfig& cfg,
                        const std::vector<int>& rows, Rng* view_rng) {
  cfg.validate();
  if (data.samples.empty()) throw ValidationError("dataset is empty");
  if (rows.empty()) throw ValidationError("batch has no samples");
  const SkeletonDef& skel = data.skel;
  const int j = skel.joint_count();

  BatchBundle out;
  out.batch.problem.skel = skel;
  out.batch.problem.mode = cfg.mode;
  out.batch.problem.weights = cfg.weights;
  out.batch.problem.fully_supervised = cfg.fully_supervised;
  out.batch.problem.anchor_weight = cfg.anchor_weight;
  out.batch.problem.lambda = cfg.lambda;
  out.batch.problem.gauss_sigma_cells = cfg.gauss_sigma_cells;

  for (int row : rows) {
    if (row < 0 || row >= int(data.samples.size()))
      throw ValidationError("sample index out of range");
    const MultiViewSample& ms = data.samples[row];
    const int nv = ms.view_count();
    std::vector<int> keep(nv);
    std::iota(keep.begin(), keep.end(), 0);
    if (cfg.view_cap > 0 && nv > cfg.view_cap) {
      if (view_rng)
        keep = pick_distinct(nv, cfg.view_cap, *view_rng);
      else
        keep.resize(cfg.view_cap);
    }

    SampleSpec ss;
    for (int dv : keep) {
      const ViewObservation& obs = ms.views[dv];
      ViewSpec vs;
      vs.k = obs.k;
      vs.anchor_uv = obs.uv;
      vs.phi = obs.phi;
      vs.anchor_mask.assign(j, 1);
      if (!ms.labeled2d) {
        const PseudoGtFilterResult f =
            pseudo_gt_filter(obs.phi, skel.scale_k, skel.scale_l, cfg.tau);
        for (int q = 0; q < j; ++q) {
          vs.anchor_mask[q] = f.discard_pose ? 0 : f.keep[q];
          if (!vs.anchor_mask[q]) ++out.anchors_dropped;
        }
      }
      if (cfg.fully_supervised) {
        vs.zr_gt = ms.truth[dv].zr;
        vs.depth_mask.assign(j, 1);
      }
      if (cfg.mode == ParamMode::heatmap_logits)
        vs.grid = grid_for_view(obs, cfg.grid_cells);
      ss.views.push_back(std::move(vs));
    }
    if (cfg.use_gt_extrinsics)
      for (int dv : keep) ss.view_rot.push_back(ms.truth[dv].extrinsics.rotation);

    out.batch.samples.push_back(std::move(ss));
    out.sample_index.push_back(row);
    out.view_index.push_back(std::move(keep));
  }
  out.layout = make_layout(out.batch);
  return out;
}

BatchBundle build_batch(const Dataset& data, const TrainConfig& cfg) {
  std::vector<int> rows(data.samples.size());
  std::iota(rows.begin(), rows.end(), 0);
  // The full bundle defines the parameter vector, so it keeps every view;
  // view_cap only thins per-iteration batches.
  TrainConfig uncapped = cfg;
  uncapped.view_cap = 0;
  return build_batch(data, uncapped, rows, nullptr);
}

ParameterBlock init_params(const BatchBundle& bundle, Rng& rng) {
  const ParamLayout& lay = bundle.layout;
  const ProblemSpec& problem = bundle.batch.problem;
  const int j = lay.joints;
  const int root = problem.skel.root;

  ParameterBlock pb;
  pb.mode = lay.mode;
  pb.values = Eigen::VectorXd::Zero(lay.total);
  for (size_t s = 0; s < bundle.batch.samples.size(); ++s) {
    const SampleSpec& ss = bundle.batch.samples[s];
    for (size_t v = 0; v < ss.views.size(); ++v) {
      const ViewSpec& vs = ss.views[v];
      const int si = int(s), vi = int(v);
      if (lay.mode == ParamMode::direct25d) {
        for (int q = 0; q < j; ++q) {
          pb.values[lay.loc_u(si, vi, q)] = vs.anchor_uv(0, q);
          pb.values[lay.loc_v(si, vi, q)] = vs.anchor_uv(1, q);
          pb.values[lay.loc_zr(si, vi, q)] = rng.uniform(-0.2, 0.2);
        }
        pb.values[lay.loc_zr(si, vi, root)] = 0.0;
      } else {
        const double sigma_px = problem.gauss_sigma_cells * vs.grid.stride;
        for (int q = 0; q < j; ++q) {
          const HeatmapArray g = render_gaussian(
              vs.anchor_uv(0, q), vs.anchor_uv(1, q), sigma_px, vs.grid);
          for (int c = 0; c < vs.grid.cells(); ++c)
            pb.values[lay.loc_score(si, vi, q, c)] = g.data()[c];
          // hz stays zero
        }
      }
    }
  }
  return pb;
}

ParameterBlock init_params(const Dataset& data, const TrainConfig& cfg,
                           Rng& rng) {
  return init_params(build_batch(data, cfg), rng);
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  const Eigen::Index n = params.size();
  if (grad.size() != n)
    throw ValidationError("gradient size does not match parameters");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(n);
    state.v = Eigen::VectorXd::Zero(n);
  }
  if (state.m.size() != n || state.v.size() != n)
    throw ValidationError("optimizer state size does not match parameters");
  state.step += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(beta2, double(state.step));
  params.array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + eps);
  if (!params.allFinite())
    throw NonFiniteUpdate("parameters became non-finite in an optimizer step");
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const BatchBundle full = build_batch(data, cfg);

  TrainResult out;
  Rng init_rng(Rng::derive(cfg.seed, 0));
  out.params = init_params(full, init_rng);

  std::vector<int> labeled_rows, multiview_rows;
  for (size_t i = 0; i < data.samples.size(); ++i)
    (data.samples[i].labeled2d ? labeled_rows : multiview_rows)
        .push_back(int(i));
  const bool minibatch = cfg.batch_labeled > 0 || cfg.batch_multiview > 0;
  if (minibatch && cfg.batch_labeled > 0 && labeled_rows.empty())
    throw ValidationError("batch_labeled > 0 but no sample is labeled2d");
  if (minibatch && cfg.batch_multiview > 0 && multiview_rows.empty())
    throw ValidationError("batch_multiview > 0 but every sample is labeled2d");

  bool cap_active = false;
  bool has_pair = false;
  for (const MultiViewSample& ms : data.samples) {
    int nv = ms.view_count();
    if (cfg.view_cap > 0 && nv > cfg.view_cap) {
      cap_active = true;
      nv = cfg.view_cap;
    }
    if (nv >= 2) has_pair = true;
  }
  if (!cfg.fully_supervised && cfg.weights.alpha > 0 && !has_pair) {
    const std::string msg =
        "multi-view consistency is inactive: no sample contributes two views";
    out.warnings.push_back(msg);
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  }
  const bool subset_mode = minibatch || cap_active;

  AdamState state;
  // Sample-local proposal machinery (rationale at TrainConfig::propose_every).
  // Every move is value-gated on the sample's own objective, so the
  // optimization target never changes; accepted moves zero the Adam moments of
  // the slots they touched.
  const bool proposals_on = cfg.propose_every > 0 && !cfg.fully_supervised &&
                            cfg.weights.alpha > 0 && has_pair;
  // Consecutive passes in which a sample's heavy moves (consensus + line
  // searches) all failed; after two such passes they are skipped for that
  // sample until a reflection lands again.
  std::vector<int> heavy_misses(full.batch.samples.size(), 0);
  // Lifetime budget of restart attempts per sample, their RNG stream, and
  // each sample's total after its previous proposal pass (for detecting
  // stalled progress; line moves keep accepting micro-improvements inside a
  // bad basin, so acceptance counts cannot tell stuck from converging).
  std::vector<int> restart_tries(full.batch.samples.size(), 0);
  Rng restart_rng(Rng::derive(cfg.seed, 0x7e57));
  std::vector<double> last_total(full.batch.samples.size(),
                                 std::numeric_limits<double>::infinity());
  // Parameter snapshot of each sample at its previous proposal pass, for the
  // pattern move: a line search along the displacement accumulated between
  // passes jumps down canyon floors that single-coordinate and gradient steps
  // only crawl along.
  std::vector<Eigen::VectorXd> prev_snapshot(full.batch.samples.size());
  const int root = data.skel.root;
  // One proposal: reflect the decoded relative depths of `joints` (empty =
  // all) in view v. direct25d reflects raw zr about the view's raw root depth;
  // heatmap mode negates whole hz maps (exact only for the all-joints move, so
  // per-joint proposals are restricted to direct25d).
  auto reflect = [&](const ParamLayout& lay, Eigen::VectorXd& x, int v,
                     const std::vector<int>& joints) {
    if (lay.mode == ParamMode::direct25d) {
      const double r = x[lay.loc_zr(0, v, root)];
      if (joints.empty()) {
        for (int q = 0; q < lay.joints; ++q)
          x[lay.loc_zr(0, v, q)] = 2.0 * r - x[lay.loc_zr(0, v, q)];
      } else {
        for (int q : joints) x[lay.loc_zr(0, v, q)] = 2.0 * r - x[lay.loc_zr(0, v, q)];
      }
    } else {
      const int n = lay.joints * lay.cells[0][v];
      x.segment(lay.offset[0][v] + n, n) *= -1.0;
    }
  };
  auto proposal_pass = [&](Eigen::VectorXd& values) {
    int accepted = 0;
    std::vector<std::pair<size_t, double>> mv_totals;
    for (size_t s = 0; s < full.batch.samples.size(); ++s) {
      const SampleSpec& spec = full.batch.samples[s];
      const int nv = spec.view_count();
      if (nv < 2) continue;
      const int base = full.layout.offset[s][0];
      int len = 0;
      for (int v = 0; v < nv; ++v) len += full.layout.view_params(int(s), v);

      Batch sub{full.batch.problem, {spec}};
      const ParamLayout sub_lay = make_layout(sub);

      // Reflections: whole sample, each view, and (direct25d) each joint
      // across all views or in a single view.
      struct Move {
        int view;   // -1 = every view
        int joint;  // -1 = every joint
      };
      std::vector<Move> moves;
      moves.push_back({-1, -1});
      for (int v = 0; v < nv; ++v) moves.push_back({v, -1});
      if (sub_lay.mode == ParamMode::direct25d) {
        for (int q = 0; q < sub_lay.joints; ++q) {
          if (q == root) continue;
          moves.push_back({-1, q});
          for (int v = 0; v < nv; ++v) moves.push_back({v, q});
        }
      }
      auto apply = [&](Eigen::VectorXd& x, const Move& m) {
        const std::vector<int> joints =
            m.joint < 0 ? std::vector<int>{} : std::vector<int>{m.joint};
        if (m.view < 0)
          for (int v = 0; v < nv; ++v) reflect(sub_lay, x, v, joints);
        else
          reflect(sub_lay, x, m.view, joints);
      };

      const Eigen::VectorXd orig = values.segment(base, len);
      Eigen::VectorXd cur = orig;
      const SampleEval start = sample_eval(sub, cur);
      if (!std::isfinite(start.total)) continue;
      double cur_total = start.total;
      int fail_base = start.failed;
      int taken = 0;
      const int max_rounds = 2 * (nv + sub_lay.joints);
      for (int round = 0; round < max_rounds; ++round) {
        const Move* best = nullptr;
        Eigen::VectorXd best_vals;
        double best_total = descent_gate(cur_total);
        for (const Move& m : moves) {
          Eigen::VectorXd cand = cur;
          apply(cand, m);
          const double t = masked_total(sub, cand, fail_base);
          if (t < best_total) {
            best = &m;
            best_total = t;
            best_vals = std::move(cand);
          }
        }
        if (!best) break;
        cur = std::move(best_vals);
        const SampleEval e = sample_eval(sub, cur);
        cur_total = e.total;
        fail_base = e.failed;
        ++taken;
      }
      // Heavy moves run only while they keep landing; the floor skips samples
      // whose total is already numerically converged.
      if (sub_lay.mode == ParamMode::direct25d && cur_total > 1e-7 &&
          (taken > 0 || heavy_misses[s] < 2)) {
        int moved = 0;
        if (consensus_pass(sub, sub_lay, data.skel, cur, cur_total, fail_base))
          ++moved;
        moved += line_pass(sub, sub_lay, root, cur, cur_total, fail_base);
        if (consensus_pass(sub, sub_lay, data.skel, cur, cur_total, fail_base))
          ++moved;
        heavy_misses[s] = moved > 0 ? 0 : heavy_misses[s] + 1;
        taken += moved;
      }
      // Pattern move along the inter-pass displacement, doubling the step
      // until the objective stops improving.
      if (prev_snapshot[s].size() == len && cur_total > 1e-9) {
        const Eigen::VectorXd dir = cur - prev_snapshot[s];
        if (dir.cwiseAbs().maxCoeff() > 0.0) {
          double best_t = 0.0, best_f = descent_gate(cur_total);
          for (double step = 1.0; step <= 32.0; step *= 2.0) {
            const Eigen::VectorXd cand = cur + step * dir;
            const double f = masked_total(sub, cand, fail_base);
            if (f < best_f) {
              best_f = f;
              best_t = step;
            } else if (best_t > 0.0) {
              break;
            }
          }
          if (best_t > 0.0) {
            cur += best_t * dir;
            const SampleEval e = sample_eval(sub, cur);
            cur_total = e.total;
            fail_base = e.failed;
            ++taken;
          }
        }
      }
      prev_snapshot[s] = cur;
      mv_totals.emplace_back(s, cur_total);
      if (taken == 0) continue;
      accepted += taken;
      values.segment(base, len) = cur;
      if (state.m.size() == full.layout.total)
        for (int i = 0; i < len; ++i)
          if (cur[i] != orig[i]) {
            state.m[base + i] = 0.0;
            state.v[base + i] = 0.0;
          }
    }
    // Restart rescue: a sample whose total is an extreme outlier and no
    // longer making real progress is stuck in a basin none of the local moves
    // can leave, so it gets a value-gated re-initialization attempt.
    if (full.layout.mode == ParamMode::direct25d && mv_totals.size() >= 2) {
      std::vector<double> ts;
      ts.reserve(mv_totals.size());
      for (const auto& p : mv_totals) ts.push_back(p.second);
      std::nth_element(ts.begin(), ts.begin() + ts.size() / 2, ts.end());
      const double median = ts[ts.size() / 2];
      for (const auto& [s, t] : mv_totals) {
        // Rescue only true outliers whose own progress has stalled: halving
        // per pass is healthy convergence, and near-median totals are the
        // noise floor the whole batch shares.
        const bool outlier = t > std::max(10.0 * median, 1e-4);
        const bool stalled = t > 0.5 * last_total[s];
        last_total[s] = t;
        if (!outlier || !stalled) continue;
        const SampleSpec& spec = full.batch.samples[s];
        const int nv = spec.view_count();
        const int base = full.layout.offset[s][0];
        int len = 0;
        for (int v = 0; v < nv; ++v) len += full.layout.view_params(int(s), v);
        Batch sub{full.batch.problem, {spec}};
        const ParamLayout sub_lay = make_layout(sub);
        const Eigen::VectorXd orig = values.segment(base, len);
        Eigen::VectorXd cur = orig;
        SampleEval e = sample_eval(sub, cur);
        if (!std::isfinite(e.total)) continue;
        double cur_total = e.total;
        int fail_base = e.failed;
        // A warm burst finishes crawls, but its marginal gains must not starve
        // the basin hop: escalate to a cold burst whenever the total is still
        // an outlier afterwards.
        bool took = rescue_burst(sub, sub_lay, data.skel, cfg.lr, false, 200,
                                 restart_rng, cur, cur_total, fail_base);
        if (cur_total > std::max(10.0 * median, 1e-4) &&
            restart_tries[s] < 8) {
          ++restart_tries[s];
          took |= rescue_burst(sub, sub_lay, data.skel, cfg.lr, true, 800,
                               restart_rng, cur, cur_total, fail_base);
        }
        if (!took) continue;
        ++accepted;
        heavy_misses[s] = 0;
        prev_snapshot[s].resize(0);
        values.segment(base, len) = cur;
        if (state.m.size() == full.layout.total)
          for (int i = 0; i < len; ++i)
            if (cur[i] != orig[i]) {
              state.m[base + i] = 0.0;
              state.v[base + i] = 0.0;
            }
      }
    }
    return accepted;
  };
  std::vector<int> all_rows(data.samples.size());
  std::iota(all_rows.begin(), all_rows.end(), 0);
  Eigen::VectorXd grad, full_grad;
  const int drop_at = int(std::llround(cfg.lr_drop_frac * cfg.iters));
  for (int it = 0; it < cfg.iters; ++it) {
    const double lr = cfg.lr * (it >= drop_at ? cfg.lr_drop_factor : 1.0);
    if (proposals_on && it > 0 && it % cfg.propose_every == 0)
      out.proposals += proposal_pass(out.params.values);
    BatchEval ev;
    const Eigen::VectorXd* step_grad = nullptr;
    if (!subset_mode) {
      ev = eval_batch_grad(full.batch, out.params.values, grad);
      step_grad = &grad;
    } else {
      Rng batch_rng(Rng::derive(cfg.seed, 0x9e37 + uint64_t(it)));
      std::vector<int> rows;
      if (minibatch) {
        rows = pick_rows(labeled_rows, cfg.batch_labeled, batch_rng);
        const std::vector<int> mv =
            pick_rows(multiview_rows, cfg.batch_multiview, batch_rng);
        rows.insert(rows.end(), mv.begin(), mv.end());
      } else {
        rows = all_rows;
      }
      const BatchBundle sub = build_batch(data, cfg, rows, &batch_rng);
      Eigen::VectorXd sub_vals, sub_grad;
      gather_segments(full.layout, out.params.values, sub, sub_vals);
      ev = eval_batch_grad(sub.batch, sub_vals, sub_grad);
      full_grad = Eigen::VectorXd::Zero(full.layout.total);
      scatter_segments(full.layout, sub, sub_grad, full_grad);
      step_grad = &full_grad;
    }

    if (it == 0)
      out.initial_total = ev.total;
    else if (out.initial_total > 0 &&
             ev.total > cfg.divergence_factor * out.initial_total)
      throw DivergenceDetected("loss exceeded " +
                               std::to_string(cfg.divergence_factor) +
                               "x its initial value at iteration " +
                               std::to_string(it));
    adam_step(out.params.values, *step_grad, state, lr);

    out.history.push_back({it, lr, ev.total, ev.l_h, ev.l_z, ev.l_mc, ev.l_b,
                           ev.grad_inf_norm, ev.skipped_pairs,
                           ev.failed_views});
    if (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0)
      out.evals.emplace_back(it + 1, evaluate(full, out.params.values, data));
  }
  out.final_total = eval_batch(full.batch, out.params.values).total;
  return out;
}

Pose25D decode_view(const BatchBundle& bundle, const Eigen::VectorXd& values,
                    int sample, int view) {
  const ParamLayout& lay = bundle.layout;
  if (values.size() != lay.total)
    throw ValidationError("parameter size does not match layout");
  if (sample < 0 || sample >= int(bundle.batch.samples.size()) || view < 0 ||
      view >= int(bundle.batch.samples[sample].views.size()))
    throw ValidationError("sample or view index out of range");
  const ViewSpec& vs = bundle.batch.samples[sample].views[view];
  const SkeletonDef& skel = bundle.batch.problem.skel;
  const int j = lay.joints;

  if (lay.mode == ParamMode::direct25d) {
    Pose25D p;
    p.u.resize(j);
    p.v.resize(j);
    p.zr.resize(j);
    for (int q = 0; q < j; ++q) {
      p.u[q] = values[lay.loc_u(sample, view, q)];
      p.v[q] = values[lay.loc_v(sample, view, q)];
      p.zr[q] = values[lay.loc_zr(sample, view, q)];
    }
    p.zr.array() -= p.zr[skel.root];
    p.phi = vs.phi;
    return p;
  }

  HeatmapStack stack;
  stack.grid = vs.grid;
  stack.lambda = bundle.batch.problem.lambda;
  const int h = vs.grid.height, w = vs.grid.width;
  for (int q = 0; q < j; ++q) {
    stack.h2d.emplace_back(Eigen::Map<const HeatmapArray>(
        values.data() + lay.loc_score(sample, view, q, 0), h, w));
    stack.hz.emplace_back(Eigen::Map<const HeatmapArray>(
        values.data() + lay.loc_hz(sample, view, q, 0), h, w));
  }
  return decode_stack(stack, skel.root);
}

EvalReport evaluate(const BatchBundle& bundle, const Eigen::VectorXd& values,
                    const Dataset& data) {
  const SkeletonDef& skel = bundle.batch.problem.skel;
  ViewScore score(skel.joint_count());
  int excluded = 0;
  for (size_t s = 0; s < bundle.batch.samples.size(); ++s) {
    const MultiViewSample& ms = data.samples[bundle.sample_index[s]];
    for (size_t v = 0; v < bundle.batch.samples[s].views.size(); ++v) {
      const ViewTruth& truth = ms.truth[bundle.view_index[s][v]];
      try {
        const Pose25D p = decode_view(bundle, values, int(s), int(v));
        const Pose3D pose =
            reconstruct(p, bundle.batch.samples[s].views[v].k, skel);
        score.add(pose, truth, skel);
      } catch (const NumericalError&) {
        ++excluded;
      }
    }
  }
  return score.report(excluded);
}

EvalReport evaluate(const ParameterBlock& params, const Dataset& data,
                    const TrainConfig& cfg) {
  TrainConfig matched = cfg;
  matched.mode = params.mode;
  const BatchBundle full = build_batch(data, matched);
  return evaluate(full, params.values, data);
}

EvalReport evaluate_poses(const std::vector<std::vector<Pose3D>>& poses,
                          const Dataset& data) {
  if (poses.size() != data.samples.size())
    throw ValidationError("pose list does not match the dataset");
  ViewScore score(data.skel.joint_count());
  int excluded = 0;
  for (size_t s = 0; s < poses.size(); ++s) {
    if (poses[s].size() != data.samples[s].truth.size())
      throw ValidationError("pose list does not match the dataset views");
    for (size_t v = 0; v < poses[s].size(); ++v) {
      try {
        score.add(poses[s][v], data.samples[s].truth[v], data.skel);
      } catch (const NumericalError&) {
        ++excluded;
      }
    }
  }
  return score.report(excluded);
}

std::string history_csv(const std::vector<HistoryRow>& rows, int every) {
  if (every < 1) throw ValidationError("history_every must be >= 1");
  std::string out =
      "iter,lr,total,l_h,l_z,l_mc,l_b,grad_inf_norm,skipped_pairs,"
      "failed_views\n";
  char buf[320];
  for (size_t i = 0; i < rows.size(); ++i) {
    if (i % size_t(every) != 0 && i + 1 != rows.size()) continue;
    const HistoryRow& r = rows[i];
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n",
                  r.iter, r.lr, r.total, r.l_h, r.l_z, r.l_mc, r.l_b,
                  r.grad_inf_norm, r.skipped_pairs, r.failed_views);
    out += buf;
  }
  return out;
}

void save_run(const std::string& dir, const TrainConfig& cfg,
              const TrainResult& result, const EvalReport& final_eval) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create run directory " + dir);

  const auto write_file = [&](const std::string& name,
                              const std::string& text) {
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw ValidationError("failed writing " + path);
  };

  write_file("config.json", cfg.to_json() + "\n");
  write_file("history.csv", history_csv(result.history, cfg.history_every));
  write_file("report.json", final_eval.to_json() + "\n");
  std::string evals;
  for (const auto& [iter, rep] : result.evals) {
    json line;
    line["iter"] = iter;
    line["report"] = json::parse(rep.to_json());
    evals += line.dump() + "\n";
  }
  write_file("evals.jsonl", evals);
  write_params(result.params, (fs::path(dir) / "params.bin").string());
}

std::string GradSuiteReport::to_json() const {
  json j;
  j["cases"] = cases;
  j["passed"] = passed;
  j["checked"] = checked;
  j["excluded_kink"] = excluded_kink;
  j["excluded_boundary"] = excluded_boundary;
  j["max_rel_err"] = max_rel_err;
  j["worst_case"] = worst_case;
  j["pass"] = pass;
  return j.dump(2);
}

GradSuiteReport run_gradcheck_suite(uint64_t seed, int cases, double step,
                                    double tolerance) {
  if (cases <= 0) throw ValidationError("cases must be positive");
  const SkeletonDef skel = SkeletonDef::default_human15();

  GradSuiteReport rep;
  rep.cases = cases;
  rep.pass = true;
  for (int i = 0; i < cases; ++i) {
    Rng rng(Rng::derive(seed, uint64_t(i)));
    const ParamMode mode =
        (i % 2 == 0) ? ParamMode::direct25d : ParamMode::heatmap_logits;
    const int term = (i / 2) % 4;  // anchor, limb, consistency, full
    const bool needs_pair = term >= 2;

    TrainConfig cfg;
    cfg.mode = mode;
    cfg.grid_cells = 6;
    cfg.anchor_weight = (term == 0 || term == 3) ? 1.0 : 0.0;
    cfg.weights.alpha = (term == 2 || term == 3) ? 10.0 : 0.0;
    cfg.weights.beta = (term == 1 || term == 3) ? 100.0 : 0.0;

    int nv;
    if (mode == ParamMode::direct25d)
      nv = needs_pair ? 2 + (i / 8) % 2 : 1 + (i / 8) % 2;
    else
      nv = needs_pair ? 2 : 1;

    Dataset data;
    data.skel = skel;
    RigSpec rig;
    rig.views = nv;
    for (int attempt = 0;; ++attempt) {
      try {
        const Pose3D pose = sample_pose(skel, rng);
        const CameraRig cams = make_rig(rig, Eigen::Vector3d(0, 950, 0), rng);
        data.samples = {synthesize(pose, cams, NoiseSpec{}, skel, rng, i)};
        break;
      } catch (const NumericalError&) {
        if (attempt >= 100)
          throw PoseOutOfView("gradcheck suite cannot frame a sample");
      }
    }

    const BatchBundle bundle = build_batch(data, cfg);
    ParameterBlock pb = init_params(bundle, rng);
    const ParamLayout& lay = bundle.layout;
    for (size_t s = 0; s < bundle.batch.samples.size(); ++s) {
      for (size_t v = 0; v < bundle.batch.samples[s].views.size(); ++v) {
        const int si = int(s), vi = int(v);
        if (mode == ParamMode::direct25d) {
          for (int q = 0; q < lay.joints; ++q) {
            pb.values[lay.loc_u(si, vi, q)] += 0.5 * rng.normal();
            pb.values[lay.loc_v(si, vi, q)] += 0.5 * rng.normal();
            pb.values[lay.loc_zr(si, vi, q)] += 0.02 * rng.normal();
          }
        } else {
          const int cells = lay.cells[s][v];
          for (int q = 0; q < lay.joints; ++q)
            for (int c = 0; c < cells; ++c) {
              pb.values[lay.loc_score(si, vi, q, c)] += 0.05 * rng.normal();
              pb.values[lay.loc_hz(si, vi, q, c)] += 0.02 * rng.normal();
            }
        }
      }
    }

    const GradCheckReport r =
        grad_check(bundle.batch, pb.values, step, tolerance);
    rep.checked += r.checked;
    rep.excluded_kink += r.excluded_kink;
    rep.excluded_boundary += r.excluded_boundary;
    if (r.max_rel_err > rep.max_rel_err) {
      rep.max_rel_err = r.max_rel_err;
      rep.worst_case = i;
    }
    if (r.pass)
      ++rep.passed;
    else
      rep.pass = false;
  }
  return rep;
}

}  // namespace mvpose
