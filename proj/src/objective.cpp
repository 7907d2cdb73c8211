#include "mvpose/objective.hpp"

#include <cmath>
#include <vector>

#include <json.hpp>

#include "mvpose/alignment.hpp"
#include "mvpose/errors.hpp"
#include "mvpose/geometry.hpp"

namespace mvpose {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void validate_batch(const Batch& batch) {
  const auto& pr = batch.problem;
  const int j = pr.skel.joint_count();
  pr.skel.validate();
  if (int(pr.skel.mean_limb_normalized.size()) != pr.skel.edge_count())
    throw ValidationError("skeleton is not finalized");
  if (pr.weights.psi < 0 || pr.weights.alpha < 0 || pr.weights.beta < 0)
    throw ValidationError("loss weights must be nonnegative");
  if (pr.anchor_weight < 0 || pr.lambda < 0 || !(pr.gauss_sigma_cells > 0))
    throw ValidationError("bad anchor weight, lambda, or gaussian width");
  for (const auto& s : batch.samples) {
    if (s.views.empty()) throw ValidationError("sample has no views");
    if (!s.view_rot.empty() && int(s.view_rot.size()) != s.view_count())
      throw ValidationError("view_rot must match the view count");
    for (const auto& v : s.views) {
      if (v.anchor_uv.cols() != j || int(v.anchor_mask.size()) != j ||
          v.phi.size() != j)
        throw ValidationError("view arrays must have one entry per joint");
      if (v.phi.minCoeff() < 0)
        throw ValidationError("confidences must be nonnegative");
      const bool has_z = v.zr_gt.size() != 0;
      if (has_z != !v.depth_mask.empty() ||
          (has_z &&
           (v.zr_gt.size() != j || int(v.depth_mask.size()) != j)))
        throw ValidationError("depth targets must pair a mask with J values");
      if (pr.mode == ParamMode::heatmap_logits && v.grid.cells() <= 0)
        throw ValidationError("heatmap mode needs a grid per view");
    }
  }
}

// Forward record for one view: everything the backward sweep reads.
struct ViewFwd {
  Eigen::VectorXd u, v, zr_raw, zr;
  std::vector<Eigen::VectorXd> hbar;  // heatmap mode, per joint
  Eigen::VectorXd coord_u, coord_v;   // per-cell pixel coordinates
  RootDepthSolve root;
  Eigen::Matrix3Xd rays, p3d;
  bool ok = false;
};

struct PairRec {
  int a = 0, b = 0;
  bool skipped = true;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

Eigen::VectorXd softmax_lambda(const Eigen::VectorXd& scores, double lambda) {
  const int n = int(scores.size());
  if (lambda == 0.0) return Eigen::VectorXd::Constant(n, 1.0 / n);
  const Eigen::ArrayXd shifted =
      lambda * (scores.array() - scores.maxCoeff());
  Eigen::ArrayXd e = shifted.exp();
  return (e / e.sum()).matrix();
}

Eigen::VectorXd gauss_vector(const HeatmapGrid& grid, double u0, double v0,
                             double sigma_px) {
  Eigen::VectorXd g(grid.cells());
  const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
  for (int c = 0; c < grid.cells(); ++c) {
    const double du = grid.u_at(c % grid.width) - u0;
    const double dv = grid.v_at(c / grid.width) - v0;
    g[c] = std::exp(-(du * du + dv * dv) * inv);
  }
  return g;
}

// Rigid map taking view-b points onto view a: estimated by Procrustes, or
// pinned to the ground-truth rotation with the translation fit to the points.
bool solve_pair(const Eigen::Matrix3Xd& pa, const Eigen::Matrix3Xd& pb,
                const Eigen::VectorXd& w, const Eigen::Matrix3d* rot_a,
                const Eigen::Matrix3d* rot_b, Eigen::Matrix3d& r_out,
                Eigen::Vector3d& t_out) {
  if (rot_a && rot_b) {
    const double wsum = w.sum();
    if (wsum < 1e-12) return false;
    const Eigen::Matrix3d r = (*rot_a) * rot_b->transpose();
    const Eigen::Vector3d mu_a = (pa * w) / wsum;
    const Eigen::Vector3d mu_b = (pb * w) / wsum;
    r_out = r;
    t_out = mu_a - r * mu_b;
    return true;
  }
  try {
    const RigidTransform t = weighted_rigid_align(pb, pa, w);
    r_out = t.rotation;
    t_out = t.translation;
    return true;
  } catch (const NumericalError&) {
    return false;
  }
}

struct Scales {
  double h = 0, z = 0, mc = 0, b = 0;
};

}  // namespace

ParamLayout make_layout(const Batch& batch) {
  validate_batch(batch);
  ParamLayout lay;
  lay.mode = batch.problem.mode;
  lay.joints = batch.problem.skel.joint_count();
  int off = 0;
  for (const auto& s : batch.samples) {
    std::vector<int> offs, cls;
    for (const auto& v : s.views) {
      const int cells =
          lay.mode == ParamMode::heatmap_logits ? v.grid.cells() : 0;
      offs.push_back(off);
      cls.push_back(cells);
      off += lay.mode == ParamMode::direct25d ? 3 * lay.joints
                                              : 2 * lay.joints * cells;
    }
    lay.offset.push_back(std::move(offs));
    lay.cells.push_back(std::move(cls));
  }
  lay.total = off;
  return lay;
}

namespace {

// Shared engine for plain, recording, frozen, and gradient evaluation.
BatchEval eval_impl(const Batch& batch, const Eigen::VectorXd& params,
                    const FrozenContext* frozen, Eigen::VectorXd* grad,
                    std::vector<int8_t>* signs, FrozenContext* record) {
  const ParamLayout lay = make_layout(batch);
  if (params.size() != lay.total)
    throw ValidationError("parameter vector size does not match the batch");
  const auto& pr = batch.problem;
  const int j = lay.joints;
  const int root = pr.skel.root;
  const int ns = int(batch.samples.size());

  if (record) {
    record->pairs.assign(ns, {});
    record->view_ok.assign(ns, {});
  }
  if (grad) grad->setZero(lay.total);
  if (signs) signs->clear();

  BatchEval out;
  std::vector<std::vector<ViewFwd>> fwd(ns);
  std::vector<std::vector<PairRec>> pairs(ns);
  double sum_h = 0, sum_z = 0, sum_mc = 0, sum_b = 0;
  int candidate_pairs = 0;

  // Forward sweep: decode, reconstruct, align pairs, accumulate raw sums.
  for (int s = 0; s < ns; ++s) {
    const auto& sample = batch.samples[s];
    const int nv = sample.view_count();
    fwd[s].resize(nv);

    for (int v = 0; v < nv; ++v) {
      const auto& spec = sample.views[v];
      ViewFwd& f = fwd[s][v];
      const int off = lay.offset[s][v];

      if (pr.mode == ParamMode::direct25d) {
        f.u = params.segment(off, j);
        f.v = params.segment(off + j, j);
        f.zr_raw = params.segment(off + 2 * j, j);
      } else {
        const int cells = lay.cells[s][v];
        f.coord_u.resize(cells);
        f.coord_v.resize(cells);
        for (int c = 0; c < cells; ++c) {
          f.coord_u[c] = spec.grid.u_at(c % spec.grid.width);
          f.coord_v[c] = spec.grid.v_at(c / spec.grid.width);
        }
        f.u.resize(j);
        f.v.resize(j);
        f.zr_raw.resize(j);
        f.hbar.resize(j);
        for (int q = 0; q < j; ++q) {
          const auto scores = params.segment(off + q * cells, cells);
          const auto hz = params.segment(off + (j + q) * cells, cells);
          f.hbar[q] = softmax_lambda(scores, pr.lambda);
          f.u[q] = f.hbar[q].dot(f.coord_u);
          f.v[q] = f.hbar[q].dot(f.coord_v);
          f.zr_raw[q] = f.hbar[q].dot(hz);
        }
      }
      f.zr = f.zr_raw.array() - f.zr_raw[root];

      f.rays.resize(3, j);
      for (int q = 0; q < j; ++q)
        f.rays.col(q) = spec.k.ray(f.u[q], f.v[q]);

      const bool attempt =
          frozen ? bool(frozen->view_ok[s][v]) : true;
      if (attempt) {
        try {
          f.root = solve_root_depth_detail(
              f.rays.col(pr.skel.scale_k), f.rays.col(pr.skel.scale_l),
              f.zr[pr.skel.scale_k], f.zr[pr.skel.scale_l]);
          f.p3d.resize(3, j);
          for (int q = 0; q < j; ++q)
            f.p3d.col(q) = (f.root.z_root + f.zr[q]) * f.rays.col(q);
          f.ok = true;
        } catch (const NumericalError&) {
          // A frozen branch must stay evaluable: finite differences need the
          // same smooth function on both sides of the step.
          if (frozen) throw;
          f.ok = false;
          ++out.failed_views;
        }
      } else {
        f.ok = false;
        ++out.failed_views;
      }
      if (record) record->view_ok[s].push_back(f.ok ? 1 : 0);

      // 2D anchor term.
      for (int q = 0; q < j; ++q) {
        if (!spec.anchor_mask[q]) continue;
        ++out.count_h;
        if (pr.mode == ParamMode::direct25d) {
          const double eu = f.u[q] - spec.anchor_uv(0, q);
          const double ev = f.v[q] - spec.anchor_uv(1, q);
          sum_h += eu * eu + ev * ev;
        } else {
          const int cells = lay.cells[s][v];
          const auto scores = params.segment(off + q * cells, cells);
          const Eigen::VectorXd g =
              gauss_vector(spec.grid, spec.anchor_uv(0, q),
                           spec.anchor_uv(1, q),
                           pr.gauss_sigma_cells * spec.grid.stride);
          sum_h += (scores - g).squaredNorm() / cells;
        }
      }

      // Depth supervision (fully supervised composition only).
      if (pr.fully_supervised && spec.zr_gt.size()) {
        for (int q = 0; q < j; ++q) {
          if (!spec.depth_mask[q]) continue;
          ++out.count_z;
          const double e = f.zr[q] - spec.zr_gt[q];
          sum_z += e * e;
        }
      }

      // Limb-length term on every reconstructed pose.
      if (!pr.fully_supervised && f.ok) {
        for (int e = 0; e < pr.skel.edge_count(); ++e) {
          auto [qa, qb] = pr.skel.edges[e];
          const double w = spec.phi[qa] * spec.phi[qb];
          if (w <= 0.0) continue;
          ++out.count_b;
          const double len = (f.p3d.col(qa) - f.p3d.col(qb)).norm();
          const double d = len - pr.skel.mean_limb_normalized[e];
          sum_b += w * d * d;
        }
      }
    }

    if (nv < 2) ++out.single_view_samples;

    // Multi-view consistency over unordered pairs.
    if (!pr.fully_supervised) {
      candidate_pairs += nv * (nv - 1) / 2;
      int pidx = 0;
      for (int a = 0; a < nv; ++a) {
        for (int b = a + 1; b < nv; ++b, ++pidx) {
          PairRec rec;
          rec.a = a;
          rec.b = b;
          if (frozen) {
            const FrozenPair& fp = frozen->pairs[s][pidx];
            rec.skipped = fp.skipped;
            rec.rotation = fp.rotation;
            rec.translation = fp.translation;
          } else if (fwd[s][a].ok && fwd[s][b].ok) {
            const Eigen::VectorXd w =
                sample.views[a].phi.cwiseProduct(sample.views[b].phi);
            const Eigen::Matrix3d* ra =
                sample.view_rot.empty() ? nullptr : &sample.view_rot[a];
            const Eigen::Matrix3d* rb =
                sample.view_rot.empty() ? nullptr : &sample.view_rot[b];
            rec.skipped = !solve_pair(fwd[s][a].p3d, fwd[s][b].p3d, w, ra, rb,
                                      rec.rotation, rec.translation);
          }
          if (record) {
            FrozenPair fp;
            fp.skipped = rec.skipped;
            fp.rotation = rec.rotation;
            fp.translation = rec.translation;
            record->pairs[s].push_back(fp);
          }
          if (rec.skipped) {
            ++out.skipped_pairs;
            pairs[s].push_back(rec);
            continue;
          }
          for (int q = 0; q < j; ++q) {
            const double w =
                sample.views[a].phi[q] * sample.views[b].phi[q];
            if (w <= 0.0) continue;
            ++out.count_mc;
            const Eigen::Vector3d r =
                fwd[s][a].p3d.col(q) -
                (rec.rotation * fwd[s][b].p3d.col(q) + rec.translation);
            const Eigen::Vector3d r2 = rec.rotation.transpose() * r;
            sum_mc += w * 0.5 * (r.cwiseAbs().sum() + r2.cwiseAbs().sum());
            if (signs) {
              for (int c = 0; c < 3; ++c)
                signs->push_back(int8_t(sgn(r[c])));
              for (int c = 0; c < 3; ++c)
                signs->push_back(int8_t(sgn(r2[c])));
            }
          }
          pairs[s].push_back(rec);
        }
      }
    }
  }

  if (candidate_pairs > 0 && out.skipped_pairs == candidate_pairs)
    throw AllPairsSkipped("every view pair in the batch failed alignment");

  out.l_h = out.count_h ? sum_h / out.count_h : 0.0;
  out.l_z = out.count_z ? sum_z / out.count_z : 0.0;
  out.l_mc = out.count_mc ? sum_mc / out.count_mc : 0.0;
  out.l_b = out.count_b ? sum_b / out.count_b : 0.0;
  out.total = pr.anchor_weight * out.l_h +
              (pr.fully_supervised
                   ? pr.weights.psi * out.l_z
                   : pr.weights.alpha * out.l_mc + pr.weights.beta * out.l_b);

  if (!grad) return out;
  if (!std::isfinite(out.total))
    throw NonFiniteGradient("loss is not finite");

  Scales sc;
  sc.h = out.count_h ? pr.anchor_weight / out.count_h : 0.0;
  sc.z = out.count_z ? pr.weights.psi / out.count_z : 0.0;
  sc.mc = out.count_mc ? pr.weights.alpha / out.count_mc : 0.0;
  sc.b = out.count_b ? pr.weights.beta / out.count_b : 0.0;

  // Backward sweep, mirroring the forward per sample.
  for (int s = 0; s < ns; ++s) {
    const auto& sample = batch.samples[s];
    const int nv = sample.view_count();
    std::vector<Eigen::VectorXd> g_u(nv), g_v(nv), g_zr(nv);
    std::vector<Eigen::Matrix3Xd> g_p3d(nv);
    for (int v = 0; v < nv; ++v) {
      g_u[v] = Eigen::VectorXd::Zero(j);
      g_v[v] = Eigen::VectorXd::Zero(j);
      g_zr[v] = Eigen::VectorXd::Zero(j);
      g_p3d[v] = Eigen::Matrix3Xd::Zero(3, j);
    }

    // Loss terms -> gradients on decoded quantities and 3D points.
    for (int v = 0; v < nv; ++v) {
      const auto& spec = sample.views[v];
      const ViewFwd& f = fwd[s][v];
      const int off = lay.offset[s][v];

      for (int q = 0; q < j; ++q) {
        if (!spec.anchor_mask[q]) continue;
        if (pr.mode == ParamMode::direct25d) {
          g_u[v][q] += sc.h * 2.0 * (f.u[q] - spec.anchor_uv(0, q));
          g_v[v][q] += sc.h * 2.0 * (f.v[q] - spec.anchor_uv(1, q));
        } else {
          const int cells = lay.cells[s][v];
          const auto scores = params.segment(off + q * cells, cells);
          const Eigen::VectorXd g =
              gauss_vector(spec.grid, spec.anchor_uv(0, q),
                           spec.anchor_uv(1, q),
                           pr.gauss_sigma_cells * spec.grid.stride);
          grad->segment(off + q * cells, cells) +=
              (sc.h * 2.0 / cells) * (scores - g);
        }
      }

      if (pr.fully_supervised && spec.zr_gt.size())
        for (int q = 0; q < j; ++q)
          if (spec.depth_mask[q])
            g_zr[v][q] += sc.z * 2.0 * (f.zr[q] - spec.zr_gt[q]);

      if (!pr.fully_supervised && f.ok) {
        for (int e = 0; e < pr.skel.edge_count(); ++e) {
          auto [qa, qb] = pr.skel.edges[e];
          const double w = spec.phi[qa] * spec.phi[qb];
          if (w <= 0.0) continue;
          const Eigen::Vector3d d = f.p3d.col(qa) - f.p3d.col(qb);
          const double len = d.norm();
          if (len < 1e-12) continue;  // norm direction undefined at 0
          const Eigen::Vector3d dir = d / len;
          const double coeff =
              sc.b * w * 2.0 * (len - pr.skel.mean_limb_normalized[e]);
          g_p3d[v].col(qa) += coeff * dir;
          g_p3d[v].col(qb) -= coeff * dir;
        }
      }
    }

    for (const PairRec& rec : pairs[s]) {
      if (rec.skipped) continue;
      const ViewFwd& fa = fwd[s][rec.a];
      const ViewFwd& fb = fwd[s][rec.b];
      for (int q = 0; q < j; ++q) {
        const double w =
            sample.views[rec.a].phi[q] * sample.views[rec.b].phi[q];
        if (w <= 0.0) continue;
        const Eigen::Vector3d r =
            fa.p3d.col(q) - (rec.rotation * fb.p3d.col(q) + rec.translation);
        const Eigen::Vector3d r2 = rec.rotation.transpose() * r;
        const Eigen::Vector3d sg1(sgn(r.x()), sgn(r.y()), sgn(r.z()));
        const Eigen::Vector3d sg2(sgn(r2.x()), sgn(r2.y()), sgn(r2.z()));
        g_p3d[rec.a].col(q) +=
            sc.mc * w * 0.5 * (sg1 + rec.rotation * sg2);
        g_p3d[rec.b].col(q) -=
            sc.mc * w * 0.5 * (rec.rotation.transpose() * sg1 + sg2);
      }
    }

    // 3D points -> root depth, raw depths, rays -> (u, v) and parameters.
    for (int v = 0; v < nv; ++v) {
      const auto& spec = sample.views[v];
      const ViewFwd& f = fwd[s][v];
      const int off = lay.offset[s][v];
      Eigen::Matrix3Xd g_rays = Eigen::Matrix3Xd::Zero(3, j);

      if (f.ok) {
        double g_zroot = 0.0;
        for (int q = 0; q < j; ++q) {
          const double d = g_p3d[v].col(q).dot(f.rays.col(q));
          g_zroot += d;
          g_zr[v][q] += d;
          g_rays.col(q) += (f.root.z_root + f.zr[q]) * g_p3d[v].col(q);
        }

        // Implicit differentiation of the selected root of
        // A z^2 + 2 B z + C = 0 (A z + B = sqrt(D) at the larger root).
        const double z = f.root.z_root;
        double ga = 0.0, gb = 0.0, gc = 0.0;
        if (f.root.linear_fallback) {
          gb = g_zroot * (-z / f.root.b);
          gc = g_zroot * (-0.5 / f.root.b);
        } else {
          const double den = 2.0 * f.root.sqrt_disc;
          ga = g_zroot * (-z * z / den);
          gb = g_zroot * (-2.0 * z / den);
          gc = g_zroot * (-1.0 / den);
        }
        const Eigen::Vector3d g_bvec =
            2.0 * ga * f.root.b_vec + gb * f.root.c_vec;
        const Eigen::Vector3d g_cvec =
            gb * f.root.b_vec + 2.0 * gc * f.root.c_vec;
        const int k = pr.skel.scale_k, l = pr.skel.scale_l;
        g_rays.col(k) += g_bvec + f.zr[k] * g_cvec;
        g_rays.col(l) -= g_bvec + f.zr[l] * g_cvec;
        g_zr[v][k] += f.rays.col(k).dot(g_cvec);
        g_zr[v][l] -= f.rays.col(l).dot(g_cvec);
      }

      for (int q = 0; q < j; ++q) {
        g_u[v][q] += g_rays(0, q) / spec.k.fx();
        g_v[v][q] += g_rays(1, q) / spec.k.fy();
      }

      // Re-centering zr = zr_raw - zr_raw[root]; zr[root] is identically 0,
      // so its accumulated gradient is discarded.
      Eigen::VectorXd g_zr_raw = g_zr[v];
      double others = 0.0;
      for (int q = 0; q < j; ++q)
        if (q != root) others += g_zr[v][q];
      g_zr_raw[root] = -others;

      if (pr.mode == ParamMode::direct25d) {
        grad->segment(off, j) += g_u[v];
        grad->segment(off + j, j) += g_v[v];
        grad->segment(off + 2 * j, j) += g_zr_raw;
      } else {
        const int cells = lay.cells[s][v];
        for (int q = 0; q < j; ++q) {
          const auto hz = params.segment(off + (j + q) * cells, cells);
          const Eigen::VectorXd g_hbar = g_u[v][q] * f.coord_u +
                                         g_v[v][q] * f.coord_v +
                                         g_zr_raw[q] * hz;
          grad->segment(off + (j + q) * cells, cells) +=
              g_zr_raw[q] * f.hbar[q];
          const double dot = f.hbar[q].dot(g_hbar);
          grad->segment(off + q * cells, cells) +=
              pr.lambda *
              (f.hbar[q].array() * (g_hbar.array() - dot)).matrix();
        }
      }
    }

    const int start = lay.offset[s][0];
    const int len =
        (s + 1 < ns ? lay.offset[s + 1][0] : lay.total) - start;
    if (!grad->segment(start, len).allFinite()) {
      int bad = start;
      while (std::isfinite((*grad)[bad])) ++bad;
      int bv = 0;
      while (bv + 1 < nv && lay.offset[s][bv + 1] <= bad) ++bv;
      throw NonFiniteGradient("nonfinite gradient in sample " +
                              std::to_string(s) + ", view " +
                              std::to_string(bv) + ", parameter " +
                              std::to_string(bad - lay.offset[s][bv]));
    }
  }

  out.has_grad = true;
  out.grad_inf_norm = grad->size() ? grad->cwiseAbs().maxCoeff() : 0.0;
  return out;
}

}  // namespace

BatchEval eval_batch(const Batch& batch, const Eigen::VectorXd& params) {
  return eval_impl(batch, params, nullptr, nullptr, nullptr, nullptr);
}

BatchEval eval_batch_grad(const Batch& batch, const Eigen::VectorXd& params,
                          Eigen::VectorXd& grad) {
  return eval_impl(batch, params, nullptr, &grad, nullptr, nullptr);
}

FrozenContext freeze_context(const Batch& batch,
                             const Eigen::VectorXd& params) {
  FrozenContext ctx;
  eval_impl(batch, params, nullptr, nullptr, nullptr, &ctx);
  return ctx;
}

BatchEval eval_frozen(const Batch& batch, const Eigen::VectorXd& params,
                      const FrozenContext& ctx, std::vector<int8_t>* l1_signs) {
  return eval_impl(batch, params, &ctx, nullptr, l1_signs, nullptr);
}

BatchEval eval_frozen_grad(const Batch& batch, const Eigen::VectorXd& params,
                           const FrozenContext& ctx, Eigen::VectorXd& grad) {
  return eval_impl(batch, params, &ctx, &grad, nullptr, nullptr);
}

GradCheckReport grad_check(const Batch& batch, const Eigen::VectorXd& params,
                           double step, double tolerance) {
  const FrozenContext ctx = freeze_context(batch, params);
  Eigen::VectorXd g;
  eval_impl(batch, params, &ctx, &g, nullptr, nullptr);

  GradCheckReport rep;
  rep.tolerance = tolerance;
  Eigen::VectorXd x = params;
  std::vector<int8_t> sp, sm;
  for (int i = 0; i < params.size(); ++i) {
    double fp, fm;
    x[i] = params[i] + step;
    try {
      fp = eval_frozen(batch, x, ctx, &sp).total;
      x[i] = params[i] - step;
      fm = eval_frozen(batch, x, ctx, &sm).total;
    } catch (const NumericalError&) {
      x[i] = params[i];
      ++rep.excluded_boundary;
      continue;
    }
    x[i] = params[i];
    if (sp != sm) {
      ++rep.excluded_kink;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * step);
    const double rel =
        std::abs(g[i] - fd) /
        std::max({std::abs(g[i]), std::abs(fd), 1e-3});
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = i;
    }
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

double heatmap_loss(const HeatmapStack& pred,
                    const Eigen::Matrix2Xd& gt_centers,
                    const std::vector<uint8_t>& visible, double sigma_px) {
  const int j = pred.joint_count();
  if (gt_centers.cols() != j || int(visible.size()) != j)
    throw ValidationError("heatmap loss inputs must cover every joint");
  double sum = 0.0;
  int n = 0;
  for (int q = 0; q < j; ++q) {
    if (!visible[q]) continue;
    ++n;
    const auto& h = pred.h2d[q];
    const Eigen::VectorXd g = gauss_vector(pred.grid, gt_centers(0, q),
                                           gt_centers(1, q), sigma_px);
    const Eigen::Map<const Eigen::VectorXd> flat(h.data(), h.size());
    sum += (flat - g).squaredNorm() / h.size();
  }
  return n ? sum / n : 0.0;
}

double depth_loss(const Eigen::VectorXd& zr_pred, const Eigen::VectorXd& zr_gt,
                  const std::vector<uint8_t>& mask) {
  if (zr_pred.size() != zr_gt.size() ||
      int(mask.size()) != zr_pred.size())
    throw ValidationError("depth loss inputs must have matching sizes");
  double sum = 0.0;
  int n = 0;
  for (int q = 0; q < zr_pred.size(); ++q) {
    if (!mask[q]) continue;
    ++n;
    const double e = zr_pred[q] - zr_gt[q];
    sum += e * e;
  }
  return n ? sum / n : 0.0;
}

McResult multiview_consistency_loss(
    const std::vector<Eigen::Matrix3Xd>& poses,
    const std::vector<Eigen::VectorXd>& phi,
    const std::vector<Eigen::Matrix3d>& view_rot) {
  const int nv = int(poses.size());
  if (int(phi.size()) != nv)
    throw ValidationError("confidence list must match the view count");
  if (!view_rot.empty() && int(view_rot.size()) != nv)
    throw ValidationError("view_rot must match the view count");
  McResult res;
  if (nv < 2) {
    res.single_view = true;
    return res;
  }
  for (int a = 0; a < nv; ++a) {
    for (int b = a + 1; b < nv; ++b) {
      const Eigen::VectorXd w = phi[a].cwiseProduct(phi[b]);
      Eigen::Matrix3d r;
      Eigen::Vector3d t;
      const bool ok =
          solve_pair(poses[a], poses[b], w,
                     view_rot.empty() ? nullptr : &view_rot[a],
                     view_rot.empty() ? nullptr : &view_rot[b], r, t);
      if (!ok) {
        ++res.skipped_pairs;
        continue;
      }
      for (int q = 0; q < poses[a].cols(); ++q) {
        if (w[q] <= 0.0) continue;
        ++res.terms;
        const Eigen::Vector3d res_ab =
            poses[a].col(q) - (r * poses[b].col(q) + t);
        res.value += w[q] * 0.5 *
                     (res_ab.cwiseAbs().sum() +
                      (r.transpose() * res_ab).cwiseAbs().sum());
      }
    }
  }
  return res;
}

double limb_length_loss(const Pose3D& pose, const Eigen::VectorXd& phi,
                        const SkeletonDef& skel) {
  if (pose.joint_count() != skel.joint_count() ||
      phi.size() != skel.joint_count())
    throw ValidationError("limb loss inputs must cover every joint");
  if (int(skel.mean_limb_normalized.size()) != skel.edge_count())
    throw ValidationError("skeleton is not finalized");
  double sum = 0.0;
  for (int e = 0; e < skel.edge_count(); ++e) {
    auto [a, b] = skel.edges[e];
    const double len = (pose.joints.col(a) - pose.joints.col(b)).norm();
    const double d = len - skel.mean_limb_normalized[e];
    sum += phi[a] * phi[b] * d * d;
  }
  return sum;
}

std::string BatchEval::to_json() const {
  nlohmann::json d;
  d["total"] = total;
  d["l_h"] = l_h;
  d["l_z"] = l_z;
  d["l_mc"] = l_mc;
  d["l_b"] = l_b;
  d["counts"] = {{"h", count_h}, {"z", count_z}, {"mc", count_mc},
                 {"b", count_b}};
  d["skipped_pairs"] = skipped_pairs;
  d["failed_views"] = failed_views;
  d["single_view_samples"] = single_view_samples;
  if (has_grad) d["grad_inf_norm"] = grad_inf_norm;
  return d.dump();
}

std::string GradCheckReport::to_json() const {
  nlohmann::json d;
  d["checked"] = checked;
  d["excluded_kink"] = excluded_kink;
  d["excluded_boundary"] = excluded_boundary;
  d["max_rel_err"] = max_rel_err;
  d["worst_param"] = worst_param;
  d["tolerance"] = tolerance;
  d["pass"] = pass;
  return d.dump();
}

}  // namespace mvpose
