#pragma once

#include <Eigen/Core>

#include "mvpose/camera.hpp"
#include "mvpose/pose.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

struct ScaleNormalized {
  Pose3D pose;
  double scale;  // scale-pair distance of the input, in input units
};

// Divides by the scale-pair distance so ||p_k - p_l|| == 1 afterwards.
// Throws DegenerateScalePair below 1e-8.
ScaleNormalized scale_normalize(const Pose3D& pose, const SkeletonDef& skel);

// Pinhole projection of camera-frame joints; throws BehindCamera on z <= 0.
Eigen::Matrix2Xd project(const Pose3D& pose, const CameraIntrinsics& k);

// Root depth of the scale-normalized pose from the scale-pair constraint:
// with rays a_j = K^{-1}(u_j, v_j, 1), b = a_k - a_l, c = zr_k a_k - zr_l a_l,
// z solves (b.b) z^2 + 2 (b.c) z + (c.c - 1) = 0 and the larger root is taken.
// Saved coefficients feed the closed-form partials in the backward pass.
struct RootDepthSolve {
  double z_root = 0.0;
  double a = 0.0, b = 0.0;  // quadratic a z^2 + 2 b z + c, c = |c_vec|^2 - 1
  double sqrt_disc = 0.0;   // sqrt(b^2 - a c) after clamping
  Eigen::Vector3d b_vec{0, 0, 0}, c_vec{0, 0, 0};
  bool linear_fallback = false;
};

// Discriminants in [-1e-9, 0) clamp to 0; below that throws NoRealRoot.
// Near-parallel rays (b.b < 1e-12) fall back to the linear equation and throw
// DegenerateRays when it has no positive solution; NoPositiveRoot otherwise.
RootDepthSolve solve_root_depth_detail(const Eigen::Vector3d& ray_k,
                                       const Eigen::Vector3d& ray_l,
                                       double zr_k, double zr_l);

double solve_root_depth(const Pose25D& p, const CameraIntrinsics& k,
                        const SkeletonDef& skel);

// Analytic 2.5D -> 3D: p_j = (z_root + zr_j) K^{-1} (u_j, v_j, 1)^T.
// Output is scale-normalized (scale-pair distance 1, within 1e-9).
Pose3D reconstruct(const Pose25D& p, const CameraIntrinsics& k,
                   const SkeletonDef& skel);

}  // namespace mvpose
