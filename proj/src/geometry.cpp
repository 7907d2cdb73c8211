#include "mvpose/geometry.hpp"

#include <cmath>

#include "mvpose/errors.hpp"

namespace mvpose {

ScaleNormalized scale_normalize(const Pose3D& pose, const SkeletonDef& skel) {
  const double s =
      (pose.joints.col(skel.scale_k) - pose.joints.col(skel.scale_l)).norm();
  if (s < 1e-8) throw DegenerateScalePair("scale pair distance below 1e-8");
  ScaleNormalized out;
  out.pose.joints = pose.joints / s;
  out.pose.scale_state = ScaleState::normalized;
  out.scale = s;
  return out;
}

Eigen::Matrix2Xd project(const Pose3D& pose, const CameraIntrinsics& k) {
  const int j = pose.joint_count();
  Eigen::Matrix2Xd uv(2, j);
  for (int i = 0; i < j; ++i) {
    const Eigen::Vector3d& p = pose.joints.col(i);
    if (!(p.z() > 0.0)) throw BehindCamera("joint with z <= 0 cannot project");
    uv(0, i) = k.fx() * p.x() / p.z() + k.cx();
    uv(1, i) = k.fy() * p.y() / p.z() + k.cy();
  }
  return uv;
}

RootDepthSolve solve_root_depth_detail(const Eigen::Vector3d& ray_k,
                                       const Eigen::Vector3d& ray_l,
                                       double zr_k, double zr_l) {
  RootDepthSolve s;
  s.b_vec = ray_k - ray_l;
  s.c_vec = zr_k * ray_k - zr_l * ray_l;
  s.a = s.b_vec.squaredNorm();
  s.b = s.b_vec.dot(s.c_vec);
  const double c = s.c_vec.squaredNorm() - 1.0;

  if (s.a < 1e-12) {
    // Rays nearly parallel: the quadratic degenerates to 2 b z + c = 0.
    s.linear_fallback = true;
    if (std::abs(s.b) < 1e-15)
      throw DegenerateRays("parallel scale-pair rays, no depth constraint");
    const double z = -c / (2.0 * s.b);
    if (!(z > 0.0))
      throw DegenerateRays("parallel scale-pair rays, no positive solution");
    s.z_root = z;
    return s;
  }

  double disc = s.b * s.b - s.a * c;
  if (disc < 0.0) {
    if (disc >= -1e-9)
      disc = 0.0;  // tangency within tolerance
    else
      throw NoRealRoot("root depth discriminant negative");
  }
  s.sqrt_disc = std::sqrt(disc);
  const double z = (-s.b + s.sqrt_disc) / s.a;  // larger root
  if (!(z > 0.0)) throw NoPositiveRoot("root depth has no positive root");
  s.z_root = z;
  return s;
}

double solve_root_depth(const Pose25D& p, const CameraIntrinsics& k,
                        const SkeletonDef& skel) {
  const int jk = skel.scale_k, jl = skel.scale_l;
  return solve_root_depth_detail(k.ray(p.u[jk], p.v[jk]),
                                 k.ray(p.u[jl], p.v[jl]), p.zr[jk], p.zr[jl])
      .z_root;
}

Pose3D reconstruct(const Pose25D& p, const CameraIntrinsics& k,
                   const SkeletonDef& skel) {
  const double z_root = solve_root_depth(p, k, skel);
  const int j = p.joint_count();
  Pose3D out;
  out.joints.resize(3, j);
  for (int i = 0; i < j; ++i)
    out.joints.col(i) = (z_root + p.zr[i]) * k.ray(p.u[i], p.v[i]);
  out.scale_state = ScaleState::normalized;
  return out;
}

}  // namespace mvpose
