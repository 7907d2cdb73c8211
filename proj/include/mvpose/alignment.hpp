#pragma once

#include <Eigen/Core>

namespace mvpose {

// x -> scale * R * x + t, det(R) == +1.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
};

Eigen::Matrix3Xd apply(const RigidTransform& t, const Eigen::Matrix3Xd& pts);

// Weighted least-squares R, t mapping source onto target (scale fixed at 1).
// Weights must be >= 0 with at least 3 positive entries (InsufficientSupport);
// collinear supports throw DegenerateConfiguration. A reflection-optimal
// covariance gets its smallest singular direction flipped so det(R) == +1.
RigidTransform weighted_rigid_align(const Eigen::Matrix3Xd& source,
                                    const Eigen::Matrix3Xd& target,
                                    const Eigen::VectorXd& weights);

// As above plus a least-squares scale; throws ZeroSourceVariance when the
// weighted source variance vanishes.
RigidTransform weighted_similarity_align(const Eigen::Matrix3Xd& source,
                                         const Eigen::Matrix3Xd& target,
                                         const Eigen::VectorXd& weights);

}  // namespace mvpose
