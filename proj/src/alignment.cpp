#include "mvpose/alignment.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include "mvpose/errors.hpp"

namespace mvpose {

Eigen::Matrix3Xd apply(const RigidTransform& t, const Eigen::Matrix3Xd& pts) {
  return (t.scale * (t.rotation * pts)).colwise() + t.translation;
}

namespace {

RigidTransform align(const Eigen::Matrix3Xd& source,
                     const Eigen::Matrix3Xd& target,
                     const Eigen::VectorXd& weights, bool with_scale) {
  const int n = int(source.cols());
  if (target.cols() != n || weights.size() != n)
    throw ValidationError("alignment inputs must have matching joint counts");
  int support = 0;
  for (int i = 0; i < n; ++i) {
    if (weights[i] < 0.0)
      throw ValidationError("alignment weights must be nonnegative");
    if (weights[i] > 0.0) ++support;
  }
  if (support < 3)
    throw InsufficientSupport("alignment needs >= 3 positive weights");

  const double wsum = weights.sum();
  const Eigen::Vector3d mu_s = (source * weights) / wsum;
  const Eigen::Vector3d mu_t = (target * weights) / wsum;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();  // target-source cross-cov
  double var_s = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d ds = source.col(i) - mu_s;
    const Eigen::Vector3d dt = target.col(i) - mu_t;
    cov += weights[i] * dt * ds.transpose();
    var_s += weights[i] * ds.squaredNorm();
  }
  cov /= wsum;
  var_s /= wsum;

  if (with_scale && var_s < 1e-12)
    throw ZeroSourceVariance("similarity alignment needs source variance");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv[1] <= std::max(1e-12, 1e-9 * sv[0]))
    throw DegenerateConfiguration("collinear or coincident alignment support");

  Eigen::Vector3d d(1, 1, 1);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0)
    d[2] = -1.0;  // flip the smallest singular direction

  RigidTransform t;
  t.rotation =
      svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  if (with_scale) t.scale = sv.dot(d) / var_s;
  t.translation = mu_t - t.scale * (t.rotation * mu_s);
  return t;
}

}  // namespace

RigidTransform weighted_rigid_align(const Eigen::Matrix3Xd& source,
                                    const Eigen::Matrix3Xd& target,
                                    const Eigen::VectorXd& weights) {
  return align(source, target, weights, false);
}

RigidTransform weighted_similarity_align(const Eigen::Matrix3Xd& source,
                                         const Eigen::Matrix3Xd& target,
                                         const Eigen::VectorXd& weights) {
  return align(source, target, weights, true);
}

}  // namespace mvpose
