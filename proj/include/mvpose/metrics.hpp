#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mvpose/pose.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

// Least-squares metric scale for a normalized pose: argmin_s sum_E
// (s * lhat_e - mu_e)^2 = sum(mu .* lhat) / sum(lhat .* lhat), in mm.
// Throws ZeroLimbs / ZeroPrediction on degenerate inputs.
double recover_scale(const Pose3D& normalized, const SkeletonDef& skel);

// Mean per-joint error after root-centering both poses (mm in, mm out).
double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root);

// As mpjpe after the closed-form least-squares scale s* = <pred, gt> / |pred|^2
// is applied to the root-centered prediction.
double nmpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root);

// Mean per-joint error after an unweighted similarity alignment of pred onto gt.
double pmpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt);

// Percentage of `subset` joints with root-centered error strictly below
// `radius_mm`. An empty subset means every joint except the root.
double pck(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root,
           double radius_mm, const std::vector<int>& subset = {});

// pck after nmpjpe-style scale correction.
double npck(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root,
            double radius_mm, const std::vector<int>& subset = {});

struct EvalReport {
  double mpjpe_mm = 0.0;
  double nmpjpe_mm = 0.0;
  double pmpjpe_mm = 0.0;
  double pck_percent = 0.0;
  double npck_percent = 0.0;
  double depth_abs_err = 0.0;  // mean |zr - zr_gt|, normalized units
  Eigen::VectorXd per_joint_mpjpe_mm;
  int evaluated_views = 0;
  int excluded_views = 0;  // reconstruction failures

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace mvpose
