#include "mvpose/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mvpose/alignment.hpp"
#include "mvpose/errors.hpp"

namespace mvpose {

double recover_scale(const Pose3D& normalized, const SkeletonDef& skel) {
  double num = 0.0, den = 0.0;
  for (int e = 0; e < skel.edge_count(); ++e) {
    auto [a, b] = skel.edges[e];
    const double lhat =
        (normalized.joints.col(a) - normalized.joints.col(b)).norm();
    num += skel.mean_limb_mm[e] * lhat;
    den += lhat * lhat;
  }
  if (den < 1e-12) throw ZeroLimbs("prediction has no limb extent to scale");
  return num / den;
}

namespace {

Eigen::Matrix3Xd root_centered(const Eigen::Matrix3Xd& p, int root) {
  return p.colwise() - Eigen::Vector3d(p.col(root));
}

double mean_joint_error(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b) {
  double sum = 0.0;
  for (int i = 0; i < a.cols(); ++i) sum += (a.col(i) - b.col(i)).norm();
  return sum / double(a.cols());
}

double ls_scale(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  const double den = pred.squaredNorm();
  if (den < 1e-12)
    throw ZeroPrediction("root-centered prediction has ~zero norm");
  return (pred.array() * gt.array()).sum() / den;
}

double pck_impl(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
                int root, double radius_mm, const std::vector<int>& subset,
                bool scale_correct) {
  Eigen::Matrix3Xd p = root_centered(pred, root);
  const Eigen::Matrix3Xd g = root_centered(gt, root);
  if (scale_correct) p *= ls_scale(p, g);
  std::vector<int> joints = subset;
  if (joints.empty())
    for (int i = 0; i < pred.cols(); ++i)
      if (i != root) joints.push_back(i);
  int hit = 0;
  for (int i : joints)
    if ((p.col(i) - g.col(i)).norm() < radius_mm) ++hit;
  return 100.0 * hit / double(joints.size());
}

}  // namespace

double mpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
             int root) {
  return mean_joint_error(root_centered(pred, root), root_centered(gt, root));
}

double nmpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
              int root) {
  const Eigen::Matrix3Xd p = root_centered(pred, root);
  const Eigen::Matrix3Xd g = root_centered(gt, root);
  return mean_joint_error(ls_scale(p, g) * p, g);
}

double pmpjpe(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt) {
  const auto t = weighted_similarity_align(
      pred, gt, Eigen::VectorXd::Ones(pred.cols()));
  return mean_joint_error(apply(t, pred), gt);
}

double pck(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root,
           double radius_mm, const std::vector<int>& subset) {
  return pck_impl(pred, gt, root, radius_mm, subset, false);
}

double npck(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt, int root,
            double radius_mm, const std::vector<int>& subset) {
  return pck_impl(pred, gt, root, radius_mm, subset, true);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mpjpe_mm"] = mpjpe_mm;
  j["nmpjpe_mm"] = nmpjpe_mm;
  j["pmpjpe_mm"] = pmpjpe_mm;
  j["pck_percent"] = pck_percent;
  j["npck_percent"] = npck_percent;
  j["depth_abs_err"] = depth_abs_err;
  j["per_joint_mpjpe_mm"] = std::vector<double>(
      per_joint_mpjpe_mm.data(),
      per_joint_mpjpe_mm.data() + per_joint_mpjpe_mm.size());
  j["evaluated_views"] = evaluated_views;
  j["excluded_views"] = excluded_views;
  return j.dump(2);
}

std::string EvalReport::csv_header() {
  return "mpjpe_mm,nmpjpe_mm,pmpjpe_mm,pck_percent,npck_percent,depth_abs_err,"
         "evaluated_views,excluded_views";
}

std::string EvalReport::csv_row() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << mpjpe_mm << "," << nmpjpe_mm << "," << pmpjpe_mm << "," << pck_percent
     << "," << npck_percent << "," << depth_abs_err << "," << evaluated_views
     << "," << excluded_views;
  return ss.str();
}

}  // namespace mvpose
