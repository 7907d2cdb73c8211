#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

namespace mvpose {

// Kinematic tree with per-edge mean limb lengths. `scale_pair` names the
// (neck, pelvis) joints whose distance defines the normalization scale;
// `root` is the pelvis.
struct SkeletonDef {
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> edges;  // (parent, child)
  int scale_k = 0;                         // neck
  int scale_l = 0;                         // pelvis
  int root = 0;
  Eigen::VectorXd mean_limb_mm;  // per edge

  // Derived on load: mean_limb_mm / reference_scale_mm. reference_scale_mm is
  // the mean scale-pair distance; when (k, l) is a direct edge this is that
  // edge's length, otherwise the tree-path length between k and l.
  Eigen::VectorXd mean_limb_normalized;
  double reference_scale_mm = 0.0;

  // Pose-sampler hints, one per edge: rest direction in the world frame and
  // max cone angle (degrees). Not serialized; empty means isotropic sampling.
  std::vector<Eigen::Vector3d> rest_directions;
  std::vector<double> cone_deg;

  int joint_count() const { return int(joint_names.size()); }
  int edge_count() const { return int(edges.size()); }

  // Throws ValidationError unless edges form a connected tree over all joints,
  // indices are in range, scale pair is distinct, and limb lengths are positive.
  void validate() const;

  // Fills mean_limb_normalized / reference_scale_mm; requires validate() to pass.
  void finalize();

  static SkeletonDef default_human15();

  std::string to_json() const;
  static SkeletonDef from_json(const std::string& text);
  static SkeletonDef load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace mvpose
