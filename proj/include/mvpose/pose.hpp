#pragma once

#include <Eigen/Core>

namespace mvpose {

enum class ScaleState { raw, normalized };

// 3D joints, one column per joint. `scale_state` tracks whether coordinates
// are metric (mm) or scale-normalized (scale-pair distance == 1).
struct Pose3D {
  Eigen::Matrix3Xd joints;
  ScaleState scale_state = ScaleState::raw;

  int joint_count() const { return int(joints.cols()); }
};

// Per-joint 2.5D prediction: pixel coordinates, root-relative normalized
// depth (zr[root] == 0), and confidence in [0, 1].
struct Pose25D {
  Eigen::VectorXd u, v, zr, phi;

  int joint_count() const { return int(u.size()); }
};

}  // namespace mvpose
