#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mvpose/camera.hpp"
#include "mvpose/pose.hpp"
#include "mvpose/rng.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

// World-to-camera map p_cam = rotation * (p_world - position).
struct CameraExtrinsics {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_camera(const Eigen::Vector3d& pw) const {
    return rotation * (pw - position);
  }
};

// What a trained model is allowed to see for one view.
struct ViewObservation {
  CameraIntrinsics k;
  Eigen::Matrix2Xd uv;           // detector output, pixels
  Eigen::VectorXd phi;           // detector confidence in [0, 1]
  std::vector<uint8_t> visible;  // 0 = occluded
};

// Held out from training; consumed only by evaluation.
struct ViewTruth {
  CameraExtrinsics extrinsics;
  Eigen::Matrix3Xd pose_cam_mm;
  Eigen::VectorXd zr;  // normalized root-relative depths
  double scale_mm = 0.0;
};

struct MultiViewSample {
  int id = 0;
  bool labeled2d = false;  // exact single-view 2D annotation
  Eigen::Matrix3Xd pose_world_mm;
  std::vector<ViewObservation> views;
  std::vector<ViewTruth> truth;

  int view_count() const { return int(views.size()); }
};

struct NoiseSpec {
  double sigma_px = 0.0;           // isotropic detector noise
  double occlusion_prob = 0.0;     // per joint, unless overridden below
  Eigen::VectorXd occlusion_prob_per_joint;  // optional, size J
  double sigma_conf_px = 5.0;      // confidence model width
  double occluded_phi_max = 0.3;   // occluded joints draw phi ~ U[0, this]
};

struct RigSpec {
  int views = 4;
  double radius_mm = 3200.0;
  double height_mm = 1400.0;
  double height_jitter_mm = 150.0;
  double yaw_jitter_deg = 5.0;
  double arc_degrees = 360.0;  // < 360 gives an MQC-style moving-camera arc
  int image_size = 256;
};

struct CameraRig {
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<CameraExtrinsics> extrinsics;

  int view_count() const { return int(intrinsics.size()); }
};

// Random pose on the skeleton tree with limb lengths exactly mean_limb_mm,
// pelvis near the origin at standing height. Uses the skeleton's rest
// directions and cone limits when present, isotropic directions otherwise.
Pose3D sample_pose(const SkeletonDef& skel, Rng& rng);

// Cameras spread over `arc_degrees` of a circle around `target`, which every
// camera looks at. fx = fy = 1146 * image_size / 256, cx = cy = image_size / 2.
CameraRig make_rig(const RigSpec& spec, const Eigen::Vector3d& target, Rng& rng);

// Projects the pose into every view and applies the noise model:
// uv_obs = uv + sigma_px * n, phi = exp(-|e|^2 / (2 sigma_conf^2)); occluded
// joints are masked with phi ~ U[0, occluded_phi_max]. Throws BehindCamera or
// PoseOutOfView (a joint outside 4x the image rectangle) for bad geometry.
MultiViewSample synthesize(const Pose3D& pose_world, const CameraRig& rig,
                           const NoiseSpec& noise, const SkeletonDef& skel,
                           Rng& rng, int id);

struct PseudoGtFilterResult {
  std::vector<uint8_t> keep;  // phi > tau
  bool discard_pose = false;  // over half below tau, or neck/pelvis below
};

PseudoGtFilterResult pseudo_gt_filter(const Eigen::VectorXd& phi, int neck,
                                      int pelvis, double tau = 0.5);

struct Dataset {
  SkeletonDef skel;
  int image_size = 256;
  std::vector<MultiViewSample> samples;
};

struct GenerateSpec {
  int samples = 50;
  int labeled_singles = 0;  // extra 1-view samples with exact 2D labels
  RigSpec rig;
  NoiseSpec noise;
  uint64_t seed = 0;
};

// Deterministic in (spec, skeleton): each sample draws from its own derived
// stream. Out-of-view draws are rejected and redrawn.
Dataset generate_dataset(const SkeletonDef& skel, const GenerateSpec& spec);

// JSON-lines: a header record with the skeleton, then one record per sample.
void write_dataset_jsonl(const Dataset& data, const std::string& path);
Dataset read_dataset_jsonl(const std::string& path);

}  // namespace mvpose
