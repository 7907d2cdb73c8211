#pragma once

#include <Eigen/Core>

#include "mvpose/errors.hpp"

namespace mvpose {

// Pinhole intrinsics. Camera frame: x right, y down, z forward (z > 0 visible).
class CameraIntrinsics {
 public:
  CameraIntrinsics() : CameraIntrinsics(1.0, 1.0, 0.0, 0.0) {}

  CameraIntrinsics(double fx, double fy, double cx, double cy)
      : fx_(fx), fy_(fy), cx_(cx), cy_(cy) {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw ValidationError("camera focal lengths must be positive");
    k_.setIdentity();
    k_(0, 0) = fx;
    k_(1, 1) = fy;
    k_(0, 2) = cx;
    k_(1, 2) = cy;
    kinv_.setIdentity();
    kinv_(0, 0) = 1.0 / fx;
    kinv_(1, 1) = 1.0 / fy;
    kinv_(0, 2) = -cx / fx;
    kinv_(1, 2) = -cy / fy;
  }

  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }

  const Eigen::Matrix3d& matrix() const { return k_; }
  const Eigen::Matrix3d& inverse() const { return kinv_; }

  // K^{-1} (u, v, 1)^T
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx_) / fx_, (v - cy_) / fy_, 1.0};
  }

 private:
  double fx_, fy_, cx_, cy_;
  Eigen::Matrix3d k_, kinv_;
};

}  // namespace mvpose
