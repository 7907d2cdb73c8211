#include "mvpose/synth.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "mvpose/errors.hpp"
#include "mvpose/geometry.hpp"

namespace mvpose {

using nlohmann::json;

namespace {

Eigen::Vector3d unit_sphere(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  const double a = rng.uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(a), r * std::sin(a), z};
}

// Uniform direction within a cone of half-angle `deg` about `axis`.
Eigen::Vector3d cone_direction(const Eigen::Vector3d& axis, double deg,
                               Rng& rng) {
  const double theta = deg * M_PI / 180.0 * std::sqrt(rng.uniform01());
  const double psi = rng.uniform(0.0, 2.0 * M_PI);
  Eigen::Vector3d e1 = axis.cross(Eigen::Vector3d::UnitX());
  if (e1.squaredNorm() < 1e-8) e1 = axis.cross(Eigen::Vector3d::UnitY());
  e1.normalize();
  const Eigen::Vector3d e2 = axis.cross(e1);
  return std::cos(theta) * axis +
         std::sin(theta) * (std::cos(psi) * e1 + std::sin(psi) * e2);
}

}  // namespace

Pose3D sample_pose(const SkeletonDef& skel, Rng& rng) {
  const int j = skel.joint_count();
  const bool hinted = int(skel.rest_directions.size()) == skel.edge_count();
  Pose3D pose;
  pose.joints.resize(3, j);
  pose.joints.setZero();

  std::vector<char> placed(j, 0);
  // Pelvis-rooted standing subject with a little world jitter.
  pose.joints.col(skel.root) =
      Eigen::Vector3d(rng.uniform(-100, 100), 950.0 + rng.uniform(-50, 50),
                      rng.uniform(-100, 100));
  placed[skel.root] = 1;

  // Edges are tree edges; sweep until every joint hangs off a placed parent.
  bool progress = true;
  while (progress) {
    progress = false;
    for (int e = 0; e < skel.edge_count(); ++e) {
      auto [a, b] = skel.edges[e];
      int parent = -1, child = -1;
      if (placed[a] && !placed[b]) parent = a, child = b;
      if (placed[b] && !placed[a]) parent = b, child = a;
      if (parent < 0) continue;
      const Eigen::Vector3d dir =
          hinted ? cone_direction(skel.rest_directions[e], skel.cone_deg[e], rng)
                 : unit_sphere(rng);
      pose.joints.col(child) =
          pose.joints.col(parent) + skel.mean_limb_mm[e] * dir;
      placed[child] = 1;
      progress = true;
    }
  }
  pose.scale_state = ScaleState::raw;
  return pose;
}

CameraRig make_rig(const RigSpec& spec, const Eigen::Vector3d& target,
                   Rng& rng) {
  if (spec.views < 1) throw ValidationError("rig needs at least one view");
  CameraRig rig;
  const double f = 1146.0 * spec.image_size / 256.0;
  const double c = spec.image_size / 2.0;
  const double arc = spec.arc_degrees * M_PI / 180.0;
  for (int i = 0; i < spec.views; ++i) {
    const double frac =
        spec.views == 1 ? 0.0 : double(i) / (arc >= 2 * M_PI - 1e-9
                                                 ? spec.views
                                                 : spec.views - 1);
    const double yaw = frac * arc +
                       rng.uniform(-1.0, 1.0) * spec.yaw_jitter_deg * M_PI / 180.0;
    const double h =
        spec.height_mm + rng.uniform(-1.0, 1.0) * spec.height_jitter_mm;
    Eigen::Vector3d pos(spec.radius_mm * std::sin(yaw), h,
                        spec.radius_mm * std::cos(yaw));
    pos.x() += target.x();
    pos.z() += target.z();

    CameraExtrinsics ex;
    ex.position = pos;
    const Eigen::Vector3d fwd = (target - pos).normalized();
    Eigen::Vector3d right = fwd.cross(Eigen::Vector3d::UnitY());
    if (right.squaredNorm() < 1e-10)
      throw ValidationError("camera directly above target");
    right.normalize();
    const Eigen::Vector3d down = fwd.cross(right);
    ex.rotation.row(0) = right;
    ex.rotation.row(1) = down;
    ex.rotation.row(2) = fwd;
    rig.extrinsics.push_back(ex);
    rig.intrinsics.push_back(CameraIntrinsics(f, f, c, c));
  }
  return rig;
}

MultiViewSample synthesize(const Pose3D& pose_world, const CameraRig& rig,
                           const NoiseSpec& noise, const SkeletonDef& skel,
                           Rng& rng, int id) {
  const int j = skel.joint_count();
  if (pose_world.joint_count() != j)
    throw ValidationError("pose joint count does not match skeleton");
  MultiViewSample sample;
  sample.id = id;
  sample.pose_world_mm = pose_world.joints;

  for (int v = 0; v < rig.view_count(); ++v) {
    const auto& k = rig.intrinsics[v];
    const auto& ex = rig.extrinsics[v];

    Pose3D cam;
    cam.joints.resize(3, j);
    for (int i = 0; i < j; ++i)
      cam.joints.col(i) = ex.to_camera(pose_world.joints.col(i));
    const Eigen::Matrix2Xd uv_exact = project(cam, k);

    ViewObservation obs;
    obs.k = k;
    obs.uv.resize(2, j);
    obs.phi.resize(j);
    obs.visible.assign(j, 1);

    for (int i = 0; i < j; ++i) {
      const double p_occ = noise.occlusion_prob_per_joint.size() == j
                               ? noise.occlusion_prob_per_joint[i]
                               : noise.occlusion_prob;
      if (rng.uniform01() < p_occ) obs.visible[i] = 0;
    }

    // 4x margin about the image center: anything visible outside is a bad draw.
    const double size = 2.0 * k.cx();
    for (int i = 0; i < j; ++i) {
      if (!obs.visible[i]) continue;
      const double u = uv_exact(0, i), vv = uv_exact(1, i);
      if (u < k.cx() - 2 * size || u > k.cx() + 2 * size ||
          vv < k.cy() - 2 * size || vv > k.cy() + 2 * size)
        throw PoseOutOfView("joint projects outside the 4x image margin");
    }

    for (int i = 0; i < j; ++i) {
      const double n1 = rng.normal(), n2 = rng.normal();
      obs.uv(0, i) = uv_exact(0, i) + noise.sigma_px * n1;
      obs.uv(1, i) = uv_exact(1, i) + noise.sigma_px * n2;
      const double e2 =
          noise.sigma_px * noise.sigma_px * (n1 * n1 + n2 * n2);
      obs.phi[i] = std::exp(-e2 / (2.0 * noise.sigma_conf_px * noise.sigma_conf_px));
      if (!obs.visible[i]) obs.phi[i] = rng.uniform(0.0, noise.occluded_phi_max);
    }

    ViewTruth truth;
    truth.extrinsics = ex;
    truth.pose_cam_mm = cam.joints;
    const auto norm = scale_normalize(cam, skel);
    truth.scale_mm = norm.scale;
    truth.zr.resize(j);
    const double z_root = norm.pose.joints(2, skel.root);
    for (int i = 0; i < j; ++i) truth.zr[i] = norm.pose.joints(2, i) - z_root;

    sample.views.push_back(std::move(obs));
    sample.truth.push_back(std::move(truth));
  }
  return sample;
}

PseudoGtFilterResult pseudo_gt_filter(const Eigen::VectorXd& phi, int neck,
                                      int pelvis, double tau) {
  const int j = int(phi.size());
  PseudoGtFilterResult out;
  out.keep.assign(j, 0);
  int below = 0;
  for (int i = 0; i < j; ++i) {
    if (phi[i] > tau)
      out.keep[i] = 1;
    else
      ++below;
  }
  out.discard_pose =
      (2 * below > j) || !out.keep[neck] || !out.keep[pelvis];
  return out;
}

Dataset generate_dataset(const SkeletonDef& skel, const GenerateSpec& spec) {
  Dataset data;
  data.skel = skel;
  data.image_size = spec.rig.image_size;
  const Eigen::Vector3d target(0, 1000, 0);

  RigSpec single = spec.rig;
  single.views = 1;

  const int total = spec.samples + spec.labeled_singles;
  for (int i = 0; i < total; ++i) {
    const bool labeled = i >= spec.samples;
    Rng rng(Rng::derive(spec.seed, uint64_t(i)));
    for (int attempt = 0;; ++attempt) {
      try {
        const Pose3D pose = sample_pose(skel, rng);
        const CameraRig rig = make_rig(labeled ? single : spec.rig, target, rng);
        // Labeled singles carry exact annotations: no noise, no occlusion.
        const NoiseSpec& nz = labeled ? NoiseSpec{} : spec.noise;
        MultiViewSample s = synthesize(pose, rig, nz, skel, rng, i);
        s.labeled2d = labeled;
        data.samples.push_back(std::move(s));
        break;
      } catch (const NumericalError&) {
        if (attempt >= 100)
          throw PoseOutOfView("rig cannot frame the sampled poses");
      }
    }
  }
  return data;
}

namespace {

json matrix_json(const Eigen::Matrix3Xd& m) {
  json out = json::array();
  for (int i = 0; i < m.cols(); ++i)
    out.push_back({m(0, i), m(1, i), m(2, i)});
  return out;
}

Eigen::Matrix3Xd matrix_from_json(const json& a) {
  Eigen::Matrix3Xd m(3, a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    m(0, i) = a[i].at(0).get<double>();
    m(1, i) = a[i].at(1).get<double>();
    m(2, i) = a[i].at(2).get<double>();
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const json& a) {
  auto vec = a.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(vec.data(), vec.size());
}

}  // namespace

void write_dataset_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset: " + path);
  json header;
  header["type"] = "header";
  header["skeleton"] = json::parse(data.skel.to_json());
  header["image_size"] = data.image_size;
  out << header.dump() << "\n";

  for (const auto& s : data.samples) {
    json rec;
    rec["type"] = "sample";
    rec["id"] = s.id;
    rec["labeled2d"] = s.labeled2d;
    rec["pose_world_mm"] = matrix_json(s.pose_world_mm);
    auto& views = rec["views"] = json::array();
    for (int v = 0; v < s.view_count(); ++v) {
      const auto& obs = s.views[v];
      const auto& tr = s.truth[v];
      json jv;
      jv["K"] = {{"fx", obs.k.fx()},
                 {"fy", obs.k.fy()},
                 {"cx", obs.k.cx()},
                 {"cy", obs.k.cy()}};
      json uv = json::array();
      for (int i = 0; i < obs.uv.cols(); ++i)
        uv.push_back({obs.uv(0, i), obs.uv(1, i)});
      jv["obs_uv"] = uv;
      jv["phi"] = vector_json(obs.phi);
      jv["visible"] = obs.visible;
      json jt;
      std::vector<double> r(9);
      Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data()) =
          tr.extrinsics.rotation;
      jt["rotation"] = r;
      jt["position"] = {tr.extrinsics.position.x(), tr.extrinsics.position.y(),
                        tr.extrinsics.position.z()};
      jt["pose_cam_mm"] = matrix_json(tr.pose_cam_mm);
      jt["zr"] = vector_json(tr.zr);
      jt["scale_mm"] = tr.scale_mm;
      jv["truth"] = jt;
      views.push_back(jv);
    }
    out << rec.dump() << "\n";
  }
}

Dataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset: " + path);
  Dataset data;
  bool have_header = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad dataset line: ") + e.what());
    }
    try {
      const std::string type = rec.at("type").get<std::string>();
      if (type == "header") {
        data.skel = SkeletonDef::from_json(rec.at("skeleton").dump());
        data.image_size = rec.at("image_size").get<int>();
        have_header = true;
        continue;
      }
      if (type != "sample") continue;
      if (!have_header)
        throw ValidationError("dataset sample precedes header");
      MultiViewSample s;
      s.id = rec.at("id").get<int>();
      s.labeled2d = rec.at("labeled2d").get<bool>();
      s.pose_world_mm = matrix_from_json(rec.at("pose_world_mm"));
      for (const auto& jv : rec.at("views")) {
        ViewObservation obs;
        const auto& jk = jv.at("K");
        obs.k = CameraIntrinsics(jk.at("fx").get<double>(),
                                 jk.at("fy").get<double>(),
                                 jk.at("cx").get<double>(),
                                 jk.at("cy").get<double>());
        const auto& uv = jv.at("obs_uv");
        obs.uv.resize(2, uv.size());
        for (size_t i = 0; i < uv.size(); ++i) {
          obs.uv(0, i) = uv[i].at(0).get<double>();
          obs.uv(1, i) = uv[i].at(1).get<double>();
        }
        obs.phi = vector_from_json(jv.at("phi"));
        obs.visible = jv.at("visible").get<std::vector<uint8_t>>();
        ViewTruth tr;
        const auto& jt = jv.at("truth");
        auto r = jt.at("rotation").get<std::vector<double>>();
        tr.extrinsics.rotation =
            Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(r.data());
        auto p = jt.at("position").get<std::vector<double>>();
        tr.extrinsics.position = Eigen::Vector3d(p[0], p[1], p[2]);
        tr.pose_cam_mm = matrix_from_json(jt.at("pose_cam_mm"));
        tr.zr = vector_from_json(jt.at("zr"));
        tr.scale_mm = jt.at("scale_mm").get<double>();
        s.views.push_back(std::move(obs));
        s.truth.push_back(std::move(tr));
      }
      data.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad dataset record: ") + e.what());
    }
  }
  if (!have_header) throw ValidationError("dataset has no header record");
  return data;
}

}  // namespace mvpose
