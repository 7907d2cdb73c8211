#include "mvpose/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "mvpose/errors.hpp"

namespace mvpose {

using nlohmann::json;

void SkeletonDef::validate() const {
  const int j = joint_count();
  if (j < 2) throw ValidationError("skeleton needs at least 2 joints");
  if (edge_count() != j - 1)
    throw ValidationError("skeleton edges must number joints-1 (tree)");
  if (int(mean_limb_mm.size()) != edge_count())
    throw ValidationError("mean_limb_lengths_mm size must match edge count");
  auto in_range = [j](int i) { return i >= 0 && i < j; };
  if (!in_range(scale_k) || !in_range(scale_l) || !in_range(root))
    throw ValidationError("scale_pair/root joint index out of range");
  if (scale_k == scale_l)
    throw ValidationError("scale_pair joints must be distinct");

  std::vector<std::vector<int>> adj(j);
  for (auto [a, b] : edges) {
    if (!in_range(a) || !in_range(b) || a == b)
      throw ValidationError("edge joint index out of range");
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<char> seen(j, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    for (int m : adj[n])
      if (!seen[m]) {
        seen[m] = 1;
        ++visited;
        stack.push_back(m);
      }
  }
  if (visited != j) throw ValidationError("skeleton edges must be connected");
  for (int e = 0; e < edge_count(); ++e)
    if (!(mean_limb_mm[e] > 0.0))
      throw ValidationError("mean limb lengths must be positive");
}

void SkeletonDef::finalize() {
  validate();
  // Scale-pair distance: direct edge length if present, else path length.
  double ref = 0.0;
  bool direct = false;
  for (int e = 0; e < edge_count(); ++e) {
    auto [a, b] = edges[e];
    if ((a == scale_k && b == scale_l) || (a == scale_l && b == scale_k)) {
      ref = mean_limb_mm[e];
      direct = true;
      break;
    }
  }
  if (!direct) {
    const int j = joint_count();
    std::vector<std::vector<std::pair<int, int>>> adj(j);  // (joint, edge)
    for (int e = 0; e < edge_count(); ++e) {
      adj[edges[e].first].push_back({edges[e].second, e});
      adj[edges[e].second].push_back({edges[e].first, e});
    }
    std::vector<double> dist(j, -1.0);
    std::vector<int> stack{scale_l};
    dist[scale_l] = 0.0;
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      for (auto [m, e] : adj[n])
        if (dist[m] < 0.0) {
          dist[m] = dist[n] + mean_limb_mm[e];
          stack.push_back(m);
        }
    }
    ref = dist[scale_k];
  }
  reference_scale_mm = ref;
  mean_limb_normalized = mean_limb_mm / ref;
}

SkeletonDef SkeletonDef::default_human15() {
  SkeletonDef s;
  s.joint_names = {"pelvis", "neck",    "head",    "l_shoulder", "l_elbow",
                   "l_wrist", "r_shoulder", "r_elbow", "r_wrist",    "l_hip",
                   "l_knee",  "l_ankle", "r_hip",   "r_knee",     "r_ankle"};
  s.edges = {{0, 1}, {1, 2}, {1, 3}, {3, 4}, {4, 5},  {1, 6},  {6, 7},
             {7, 8}, {0, 9}, {9, 10}, {10, 11}, {0, 12}, {12, 13}, {13, 14}};
  s.scale_k = 1;  // neck
  s.scale_l = 0;  // pelvis
  s.root = 0;
  s.mean_limb_mm.resize(14);
  s.mean_limb_mm << 500, 250, 180, 280, 250, 180, 280, 250, 130, 440, 420, 130,
      440, 420;
  // Rest directions (y up) and cone limits keep torsos near vertical so the
  // scale pair never lines up with a viewing ray.
  using V = Eigen::Vector3d;
  s.rest_directions = {V(0, 1, 0),    V(0, 1, 0),     V(-1, 0, 0),
                       V(-0.3, -1, 0), V(-0.2, -1, 0), V(1, 0, 0),
                       V(0.3, -1, 0),  V(0.2, -1, 0),  V(-1, -0.3, 0),
                       V(0, -1, 0),   V(0, -1, 0),    V(1, -0.3, 0),
                       V(0, -1, 0),   V(0, -1, 0)};
  for (auto& d : s.rest_directions) d.normalize();
  s.cone_deg = {12, 15, 10, 55, 60, 10, 55, 60, 5, 30, 30, 5, 30, 30};
  s.finalize();
  return s;
}

std::string SkeletonDef::to_json() const {
  json j;
  j["joints"] = joint_names;
  auto& je = j["edges"] = json::array();
  for (auto [a, b] : edges) je.push_back({a, b});
  j["scale_pair"] = {scale_k, scale_l};
  j["root"] = root;
  j["mean_limb_lengths_mm"] =
      std::vector<double>(mean_limb_mm.data(), mean_limb_mm.data() + mean_limb_mm.size());
  return j.dump(2);
}

SkeletonDef SkeletonDef::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad skeleton JSON: ") + e.what());
  }
  SkeletonDef s;
  try {
    s.joint_names = j.at("joints").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges"))
      s.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    s.scale_k = j.at("scale_pair").at(0).get<int>();
    s.scale_l = j.at("scale_pair").at(1).get<int>();
    s.root = j.at("root").get<int>();
    auto lens = j.at("mean_limb_lengths_mm").get<std::vector<double>>();
    s.mean_limb_mm = Eigen::Map<Eigen::VectorXd>(lens.data(), lens.size());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad skeleton JSON: ") + e.what());
  }
  s.finalize();
  return s;
}

SkeletonDef SkeletonDef::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open skeleton file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void SkeletonDef::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write skeleton file: " + path);
  out << to_json() << "\n";
}

}  // namespace mvpose
