#include "mvpose/heatmap.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mvpose/errors.hpp"

namespace mvpose {

HeatmapArray normalize_heatmap(const HeatmapArray& scores, double lambda) {
  const double top = scores.maxCoeff();
  HeatmapArray out = ((scores.array() - top) * lambda).exp();
  out /= out.sum();
  return out;
}

std::pair<double, double> soft_argmax(const HeatmapArray& hbar,
                                      const HeatmapGrid& grid) {
  double u = 0.0, v = 0.0;
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) {
      u += hbar(r, c) * grid.u_at(c);
      v += hbar(r, c) * grid.v_at(r);
    }
  return {u, v};
}

double read_relative_depth(const HeatmapArray& hbar, const HeatmapArray& hz) {
  return (hbar.array() * hz.array()).sum();
}

HeatmapArray render_gaussian(double u0, double v0, double sigma_px,
                             const HeatmapGrid& grid) {
  HeatmapArray out(grid.height, grid.width);
  const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c) {
      const double du = grid.u_at(c) - u0, dv = grid.v_at(r) - v0;
      out(r, c) = std::exp(-(du * du + dv * dv) * inv);
    }
  return out;
}

double confidence_at(const HeatmapArray& h2d_raw, const HeatmapGrid& grid,
                     double u, double v) {
  const double gc = (u - grid.origin_u) / grid.stride;
  const double gr = (v - grid.origin_v) / grid.stride;
  if (gc < 0.0 || gr < 0.0 || gc > grid.width - 1 || gr > grid.height - 1)
    return 0.0;
  int c0 = int(gc), r0 = int(gr);
  if (c0 == grid.width - 1) --c0;   // keep a full 2x2 patch at the far edge
  if (r0 == grid.height - 1) --r0;
  const double fu = gc - c0, fv = gr - r0;
  const double val = h2d_raw(r0, c0) * (1 - fu) * (1 - fv) +
                     h2d_raw(r0, c0 + 1) * fu * (1 - fv) +
                     h2d_raw(r0 + 1, c0) * (1 - fu) * fv +
                     h2d_raw(r0 + 1, c0 + 1) * fu * fv;
  return std::min(1.0, std::max(0.0, val));
}

Pose25D decode_stack(const HeatmapStack& stack, int root) {
  const int j = stack.joint_count();
  if (root < 0 || root >= j)
    throw ValidationError("decode_stack root index out of range");
  Pose25D p;
  p.u.resize(j);
  p.v.resize(j);
  p.zr.resize(j);
  p.phi.resize(j);
  for (int i = 0; i < j; ++i) {
    const HeatmapArray hbar = normalize_heatmap(stack.h2d[i], stack.lambda);
    auto [u, v] = soft_argmax(hbar, stack.grid);
    p.u[i] = u;
    p.v[i] = v;
    p.zr[i] = read_relative_depth(hbar, stack.hz[i]);
    p.phi[i] = confidence_at(stack.h2d[i], stack.grid, u, v);
  }
  const double zr_root = p.zr[root];
  p.zr.array() -= zr_root;
  p.zr[root] = 0.0;
  return p;
}

namespace {

void put_u64(std::ofstream& out, uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (x >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::ifstream& in) {
  unsigned char b[8] = {0};
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= uint64_t(b[i]) << (8 * i);
  return x;
}

void put_f64(std::ofstream& out, double x) {
  uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(out, bits);
}

double get_f64(std::ifstream& in) {
  const uint64_t bits = get_u64(in);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

void put_map(std::ofstream& out, const HeatmapArray& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

HeatmapArray get_map(std::ifstream& in, int h, int w) {
  HeatmapArray m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m(r, c) = get_f64(in);
  return m;
}

}  // namespace

void write_heatmap_stack(const HeatmapStack& stack, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write heatmap stack: " + path);
  put_u64(out, uint64_t(stack.joint_count()));
  put_u64(out, uint64_t(stack.grid.width));
  put_u64(out, uint64_t(stack.grid.height));
  put_f64(out, stack.lambda);
  for (const auto& m : stack.h2d) put_map(out, m);
  for (const auto& m : stack.hz) put_map(out, m);
  if (!out) throw ValidationError("short write for heatmap stack: " + path);
}

HeatmapStack read_heatmap_stack(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open heatmap stack: " + path);
  HeatmapStack stack;
  const uint64_t j = get_u64(in);
  const uint64_t w = get_u64(in);
  const uint64_t h = get_u64(in);
  stack.lambda = get_f64(in);
  if (!in || j == 0 || w == 0 || h == 0 || j > 1024 || w > 65536 || h > 65536)
    throw ValidationError("bad heatmap stack header: " + path);
  stack.grid = HeatmapGrid::identity(int(w), int(h));
  for (uint64_t i = 0; i < j; ++i) stack.h2d.push_back(get_map(in, int(h), int(w)));
  for (uint64_t i = 0; i < j; ++i) stack.hz.push_back(get_map(in, int(h), int(w)));
  if (!in) throw ValidationError("truncated heatmap stack: " + path);
  return stack;
}

}  // namespace mvpose
