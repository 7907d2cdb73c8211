#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "mvpose/pose.hpp"

namespace mvpose {

// Cell (row, col) sits at pixel (origin_u + col*stride, origin_v + row*stride).
struct HeatmapGrid {
  int width = 0, height = 0;
  double stride = 1.0, origin_u = 0.0, origin_v = 0.0;

  double u_at(int col) const { return origin_u + col * stride; }
  double v_at(int row) const { return origin_v + row * stride; }
  int cells() const { return width * height; }

  static HeatmapGrid identity(int w, int h) { return {w, h, 1.0, 0.0, 0.0}; }

  // Cell centers of a `cells` x `cells` grid over a square image.
  static HeatmapGrid for_image(int image_size, int cells) {
    const double stride = double(image_size) / cells;
    return {cells, cells, stride, 0.5 * stride, 0.5 * stride};
  }

  // Square grid over [u0, u0+span] x [v0, v0+span]. Long-lens rigs put limbs
  // well outside the nominal image, so training grids cover the margin box.
  static HeatmapGrid for_span(double u0, double v0, double span, int cells) {
    const double stride = span / cells;
    return {cells, cells, stride, u0 + 0.5 * stride, v0 + 0.5 * stride};
  }
};

using HeatmapArray =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-joint raw 2D score maps paired with latent depth maps on a shared grid.
struct HeatmapStack {
  std::vector<HeatmapArray> h2d, hz;
  HeatmapGrid grid;
  double lambda = 50.0;

  int joint_count() const { return int(h2d.size()); }
};

// Spatial softmax of lambda * scores with max subtraction; sums to 1.
// lambda == 0 gives the uniform map.
HeatmapArray normalize_heatmap(const HeatmapArray& scores, double lambda);

// Expectation of grid coordinates under a normalized map.
std::pair<double, double> soft_argmax(const HeatmapArray& hbar,
                                      const HeatmapGrid& grid);

// sum(hbar .* hz): latent depth readout for one joint, before root re-centering.
double read_relative_depth(const HeatmapArray& hbar, const HeatmapArray& hz);

// Unit-peak Gaussian exp(-d^2 / (2 sigma^2)) sampled at cell pixel coords.
HeatmapArray render_gaussian(double u0, double v0, double sigma_px,
                             const HeatmapGrid& grid);

// Bilinear value of a raw map at pixel (u, v), clamped to [0, 1];
// coordinates outside the grid return 0.
double confidence_at(const HeatmapArray& h2d_raw, const HeatmapGrid& grid,
                     double u, double v);

// Full decode: soft-argmax positions, depth readouts re-centered so
// zr[root] == 0, confidences read at the predicted coordinates.
Pose25D decode_stack(const HeatmapStack& stack, int root);

// Flat binary layout: J, W, H as int64 LE, lambda as f64 LE, then J row-major
// f64 maps of h2d followed by J maps of hz. The grid-to-pixel mapping is not
// stored; the reader gets an identity grid unless one is supplied.
void write_heatmap_stack(const HeatmapStack& stack, const std::string& path);
HeatmapStack read_heatmap_stack(const std::string& path);

}  // namespace mvpose
