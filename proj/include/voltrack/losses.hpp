#pragma once

#include <vector>

#include "voltrack/geometry.hpp"

namespace voltrack {

struct LossWeights {
  double recon = 1.0;
  double proj = 0.7;
  double attn = 0.8;
  void validate() const;  // throws ConfigInvalid on negatives
};

/// Mean squared 3D distance over entries with valid != 0. An empty
/// selection yields 0 and sets *empty.
double recon_loss(const std::vector<Point3>& pred, const std::vector<Point3>& gt,
                  const std::vector<uint8_t>& valid, bool* empty = nullptr);

/// Mean squared reprojection residual over visible (point, view) pairs,
/// with pixel distances scaled by `scale` (1/image_diagonal). Pairs whose
/// prediction falls at or behind a camera are skipped and counted in
/// *n_degenerate rather than throwing.
double proj_loss(const std::vector<Point3>& pred, const std::vector<CameraParams>& cams,
                 const std::vector<Eigen::MatrixXd>& points,
                 const std::vector<std::vector<uint8_t>>& visible, double scale,
                 int* n_pairs = nullptr, int* n_degenerate = nullptr);

/// Row softmax of -||za_i - zb_j||^2 / temperature, restricted to points
/// visible in both views: hidden rows are zero, hidden columns get zero
/// weight. Visible rows sum to one.
Eigen::MatrixXd cross_view_attention(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                                     const std::vector<uint8_t>& vis_a,
                                     const std::vector<uint8_t>& vis_b, double temperature);

/// Cross-view correspondence loss: for every ordered view pair (a, b) the
/// mean of -log A_ab(i, i) over points visible in both, averaged over the
/// N(N-1) ordered pairs (empty pairs contribute zero). Optionally reports
/// the analytic d(loss)/d(temperature).
double attn_loss(const std::vector<Eigen::MatrixXd>& feats,
                 const std::vector<std::vector<uint8_t>>& visible, double temperature,
                 double* d_temperature = nullptr);

double total_loss(double recon, double proj, double attn, const LossWeights& weights);

}  // namespace voltrack
