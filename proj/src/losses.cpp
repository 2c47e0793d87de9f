#include "voltrack/losses.hpp"

#include <cmath>

namespace voltrack {

void LossWeights::validate() const {
  if (recon < 0.0 || proj < 0.0 || attn < 0.0)
    throw ConfigInvalid("loss weights must be >= 0");
}

double recon_loss(const std::vector<Point3>& pred, const std::vector<Point3>& gt,
                  const std::vector<uint8_t>& valid, bool* empty) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw ShapeMismatch("recon_loss arguments must have matching lengths");
  double total = 0.0;
  int count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    total += (pred[i] - gt[i]).squaredNorm();
    ++count;
  }
  if (empty) *empty = (count == 0);
  return count > 0 ? total / count : 0.0;
}

double proj_loss(const std::vector<Point3>& pred, const std::vector<CameraParams>& cams,
                 const std::vector<Eigen::MatrixXd>& points,
                 const std::vector<std::vector<uint8_t>>& visible, double scale, int* n_pairs,
                 int* n_degenerate) {
  if (cams.size() != points.size() || cams.size() != visible.size())
    throw ShapeMismatch("proj_loss per-view arguments must have matching lengths");
  if (!(scale > 0.0)) throw ConfigInvalid("proj_loss scale must be positive");
  double total = 0.0;
  int pairs = 0, degenerate = 0;
  for (size_t v = 0; v < cams.size(); ++v) {
    if (points[v].rows() != static_cast<Eigen::Index>(pred.size()) ||
        visible[v].size() != pred.size())
      throw ShapeMismatch("proj_loss observation shape mismatch");
    for (size_t m = 0; m < pred.size(); ++m) {
      if (!visible[v][m]) continue;
      try {
        const Projection p = project(pred[m], cams[v]);
        const Point2 obs = points[v].row(m).transpose();
        total += (p.pixel - obs).squaredNorm() * scale * scale;
        ++pairs;
      } catch (const DegenerateProjection&) {
        ++degenerate;
      }
    }
  }
  if (n_pairs) *n_pairs = pairs;
  if (n_degenerate) *n_degenerate = degenerate;
  return pairs > 0 ? total / pairs : 0.0;
}

Eigen::MatrixXd cross_view_attention(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                                     const std::vector<uint8_t>& vis_a,
                                     const std::vector<uint8_t>& vis_b, double temperature) {
  if (temperature <= 0.0)
    throw NonPositiveTemperature("cross-view attention temperature must be positive");
  if (za.rows() != zb.rows() || za.cols() != zb.cols())
    throw ShapeMismatch("cross-view features must share a shape");
  const int k = static_cast<int>(za.rows());
  if (static_cast<int>(vis_a.size()) != k || static_cast<int>(vis_b.size()) != k)
    throw ShapeMismatch("visibility length mismatch");
  Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    if (!vis_a[i] || !vis_b[i]) continue;
    double best = std::numeric_limits<double>::lowest();
    for (int j = 0; j < k; ++j) {
      if (!vis_a[j] || !vis_b[j]) continue;
      best = std::max(best, -(za.row(i) - zb.row(j)).squaredNorm() / temperature);
    }
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      if (!vis_a[j] || !vis_b[j]) continue;
      const double w =
          std::exp(-(za.row(i) - zb.row(j)).squaredNorm() / temperature - best);
      attn(i, j) = w;
      total += w;
    }
    attn.row(i) /= total;
  }
  return attn;
}

double attn_loss(const std::vector<Eigen::MatrixXd>& feats,
                 const std::vector<std::vector<uint8_t>>& visible, double temperature,
                 double* d_temperature) {
  if (temperature <= 0.0)
    throw NonPositiveTemperature("attention loss temperature must be positive");
  const int n = static_cast<int>(feats.size());
  if (n < 2) throw InsufficientViews("the correspondence loss needs >= 2 views");
  if (visible.size() != feats.size()) throw ShapeMismatch("visibility list length mismatch");

  const double t_sq = temperature * temperature;
  double loss = 0.0, d_t = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      std::vector<int> both;
      for (size_t i = 0; i < visible[a].size(); ++i)
        if (visible[a][i] && visible[b][i]) both.push_back(static_cast<int>(i));
      if (both.empty()) continue;
      const int m = static_cast<int>(both.size());
      Eigen::MatrixXd dist(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          dist(i, j) = (feats[a].row(both[i]) - feats[b].row(both[j])).squaredNorm();
      double pair_loss = 0.0, pair_dt = 0.0;
      for (int i = 0; i < m; ++i) {
        const Eigen::ArrayXd logits = -dist.row(i).transpose().array() / temperature;
        const Eigen::ArrayXd shifted = (logits - logits.maxCoeff()).exp();
        const Eigen::ArrayXd row = shifted / shifted.sum();
        pair_loss += -std::log(std::max(row(i), 1e-300));
        for (int j = 0; j < m; ++j)
          pair_dt += (row(j) - (i == j ? 1.0 : 0.0)) * dist(i, j) / t_sq;
      }
      loss += pair_loss / m;
      d_t += pair_dt / m;
    }
  const double norm = static_cast<double>(n) * (n - 1);
  if (d_temperature) *d_temperature = d_t / norm;
  return loss / norm;
}

double total_loss(double recon, double proj, double attn, const LossWeights& weights) {
  weights.validate();
  return weights.recon * recon + weights.proj * proj + weights.attn * attn;
}

}  // namespace voltrack
