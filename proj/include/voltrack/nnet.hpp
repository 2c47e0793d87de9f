#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "voltrack/common.hpp"

namespace voltrack {

/// Fully connected head: affine -> per-sample standardization -> ReLU ->
/// inverted dropout on every hidden layer, plain affine on the last.
struct MlpSpec {
  std::vector<int> layer_sizes;  // input, hidden..., output
  bool standardize = true;
  double dropout_rate = 0.0;

  void validate() const;  // throws ConfigInvalid
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  int n_affine() const { return static_cast<int>(layer_sizes.size()) - 1; }
};

struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;  // [l] : layer_sizes[l+1] x layer_sizes[l]
  std::vector<Eigen::VectorXd> biases;
  uint64_t version = 0;  // bumped on every parameter update

  int scalar_count() const;
};

/// Uniform +-1/sqrt(fan_in) weights, zero biases; deterministic in the seed.
MlpParams init_mlp(const MlpSpec& spec, uint64_t seed);

/// Intermediate activations captured by a training-mode forward pass.
/// Tied to the parameter version it was recorded under.
struct MlpTape {
  uint64_t params_version = 0;
  std::vector<Eigen::VectorXd> inputs;        // input of each affine layer
  std::vector<Eigen::VectorXd> standardized;  // hidden: post-standardization
  std::vector<double> inv_sigma;              // hidden: 1/sqrt(var + eps)
  std::vector<Eigen::VectorXd> dropout_scale; // hidden: 0 or 1/(1-p) per unit
};

inline constexpr double kStandardizeEpsilon = 1e-5;

/// train_mode enables dropout (mask drawn from dropout_seed). Pass a tape
/// to record activations for mlp_backward.
Eigen::VectorXd mlp_forward(const MlpParams& params, const MlpSpec& spec,
                            const Eigen::VectorXd& input, bool train_mode,
                            uint64_t dropout_seed, MlpTape* tape = nullptr);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
  Eigen::VectorXd d_input;
};

/// Reverse pass for d(loss)/d(output) = d_output. Throws StaleTape when the
/// parameters changed since the tape was recorded.
MlpGrads mlp_backward(const MlpParams& params, const MlpSpec& spec, const MlpTape& tape,
                      const Eigen::VectorXd& d_output);

/// AdamW with decoupled weight decay over a flat parameter vector.
struct OptimState {
  Eigen::VectorXd m;  // first moment
  Eigen::VectorXd v;  // second moment
  int64_t step = 0;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimState& state);

/// Linear warmup from 0 to base_lr over warmup_steps, then a cosine decay
/// to 0 at total_steps. Steps past the end stay at 0.
double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr);

}  // namespace voltrack
