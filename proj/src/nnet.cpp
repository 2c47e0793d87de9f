#include "voltrack/nnet.hpp"

#include <cmath>

namespace voltrack {

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2)
    throw ConfigInvalid("an MLP needs at least an input and an output layer");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigInvalid("layer sizes must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigInvalid("dropout_rate must lie in [0, 1)");
}

int MlpParams::scalar_count() const {
  int n = 0;
  for (size_t l = 0; l < weights.size(); ++l)
    n += static_cast<int>(weights[l].size() + biases[l].size());
  return n;
}

MlpParams init_mlp(const MlpSpec& spec, uint64_t seed) {
  spec.validate();
  MlpParams params;
  for (int l = 0; l < spec.n_affine(); ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    Rng rng(derive_seed(seed, "mlp-layer-" + std::to_string(l)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    params.weights.push_back(std::move(w));
    params.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return params;
}

Eigen::VectorXd mlp_forward(const MlpParams& params, const MlpSpec& spec,
                            const Eigen::VectorXd& input, bool train_mode,
                            uint64_t dropout_seed, MlpTape* tape) {
  spec.validate();
  if (static_cast<int>(params.weights.size()) != spec.n_affine())
    throw ShapeMismatch("parameter layer count disagrees with spec");
  if (input.size() != spec.input_size())
    throw DimensionMismatch("MLP input has size " + std::to_string(input.size()) +
                            ", expected " + std::to_string(spec.input_size()));
  if (!input.allFinite()) throw NonFinite("non-finite MLP input");

  if (tape) {
    *tape = MlpTape{};
    tape->params_version = params.version;
  }
  Rng dropout_rng(derive_seed(dropout_seed, "dropout"));
  Eigen::VectorXd x = input;
  for (int l = 0; l < spec.n_affine(); ++l) {
    if (params.weights[l].rows() != spec.layer_sizes[l + 1] ||
        params.weights[l].cols() != spec.layer_sizes[l])
      throw ShapeMismatch("weight matrix shape mismatch at layer " + std::to_string(l));
    if (tape) tape->inputs.push_back(x);
    Eigen::VectorXd h = params.weights[l] * x + params.biases[l];
    const bool hidden = l + 1 < spec.n_affine();
    if (!hidden) {
      x = std::move(h);
      break;
    }
    if (spec.standardize) {
      const double mean = h.mean();
      const double var = (h.array() - mean).square().mean();
      const double inv_sigma = 1.0 / std::sqrt(var + kStandardizeEpsilon);
      h = (h.array() - mean).matrix() * inv_sigma;
      if (tape) {
        tape->standardized.push_back(h);
        tape->inv_sigma.push_back(inv_sigma);
      }
    } else if (tape) {
      tape->standardized.push_back(h);
      tape->inv_sigma.push_back(1.0);
    }
    h = h.cwiseMax(0.0);
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(h.size());
    if (train_mode && spec.dropout_rate > 0.0) {
      const double keep = 1.0 - spec.dropout_rate;
      for (Eigen::Index i = 0; i < h.size(); ++i)
        scale(i) = dropout_rng.uniform() < spec.dropout_rate ? 0.0 : 1.0 / keep;
      h = h.cwiseProduct(scale);
    }
    if (tape) tape->dropout_scale.push_back(std::move(scale));
    x = std::move(h);
  }
  return x;
}

MlpGrads mlp_backward(const MlpParams& params, const MlpSpec& spec, const MlpTape& tape,
                      const Eigen::VectorXd& d_output) {
  if (tape.params_version != params.version)
    throw StaleTape("parameters were updated after this tape was recorded");
  const int n_affine = spec.n_affine();
  if (static_cast<int>(tape.inputs.size()) != n_affine)
    throw ShapeMismatch("tape does not match the network layout");
  if (d_output.size() != spec.output_size())
    throw DimensionMismatch("upstream gradient size mismatch");

  MlpGrads grads;
  grads.d_weights.resize(n_affine);
  grads.d_biases.resize(n_affine);
  Eigen::VectorXd dy = d_output;
  for (int l = n_affine - 1; l >= 0; --l) {
    const bool hidden = l + 1 < n_affine;
    if (hidden) {
      // undo dropout, then ReLU, then the standardization
      dy = dy.cwiseProduct(tape.dropout_scale[l]);
      const Eigen::VectorXd& y = tape.standardized[l];
      dy = (y.array() > 0.0).select(dy, 0.0);
      if (spec.standardize) {
        const double mean_g = dy.mean();
        const double mean_gy = dy.cwiseProduct(y).mean();
        dy = tape.inv_sigma[l] * (dy.array() - mean_g - y.array() * mean_gy).matrix();
      }
    }
    grads.d_weights[l] = dy * tape.inputs[l].transpose();
    grads.d_biases[l] = dy;
    dy = params.weights[l].transpose() * dy;
  }
  grads.d_input = std::move(dy);
  return grads;
}

void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimState& state) {
  if (grads.size() != params.size())
    throw ShapeMismatch("gradient size " + std::to_string(grads.size()) +
                        " does not match parameter size " + std::to_string(params.size()));
  if (!grads.allFinite()) throw NonFinite("non-finite gradients reached the optimizer");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeMismatch("optimizer state does not match parameter size");

  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Eigen::ArrayXd m_hat = state.m.array() / bias1;
  const Eigen::ArrayXd v_hat = state.v.array() / bias2;
  params.array() -= state.lr * (m_hat / (v_hat.sqrt() + state.epsilon) +
                                state.weight_decay * params.array());
}

double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
  if (total_steps < 1) throw ConfigInvalid("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps)
    throw ConfigInvalid("warmup_steps must lie in [0, total_steps]");
  if (base_lr < 0.0) throw ConfigInvalid("base learning rate must be >= 0");
  if (step < 0) throw ConfigInvalid("step must be >= 0");
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / warmup_steps;
  const double span = static_cast<double>(total_steps - warmup_steps);
  if (span <= 0.0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * progress));
}

}  // namespace voltrack
