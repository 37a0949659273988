#include "hyperbert/optim.hpp"

#include <cmath>

namespace hyperbert {

void AdamOptions::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("adam: weight decay must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options) {
  options.validate();
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                         " slots for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      throw DimensionError("adam_step: state shape mismatch for parameter " + std::to_string(i));
    }
    Matrix& value = p.mutable_value();
    if (p.has_grad()) {
      const Matrix& g = p.node()->grad;
      m = options.beta1 * m + (1.0 - options.beta1) * g;
      v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseProduct(g);
    } else {
      m *= options.beta1;
      v *= options.beta2;
    }
    const auto update = (m.array() / correction1) /
                        ((v.array() / correction2).sqrt() + options.eps);
    value.array() -= options.lr * (update + options.weight_decay * value.array());
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  options_.validate();
}

void Adam::step() { adam_step(params_, state_, options_); }

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hyperbert
