#include "medvqa/adadelta.hpp"

#include <cmath>

#include "medvqa/errors.hpp"

namespace medvqa::trainer {

void AdaDeltaOptions::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("AdaDelta rho must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("AdaDelta eps must be > 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("AdaDelta lr multiplier must be > 0");
}

void adadelta_step(std::span<double> params, std::span<const double> grads, AdaDeltaState& state,
                   const AdaDeltaOptions& options, const std::string& name) {
  const auto n = params.size();
  if (grads.size() != n || state.mean_sq_grad.size() != n || state.mean_sq_delta.size() != n) {
    throw ShapeError("AdaDelta: size mismatch for '" + name + "'");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient in '" + name + "' at element " + std::to_string(i));
    }
  }
  const double rho = options.rho;
  const double eps = options.eps;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    auto& eg2 = state.mean_sq_grad[i];
    auto& edx2 = state.mean_sq_delta[i];
    eg2 = rho * eg2 + (1.0 - rho) * g * g;
    const double dx = -(std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps)) * g;
    edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    params[i] += options.lr * dx;
  }
}

AdaDelta::AdaDelta(std::vector<ParamRef> params, AdaDeltaOptions options)
    : params_(std::move(params)), options_(options) {
  options_.validate();
  states_.reserve(params_.size());
  for (const auto& p : params_) states_.emplace_back(p.tensor->size());
}

void AdaDelta::step(const std::vector<ParamRef>& grads) {
  if (grads.size() != params_.size()) throw ShapeError("AdaDelta: gradient list size mismatch");
  // validate everything first so a bad tensor leaves the model untouched
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (double g : grads[i].tensor->data) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in '" + params_[i].name + "'");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adadelta_step(params_[i].tensor->data, grads[i].tensor->data, states_[i], options_, params_[i].name);
  }
}

}  // namespace medvqa::trainer
