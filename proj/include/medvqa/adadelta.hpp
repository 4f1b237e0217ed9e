#pragma once

#include <span>
#include <string>
#include <vector>

#include "medvqa/tensor.hpp"

namespace medvqa::trainer {

struct AdaDeltaOptions {
  double rho = 0.95;
  double eps = 1e-6;
  // Scales the applied update only; the running averages see the raw step.
  double lr = 1.0;

  void validate() const;  // ConfigError unless 0 <= rho < 1, eps > 0, lr > 0
};

struct AdaDeltaState {
  std::vector<double> mean_sq_grad;   // E[g^2]
  std::vector<double> mean_sq_delta;  // E[dx^2]

  explicit AdaDeltaState(std::size_t n = 0) : mean_sq_grad(n, 0.0), mean_sq_delta(n, 0.0) {}
};

/// One elementwise AdaDelta update:
///   E[g²]  <- rho E[g²] + (1-rho) g²
///   dx     <- -sqrt(E[dx²] + eps) / sqrt(E[g²] + eps) * g
///   E[dx²] <- rho E[dx²] + (1-rho) dx²
///   x      <- x + lr * dx
/// ShapeError when sizes disagree; NumericError naming `name` when a
/// gradient is not finite (nothing is modified in that case).
void adadelta_step(std::span<double> params, std::span<const double> grads, AdaDeltaState& state,
                   const AdaDeltaOptions& options, const std::string& name = "tensor");

/// Optimizer over a fixed list of parameter tensors.
class AdaDelta {
 public:
  AdaDelta(std::vector<ParamRef> params, AdaDeltaOptions options);

  /// `grads[i]` pairs with the i-th parameter given at construction.
  void step(const std::vector<ParamRef>& grads);

  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  std::vector<AdaDeltaState> states_;
  AdaDeltaOptions options_;
};

}  // namespace medvqa::trainer
