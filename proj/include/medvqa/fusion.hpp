#pragma once

#include <string>
#include <utility>
#include <vector>

#include "medvqa/corpus.hpp"
#include "medvqa/encoders.hpp"
#include "medvqa/tensor.hpp"

namespace medvqa::fusion {

using encoders::FusionKind;

struct FusedVector {
  Vector values;
  FusionKind kind = FusionKind::Product;
};

/// Product: Hadamard product. Concat: image values, then text values.
/// ShapeError when the two embeddings differ in length.
FusedVector fuse(const Vector& image, const Vector& text, FusionKind kind);

/// Gradients of fuse w.r.t. its two inputs.
std::pair<Vector, Vector> fuse_backward(const Vector& image, const Vector& text, FusionKind kind,
                                        const Vector& d_fused);

/// Answer classifier: logits = W f + b, or with `hidden > 0`
/// logits = W2 tanh(W1 f + b1) + b2.
class Head {
 public:
  struct Cache {
    Vector input;
    Vector hidden;  // tanh activations, empty without a hidden layer
  };

  Head() = default;
  Head(std::size_t in_dim, std::size_t hidden, std::size_t classes);

  void init(Engine& engine);
  std::vector<ParamRef> params(const std::string& prefix);

  /// ShapeError when `fused` does not have in_dim entries.
  Vector logits(const Vector& fused, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads`; returns dL/d(fused).
  Vector backward(const Cache& cache, const Vector& d_logits, Head& grads) const;

  std::size_t in_dim() const { return in_dim_; }
  std::size_t classes() const { return classes_; }
  Tensor& out_weight() { return out_w_; }
  Tensor& out_bias() { return out_b_; }

 private:
  std::size_t in_dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t classes_ = 0;
  Tensor hidden_w_, hidden_b_;
  Tensor out_w_, out_b_;
};

/// Max-subtracted softmax.
Vector softmax(const Vector& logits);

/// Probability vector over the answer vocabulary. ShapeError when the head's
/// class count differs from the vocabulary size or the input length differs
/// from the head's input dimension.
Vector classify(const FusedVector& fused, const Head& head, const corpus::AnswerVocabulary& vocab);

struct LossResult {
  double loss = 0.0;
  Vector d_logits;  // p - onehot(target)
};

/// Negative log-likelihood of the target class. DomainError for an index out
/// of range.
LossResult nll_loss(const Vector& probabilities, std::size_t target);

struct Prediction {
  std::string answer;
  double confidence = 0.0;
  std::vector<std::pair<std::string, double>> top_k;
};

/// Top-k by probability, lower class index first on ties. k is clamped to
/// [1, |vocab|].
Prediction top_k(const Vector& probabilities, const corpus::AnswerVocabulary& vocab, std::size_t k);

}  // namespace medvqa::fusion
