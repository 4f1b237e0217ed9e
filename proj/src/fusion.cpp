#include "medvqa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "medvqa/errors.hpp"

namespace medvqa::fusion {

FusedVector fuse(const Vector& image, const Vector& text, FusionKind kind) {
  if (image.size() != text.size()) {
    throw ShapeError("cannot fuse embeddings of length " + std::to_string(image.size()) + " and " +
                     std::to_string(text.size()));
  }
  FusedVector out;
  out.kind = kind;
  if (kind == FusionKind::Product) {
    out.values = image.cwiseProduct(text);
  } else {
    out.values.resize(image.size() + text.size());
    out.values << image, text;
  }
  return out;
}

std::pair<Vector, Vector> fuse_backward(const Vector& image, const Vector& text, FusionKind kind,
                                        const Vector& d_fused) {
  if (kind == FusionKind::Product) return {d_fused.cwiseProduct(text), d_fused.cwiseProduct(image)};
  return {d_fused.head(image.size()), d_fused.tail(text.size())};
}

Head::Head(std::size_t in_dim, std::size_t hidden, std::size_t classes)
    : in_dim_(in_dim), hidden_(hidden), classes_(classes) {
  if (hidden_ > 0) {
    hidden_w_ = Tensor({hidden_, in_dim_});
    hidden_b_ = Tensor({hidden_});
    out_w_ = Tensor({classes_, hidden_});
  } else {
    out_w_ = Tensor({classes_, in_dim_});
  }
  out_b_ = Tensor({classes_});
}

void Head::init(Engine& engine) {
  if (hidden_ > 0) {
    encoders::init_uniform(hidden_w_, in_dim_, engine);
    encoders::init_uniform(hidden_b_, in_dim_, engine);
  }
  const auto fan_in = out_w_.shape[1];
  encoders::init_uniform(out_w_, fan_in, engine);
  encoders::init_uniform(out_b_, fan_in, engine);
}

std::vector<ParamRef> Head::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  if (hidden_ > 0) {
    out.push_back({prefix + "hidden.weight", &hidden_w_});
    out.push_back({prefix + "hidden.bias", &hidden_b_});
  }
  out.push_back({prefix + "out.weight", &out_w_});
  out.push_back({prefix + "out.bias", &out_b_});
  return out;
}

Vector Head::logits(const Vector& fused, Cache* cache) const {
  if (static_cast<std::size_t>(fused.size()) != in_dim_) {
    throw ShapeError("classifier expects " + std::to_string(in_dim_) + " inputs, got " +
                     std::to_string(fused.size()));
  }
  if (cache) cache->input = fused;
  if (hidden_ == 0) return as_matrix(out_w_) * fused + as_vector(out_b_);
  Vector h = (as_matrix(hidden_w_) * fused + as_vector(hidden_b_)).array().tanh();
  Vector out = as_matrix(out_w_) * h + as_vector(out_b_);
  if (cache) cache->hidden = std::move(h);
  return out;
}

Vector Head::backward(const Cache& cache, const Vector& d_logits, Head& grads) const {
  as_vector(grads.out_b_) += d_logits;
  if (hidden_ == 0) {
    as_matrix(grads.out_w_).noalias() += d_logits * cache.input.transpose();
    return as_matrix(out_w_).transpose() * d_logits;
  }
  as_matrix(grads.out_w_).noalias() += d_logits * cache.hidden.transpose();
  const Vector d_pre = ((as_matrix(out_w_).transpose() * d_logits).array() *
                        (1.0 - cache.hidden.array().square()))
                           .matrix();
  as_matrix(grads.hidden_w_).noalias() += d_pre * cache.input.transpose();
  as_vector(grads.hidden_b_) += d_pre;
  return as_matrix(hidden_w_).transpose() * d_pre;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

Vector classify(const FusedVector& fused, const Head& head, const corpus::AnswerVocabulary& vocab) {
  if (head.classes() != vocab.size()) {
    throw ShapeError("classifier has " + std::to_string(head.classes()) +
                     " outputs but the vocabulary has " + std::to_string(vocab.size()) + " answers");
  }
  return softmax(head.logits(fused.values));
}

LossResult nll_loss(const Vector& probabilities, std::size_t target) {
  if (target >= static_cast<std::size_t>(probabilities.size())) {
    throw DomainError("target index " + std::to_string(target) + " out of range");
  }
  const auto t = static_cast<Eigen::Index>(target);
  LossResult r;
  r.loss = -std::log(probabilities[t]);
  r.d_logits = probabilities;
  r.d_logits[t] -= 1.0;
  return r;
}

Prediction top_k(const Vector& probabilities, const corpus::AnswerVocabulary& vocab, std::size_t k) {
  const auto n = static_cast<std::size_t>(probabilities.size());
  if (n == 0) throw DomainError("empty probability vector");
  if (n != vocab.size()) throw ShapeError("probability vector and vocabulary differ in size");
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[static_cast<Eigen::Index>(a)] > probabilities[static_cast<Eigen::Index>(b)];
  });
  Prediction p;
  for (std::size_t i = 0; i < k; ++i) {
    const auto idx = order[i];
    p.top_k.emplace_back(vocab.answer(idx), probabilities[static_cast<Eigen::Index>(idx)]);
  }
  p.answer = p.top_k.front().first;
  p.confidence = p.top_k.front().second;
  return p;
}

}  // namespace medvqa::fusion
