#include "medvqa/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <string>

#include "medvqa/errors.hpp"

namespace medvqa::encoders {

namespace {

struct Normalized {
  RowMatrix unit;
  Vector norms;
};

Normalized normalize_rows(const RowMatrix& m, const char* which) {
  Normalized out{m, Vector(m.rows())};
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DomainError(std::string(which) + " embedding row " + std::to_string(r) +
                        " has zero or non-finite norm");
    }
    out.norms[r] = n;
    out.unit.row(r) /= n;
  }
  return out;
}

// d/dx of x/|x| applied to an upstream gradient, row by row
RowMatrix unnormalize_grad(const Normalized& n, const RowMatrix& d_unit) {
  RowMatrix out(d_unit.rows(), d_unit.cols());
  for (Eigen::Index r = 0; r < d_unit.rows(); ++r) {
    const auto u = n.unit.row(r);
    const auto g = d_unit.row(r);
    out.row(r) = (g - u * u.dot(g)) / n.norms[r];
  }
  return out;
}

}  // namespace

ContrastiveResult contrastive_loss(const RowMatrix& image_embs, const RowMatrix& text_embs,
                                   double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be positive");
  }
  if (image_embs.rows() != text_embs.rows() || image_embs.cols() != text_embs.cols()) {
    throw DomainError("image and text batches differ in shape");
  }
  const auto n = image_embs.rows();
  if (n < 2) throw DomainError("contrastive loss needs a batch of at least 2 pairs");

  const auto img = normalize_rows(image_embs, "image");
  const auto txt = normalize_rows(text_embs, "text");
  // Explicit loops keep the summation order independent of argument order,
  // which makes swapping the modalities bit-exact.
  RowMatrix logits(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double dot = 0.0;
      for (Eigen::Index k = 0; k < img.unit.cols(); ++k) dot += img.unit(i, k) * txt.unit(j, k);
      logits(i, j) = dot / temperature;
    }
  }

  // softmax over rows (image -> text) and over columns (text -> image)
  RowMatrix p_row(n, n), p_col(n, n);
  double row_ce = 0.0, col_ce = 0.0;
  std::vector<double> line(static_cast<std::size_t>(n));
  const auto cross_entropy = [&](std::size_t target, auto&& write_prob) {
    const double m = *std::max_element(line.begin(), line.end());
    double s = 0.0;
    for (double v : line) s += std::exp(v - m);
    for (std::size_t k = 0; k < line.size(); ++k) write_prob(k, std::exp(line[k] - m) / s);
    return m + std::log(s) - line[target];
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = static_cast<std::size_t>(i);
    for (Eigen::Index k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = logits(i, k);
    row_ce += cross_entropy(t, [&](std::size_t k, double p) { p_row(i, static_cast<Eigen::Index>(k)) = p; });
    for (Eigen::Index k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = logits(k, i);
    col_ce += cross_entropy(t, [&](std::size_t k, double p) { p_col(static_cast<Eigen::Index>(k), i) = p; });
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  ContrastiveResult out;
  out.loss = 0.5 * inv_n * (row_ce + col_ce);

  const RowMatrix eye = RowMatrix::Identity(n, n);
  const RowMatrix d_logits = 0.5 * inv_n * ((p_row - eye) + (p_col - eye));
  const RowMatrix d_img_unit = d_logits * txt.unit / temperature;
  const RowMatrix d_txt_unit = d_logits.transpose() * img.unit / temperature;
  out.d_image = unnormalize_grad(img, d_img_unit);
  out.d_text = unnormalize_grad(txt, d_txt_unit);
  return out;
}

}  // namespace medvqa::encoders
