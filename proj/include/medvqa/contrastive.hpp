#pragma once

#include "medvqa/tensor.hpp"

namespace medvqa::encoders {

struct ContrastiveResult {
  double loss = 0.0;
  RowMatrix d_image;  // dL/d(image_embs), same shape as the input
  RowMatrix d_text;
};

/// Symmetric InfoNCE over a batch of N aligned rows.
///
/// Rows are L2-normalized, S = U_img * U_txtᵀ / temperature, and the loss is
/// the mean of the row-wise and column-wise cross-entropies with the diagonal
/// as targets. Gradients are taken w.r.t. the unnormalized inputs.
/// DomainError for temperature <= 0, a zero row or mismatched shapes;
/// DomainError also for N < 2 (a degenerate batch has no negatives).
ContrastiveResult contrastive_loss(const RowMatrix& image_embs, const RowMatrix& text_embs,
                                   double temperature);

}  // namespace medvqa::encoders
