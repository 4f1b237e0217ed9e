#include <cmath>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "medvqa/contrastive.hpp"
#include "medvqa/errors.hpp"

using namespace medvqa;
using encoders::contrastive_loss;

namespace {

RowMatrix random_matrix(Eigen::Index n, Eigen::Index d, Engine& engine) {
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(engine, -1.0, 1.0);
  return m;
}

}  // namespace

TEST(Contrastive, IdenticalEmbeddingsGiveLogN) {
  Engine engine(1);
  for (Eigen::Index n : {2, 3, 5, 8, 17}) {
    const RowMatrix row = random_matrix(1, 6, engine);
    RowMatrix all = row.replicate(n, 1);
    for (double t : {0.07, 0.5, 1.0}) {
      EXPECT_NEAR(contrastive_loss(all, all, t).loss, std::log(static_cast<double>(n)), 1e-9) << n;
    }
  }
}

TEST(Contrastive, OrthonormalPairClosedForm) {
  const RowMatrix e = RowMatrix::Identity(2, 2);
  // Each row: -log(e / (e + 1)) = log(1 + e^-1).
  EXPECT_NEAR(contrastive_loss(e, e, 1.0).loss, std::log1p(std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(contrastive_loss(e, e, 1.0).loss, 0.3133, 1e-4);
}

TEST(Contrastive, ModalitySwapIsExact) {
  Engine engine(2);
  for (int i = 0; i < 200; ++i) {
    const auto n = static_cast<Eigen::Index>(2 + uniform_index(engine, 7));
    const auto a = random_matrix(n, 5, engine);
    const auto b = random_matrix(n, 5, engine);
    const double t = uniform_real(engine, 0.05, 1.0);
    EXPECT_EQ(contrastive_loss(a, b, t).loss, contrastive_loss(b, a, t).loss);
  }
}

TEST(Contrastive, NonNegative) {
  Engine engine(3);
  for (int i = 0; i < 500; ++i) {
    const auto n = static_cast<Eigen::Index>(2 + uniform_index(engine, 7));
    const auto a = random_matrix(n, 4, engine);
    const auto b = random_matrix(n, 4, engine);
    EXPECT_GE(contrastive_loss(a, b, uniform_real(engine, 0.01, 2.0)).loss, 0.0);
  }
}

TEST(Contrastive, ScaleInvariantRows) {
  Engine engine(4);
  const auto a = random_matrix(4, 3, engine);
  const auto b = random_matrix(4, 3, engine);
  EXPECT_NEAR(contrastive_loss(a, b, 0.2).loss, contrastive_loss(3.0 * a, b, 0.2).loss, 1e-12);
}

TEST(Contrastive, DomainErrors) {
  Engine engine(5);
  const auto a = random_matrix(3, 4, engine);
  EXPECT_THROW(contrastive_loss(a, a, 0.0), DomainError);
  EXPECT_THROW(contrastive_loss(a, a, -1.0), DomainError);
  EXPECT_THROW(contrastive_loss(a.topRows(1), a.topRows(1), 1.0), DomainError);
  EXPECT_THROW(contrastive_loss(a, random_matrix(2, 4, engine), 1.0), DomainError);
  RowMatrix zero_row = a;
  zero_row.row(1).setZero();
  EXPECT_THROW(contrastive_loss(zero_row, a, 1.0), DomainError);
}

TEST(Contrastive, GradientsMatchFiniteDifferences) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto r = fixtures::contrastive_gradcheck(i);
    EXPECT_LE(r.max_error, 1e-4) << "instance " << i << " " << r.worst;
  }
}
