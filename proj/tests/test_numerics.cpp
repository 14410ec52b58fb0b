#include <gtest/gtest.h>

#include <cmath>

#include "seekr/error.hpp"
#include "seekr/ops.hpp"
#include "seekr/rng.hpp"
#include "seekr/tape.hpp"
#include "support/gradcheck.hpp"

using namespace seekr;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  const Tensor a = random_matrix(7, 5, rng);
  const Tensor b = random_matrix(5, 9, rng);
  Tape tape(false);
  const Tensor c = ops::matmul(tape.constant_ref(a), tape.constant_ref(b)).value();
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-13);
    }
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(ops::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3}))), ContractError);
}

TEST(Matmul, GradientsMatchClosedForm) {
  // d/dA sum(A B) = 1 Bᵀ, d/dB = Aᵀ 1.
  Rng rng(5);
  const Tensor a = random_matrix(3, 4, rng);
  const Tensor b = random_matrix(4, 2, rng);
  Tape tape;
  Var va = tape.parameter(a);
  Var vb = tape.parameter(b);
  tape.backward(ops::sum(ops::matmul(va, vb)));
  const Tensor ga = tape.grad(va);
  const Tensor gb = tape.grad(vb);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ga.at(i, k), b.at(k, 0) + b.at(k, 1), 1e-14);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(gb.at(k, j), a.at(0, k) + a.at(1, k) + a.at(2, k), 1e-14);
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedAreZero) {
  Rng rng(9);
  const Tensor logits = random_matrix(6, 6, rng);
  Tape tape(false);
  const Tensor p = ops::masked_softmax(tape.constant_ref(logits), Mask::causal(6)).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      if (j > i) EXPECT_EQ(p.at(i, j), 0.0);
      s += p.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(MaskedSoftmax, FullyMaskedRowThrows) {
  Tape tape;
  Mask m(2, 2, {true, true, false, false});
  EXPECT_THROW(ops::masked_softmax(tape.constant(Tensor({2, 2})), m), Error);
}

TEST(MaskedSoftmax, ExtremeLogitsStayFinite) {
  Tape tape(false);
  const Tensor p = ops::masked_softmax(tape.constant(Tensor::matrix({{1000.0, -1000.0}, {-1000.0, 1000.0}})),
                                       Mask::causal(2))
                       .value();
  EXPECT_TRUE(p.all_finite());
  EXPECT_EQ(p.at(0, 0), 1.0);
  EXPECT_NEAR(p.at(1, 1), 1.0, 1e-15);
}

TEST(Tape, BackwardBeforeForwardIsUsageError) {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(x), UsageError);
}

TEST(Tape, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.parameter(Tensor({2}));
  EXPECT_THROW(tape.backward(ops::scale(x, 2.0)), ContractError);
}

TEST(Tape, GradOfLossWrtItselfIsOne) {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(3.0));
  Var y = ops::scale(x, 1.0);
  tape.backward(y);
  EXPECT_EQ(tape.grad(y)[0], 1.0);
  EXPECT_EQ(tape.grad(x)[0], 1.0);
}

TEST(Tape, InferenceTapeRejectsBackward) {
  Tape tape(false);
  Var x = tape.constant(Tensor::scalar(3.0));
  EXPECT_THROW(tape.backward(ops::scale(x, 2.0)), UsageError);
}

TEST(GradientCheck, ParametersMatchCentralDifferences) {
  const check::GradFixture fx(11);
  const auto rep = check::check_parameter_gradients(fx);
  EXPECT_EQ(rep.checked, fx.student.parameter_count());
  EXPECT_LT(rep.max_error, 1e-4) << rep.worst;
}

TEST(GradientCheck, AttentionNodesMatchCentralDifferences) {
  const check::GradFixture fx(12);
  const auto rep = check::check_attention_gradients(fx);
  EXPECT_GT(rep.checked, 0u);
  EXPECT_LT(rep.max_error, 1e-4) << rep.worst;
}
