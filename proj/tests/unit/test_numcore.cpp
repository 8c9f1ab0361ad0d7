#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tcnet/grad_check.hpp"

namespace tcnet {
namespace {

using testing::random_matrix;
using testing::raises;

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

TEST(Matrix, ProductsMatchTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng() % 7, k = 1 + rng() % 9, n = 1 + rng() % 5;
    Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    expect_near(matmul(a, b), naive_matmul(a, b), 1e-12);
    expect_near(matmul_nt(a, transpose(b)), naive_matmul(a, b), 1e-12);
    expect_near(matmul_tn(transpose(a), b), naive_matmul(a, b), 1e-12);
  }
}

TEST(Matrix, ProductShapeMismatchRaises) {
  EXPECT_TRUE(raises(ErrorKind::DimensionMismatch, [] { matmul(Matrix(2, 3), Matrix(2, 3)); }));
  EXPECT_TRUE(raises(ErrorKind::DimensionMismatch, [] { Matrix(2, 2, std::vector<double>{1, 2, 3}); }));
  EXPECT_TRUE(raises(ErrorKind::DimensionMismatch, [] { Matrix(2, 3).reshaped(4, 2); }));
}

TEST(Matrix, EmptyInnerDimensionGivesZeros) {
  Matrix c = matmul(Matrix(3, 0), Matrix(0, 2));
  EXPECT_EQ(c, Matrix(3, 2));
}

TEST(Matrix, SoftmaxRowsAreStochasticAndShiftInvariant) {
  std::mt19937_64 rng(2);
  Matrix x = random_matrix(6, 5, rng, 30.0);
  Matrix s = softmax_rows(x);
  Matrix shifted = x;
  for (std::size_t c = 0; c < 5; ++c) shifted(2, c) += 1000.0;
  Matrix s2 = softmax_rows(shifted);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (double v : s.row(r)) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(s(2, c), s2(2, c), 1e-12);
}

TEST(Matrix, SoftmaxMatchesDirectFormula) {
  Matrix x{{0.0, std::log(2.0), std::log(5.0)}};
  Matrix s = softmax_rows(x);
  EXPECT_NEAR(s(0, 0), 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(s(0, 1), 2.0 / 8.0, 1e-15);
  EXPECT_NEAR(s(0, 2), 5.0 / 8.0, 1e-15);
}

TEST(Matrix, LayerNormHasZeroMeanUnitVariance) {
  std::vector<double> x{1.0, 2.0, 4.0, 9.0}, g(4, 1.0), b(4, 0.0);
  auto y = layer_norm(x, g, b, 0.0);
  double mean = 0.0, var = 0.0;
  for (double v : y) mean += v / 4.0;
  for (double v : y) var += (v - mean) * (v - mean) / 4.0;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-12);
  EXPECT_TRUE(raises(ErrorKind::DimensionMismatch, [&] { layer_norm(x, std::vector<double>(3), b); }));
}

TEST(Tape, BackwardRequiresScalarRoot) {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(2, 2, 1.0));
  EXPECT_TRUE(raises(ErrorKind::DimensionMismatch, [&] { t.backward(x); }));
}

TEST(Tape, OperandsFromAnotherTapeRaise) {
  ad::Tape a, b;
  ad::Var x = a.leaf(Matrix(1, 1, 1.0));
  ad::Var y = b.leaf(Matrix(1, 1, 1.0));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { ad::add(x, y); }));
}

TEST(Tape, UnusedLeafHasZeroGradient) {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(1, 3, 2.0));
  ad::Var unused = t.leaf(Matrix(2, 2, 5.0));
  ad::Var loss = ad::sum_squares(x);
  t.backward(loss);
  EXPECT_EQ(unused.grad(), Matrix(2, 2));
  EXPECT_EQ(x.grad(), Matrix(1, 3, 4.0));
}

TEST(Tape, ReusedOperandAccumulates) {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix{{3.0}});
  ad::Var y = ad::add(ad::scale(x, 2.0), ad::matmul(x, x));  // 2x + x^2
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 2.0 * 3.0);
}

TEST(Tape, ConstantsReceiveNoGradientPath) {
  ad::Tape t;
  ad::Var c = t.constant(Matrix(1, 2, 1.0));
  ad::Var s = ad::sum_squares(c);
  EXPECT_FALSE(t.requires_grad(s.id()));
}

// Builds a loss from named parameter leaves and checks tape vs central differences.
void check(const ParamStore& params, const LossFn& fn, double tol = 1e-6) {
  auto report = grad_check(fn, params, GradCheckOptions{1e-6, tol, 1e-6});
  EXPECT_TRUE(report.passed) << "max rel error " << report.max_rel_error;
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  ParamStore p;
  void add(const char* name, std::size_t r, std::size_t c) { p.add(name, random_matrix(r, c, rng)); }
};

TEST_F(OpGradients, MatmulTransposeAddSub) {
  add("a", 3, 4);
  add("b", 4, 2);
  add("c", 2, 3);
  check(p, [](ad::Tape&, const BoundParams& b) {
    ad::Var ab = ad::matmul(b["a"], b["b"]);
    ad::Var x = ad::sub(ad::add(ab, ad::transpose(b["c"])), ad::scale(ab, 0.3));
    return ad::sum_squares(x);
  });
}

TEST_F(OpGradients, AddRowReluSigmoid) {
  add("x", 5, 3);
  add("bias", 1, 3);
  check(p, [](ad::Tape&, const BoundParams& b) {
    ad::Var h = ad::relu(ad::add_row(b["x"], b["bias"]));
    return ad::mean_all(ad::sigmoid(ad::add(h, b["x"])));
  });
}

TEST_F(OpGradients, SoftmaxRows) {
  add("x", 4, 5);
  add("w", 4, 5);
  check(p, [](ad::Tape& t, const BoundParams& b) {
    ad::Var s = ad::softmax_rows(b["x"]);
    ad::Var w = b["w"];
    (void)t;
    return ad::sum_squares(ad::sub(s, ad::scale(w, 0.1)));
  });
}

TEST_F(OpGradients, LayerNorm) {
  add("x", 3, 6);
  add("gain", 1, 6);
  add("bias", 1, 6);
  add("w", 6, 1);
  check(p, [](ad::Tape&, const BoundParams& b) {
    ad::Var y = ad::layer_norm_rows(b["x"], b["gain"], b["bias"]);
    return ad::sum_squares(ad::matmul(y, b["w"]));
  });
}

TEST_F(OpGradients, BlockProductsConcatReshapeColSum) {
  add("q", 6, 2);
  add("k", 6, 2);
  add("v", 6, 3);
  check(p, [](ad::Tape&, const BoundParams& b) {
    ad::Var scores = ad::block_matmul_nt(b["q"], b["k"], 3);  // 6 x 3
    ad::Var att = ad::softmax_rows(scores);
    ad::Var out = ad::block_matmul(att, b["v"], 3);  // 6 x 3
    ad::Var cat = ad::concat_cols({out, b["q"]});
    ad::Var r = ad::reshape(cat, 2, 15);
    return ad::sum_squares(ad::col_sum(r));
  });
}

TEST(TapeOps, BlockProductsMatchPerBlockProducts) {
  std::mt19937_64 rng(3);
  Matrix q = random_matrix(6, 2, rng), k = random_matrix(6, 2, rng), v = random_matrix(6, 4, rng);
  ad::Tape t;
  Matrix s = ad::block_matmul_nt(t.constant(q), t.constant(k), 3).value();
  Matrix a = Matrix(6, 3, 0.5);
  Matrix o = ad::block_matmul(t.constant(a), t.constant(v), 3).value();
  for (std::size_t blk = 0; blk < 2; ++blk)
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double ref = 0.0;
        for (std::size_t c = 0; c < 2; ++c) ref += q(blk * 3 + i, c) * k(blk * 3 + j, c);
        EXPECT_NEAR(s(blk * 3 + i, j), ref, 1e-12);
      }
      for (std::size_t c = 0; c < 4; ++c) {
        double ref = 0.0;
        for (std::size_t j = 0; j < 3; ++j) ref += 0.5 * v(blk * 3 + j, c);
        EXPECT_NEAR(o(blk * 3 + i, c), ref, 1e-12);
      }
    }
}

TEST(GradCheck, EpsilonOutsideRangeRaises) {
  ParamStore p;
  p.add("x", Matrix(1, 1, 1.0));
  LossFn fn = [](ad::Tape&, const BoundParams& b) { return ad::sum_squares(b["x"]); };
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { numeric_gradient(fn, p, 1e-2); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { numeric_gradient(fn, p, 1e-9); }));
}

TEST(GradCheck, NonFiniteLossRaises) {
  ParamStore p;
  p.add("x", Matrix(1, 1, 0.0));
  LossFn fn = [](ad::Tape&, const BoundParams& b) { return ad::scale(b["x"], std::nan("")); };
  EXPECT_TRUE(raises(ErrorKind::NonFiniteLoss, [&] { grad_check(fn, p); }));
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamStore p;
  p.add("x", Matrix(1, 2, 1.5));
  // Forward computes x*x but backward claims d/dx = 1.
  LossFn fn = [](ad::Tape& t, const BoundParams& b) {
    ad::Var x = b["x"];
    Matrix v(1, 1, x.value()[0] * x.value()[0] + x.value()[1] * x.value()[1]);
    return t.record(v, {x}, [](const Matrix& g, const Matrix&, std::span<const Matrix* const>,
                               std::span<Matrix* const> dg) {
      if (dg[0]) {
        (*dg[0])[0] += g[0];
        (*dg[0])[1] += g[0];
      }
    });
  };
  auto report = grad_check(fn, p);
  EXPECT_FALSE(report.passed);
  ASSERT_EQ(report.failing().size(), 1u);
  EXPECT_EQ(report.failing()[0], "x");
}

TEST(Params, DuplicateAndUnknownNamesRaise) {
  ParamStore p;
  p.add("w", Matrix(1, 1));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { p.add("w", Matrix(1, 1)); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { p.at("nope"); }));
}

TEST(Params, GlorotBounds) {
  std::mt19937_64 rng(5);
  Matrix w = glorot_uniform(10, 6, rng);
  const double limit = std::sqrt(6.0 / 16.0);
  EXPECT_LE(max_abs(w), limit);
  EXPECT_GT(max_abs(w), 0.0);
}

}  // namespace
}  // namespace tcnet
