#include <gtest/gtest.h>

#include <cmath>

#include "fd_check.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/tape.hpp"

using namespace fewsel;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

// Scalar read-out used to turn a matrix-valued op into a loss: sum(W .* op).
double weighted_sum(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

// Gradient check of a unary op f applied to one input.
void check_unary(const std::function<Var(Var)>& f, Matrix x, std::uint64_t seed) {
  Rng rng(seed);
  Tape t0;
  const Matrix probe = f(t0.constant(x)).value();
  const Matrix w = random_matrix(rng, probe.rows(), probe.cols());
  Tape t;
  Var xv = t.leaf(x);
  Var loss = sum_all(mul(f(xv), t.constant(w)));
  t.backward(loss);
  const Matrix analytic = xv.grad();
  auto value = [&] {
    Tape tt;
    return weighted_sum(f(tt.constant(x)).value(), w);
  };
  const Matrix numeric = fdcheck::numeric_gradient(x, value, 1e-6);
  EXPECT_LT(fdcheck::relative_error(analytic, numeric), 1e-7);
}

}  // namespace

TEST(Matrix, ShapesAndAccess) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.shape(), "2x3");
  EXPECT_EQ(m.transposed()(2, 1), 6.0);
  const std::vector<std::size_t> cols{2, 0};
  const Matrix g = m.gather_cols(cols);
  EXPECT_EQ(g, (Matrix{{3, 1}, {6, 4}}));
}

TEST(Matrix, GemmVariantsAgree) {
  Rng rng(3);
  const Matrix a = random_matrix(rng, 4, 3), b = random_matrix(rng, 3, 5);
  Matrix ab(4, 5);
  linalg::gemm(a, b, ab);
  Matrix nt(4, 5);
  linalg::gemm_nt(a, b.transposed(), nt);
  Matrix tn(4, 5);
  linalg::gemm_tn(a.transposed(), b, tn);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    double direct = 0.0;
    const std::size_t r = i / 5, c = i % 5;
    for (std::size_t k = 0; k < 3; ++k) direct += a(r, k) * b(k, c);
    EXPECT_NEAR(ab[i], direct, 1e-14);
    EXPECT_NEAR(nt[i], direct, 1e-14);
    EXPECT_NEAR(tn[i], direct, 1e-14);
  }
}

TEST(Tape, MatmulHandExample) {
  Tape t;
  Var a = t.constant(Matrix{{1, 2}, {3, 4}});
  Var b = t.constant(Matrix{{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b).value(), (Matrix{{19, 22}, {43, 50}}));
}

TEST(Tape, ShapeMismatchNamesBothShapes) {
  Tape t;
  Var a = t.constant(Matrix(2, 3));
  Var b = t.constant(Matrix(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Tape, SoftmaxMatchesHighPrecisionValues) {
  // Reference values computed to 25 digits with mpmath.
  const Matrix s = softmax_rows(Matrix{{1, 2, 3}}, 1.0);
  EXPECT_NEAR(s[0], 0.0900305731703804579980221, 1e-15);
  EXPECT_NEAR(s[1], 0.2447284710547976524729596, 1e-15);
  EXPECT_NEAR(s[2], 0.6652409557748218895290183, 1e-15);
  const Matrix u = softmax_rows(Matrix{{0.3, -0.2, 0.1}}, 1.0);
  EXPECT_NEAR(u[0], 0.4123266855795783473635328, 1e-15);
  EXPECT_NEAR(u[1], 0.2500887766217052295563168, 1e-15);
  EXPECT_NEAR(u[2], 0.3375845377987164230801504, 1e-15);
}

TEST(Tape, SoftmaxIsShiftInvariantAndStable) {
  const Matrix a = softmax_rows(Matrix{{1000, 1001, 1002}}, 1.0);
  const Matrix b = softmax_rows(Matrix{{0, 1, 2}}, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_THROW(softmax_rows(Matrix{{1, 2}}, 0.0), std::invalid_argument);
}

TEST(Tape, ElementwiseGradients) {
  Rng rng(11);
  const Matrix x = random_matrix(rng, 3, 4);
  Matrix pos = random_matrix(rng, 3, 4, 0.2, 2.0);
  check_unary([](Var v) { return sigmoid(v); }, x, 1);
  check_unary([](Var v) { return fewsel::tanh(v); }, x, 2);
  check_unary([](Var v) { return fewsel::exp(v); }, x, 3);
  check_unary([](Var v) { return fewsel::log(v); }, pos, 4);
  check_unary([](Var v) { return relu(v); }, x, 5);  // kinks have probability zero
  check_unary([](Var v) { return scale(v, -2.5); }, x, 6);
  check_unary([](Var v) { return transpose(v); }, x, 7);
  check_unary([](Var v) { return sum_rows(v); }, x, 8);
  check_unary([](Var v) { return repeat_rows(sum_rows(v), 3); }, x, 9);
  check_unary([](Var v) { return slice_cols(v, 1, 2); }, x, 10);
  check_unary([](Var v) { return softmax_rows(v, 0.37); }, x, 12);
  check_unary([](Var v) { return mul(v, v); }, x, 13);
}

TEST(Tape, BinaryGradients) {
  Rng rng(21);
  const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2);
  const Matrix c = random_matrix(rng, 3, 4), row = random_matrix(rng, 1, 4);
  const Matrix d = random_matrix(rng, 3, 2);
  check_unary([&](Var v) { return matmul(v, v.tape->constant(b)); }, a, 1);
  check_unary([&](Var v) { return matmul(v.tape->constant(a), v); }, b, 2);
  check_unary([&](Var v) { return add(v, v.tape->constant(c)); }, a, 3);
  check_unary([&](Var v) { return add(v.tape->constant(c), v); }, row, 4);  // broadcast row
  check_unary([&](Var v) { return sub(v.tape->constant(c), v); }, a, 5);
  check_unary([&](Var v) { return concat_cols(v, v.tape->constant(d)); }, a, 6);
  check_unary([&](Var v) { return concat_cols(v.tape->constant(a), v); }, d, 7);
  check_unary([&](Var v) { return mean_squared_error(v.tape->constant(c), v); }, a, 8);
}

TEST(Tape, MseHandValue) {
  Tape t;
  Var x = t.constant(Matrix{{1, 2}});
  Var y = t.constant(Matrix{{0, 0}});
  EXPECT_DOUBLE_EQ(mean_squared_error(x, y).value()[0], 5.0);
}

TEST(Tape, GradientsAccumulateThroughReuse) {
  // d/dx sum(x*x + x) = 2x + 1
  Tape t;
  Var x = t.leaf(Matrix{{1.5, -2.0}});
  t.backward(sum_all(add(mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
}

TEST(Tape, BackwardNeedsScalarRoot) {
  Tape t;
  Var x = t.leaf(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Tape, SumRowsIsOrderIndependentBitwise) {
  Rng rng(5);
  Matrix x = random_matrix(rng, 7, 3, -1e3, 1e3);
  Tape t;
  const Matrix ref = sum_rows(t.constant(x)).value();
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tape u;
    EXPECT_EQ(sum_rows(u.constant(x.gather_rows(perm))).value(), ref);
  }
}

TEST(Tape, LogOfZeroIsANumericError) {
  Tape t;
  EXPECT_THROW(fewsel::log(t.constant(Matrix{{0.0}})), std::domain_error);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a = Rng::stream(7, 1), b = Rng::stream(7, 1), c = Rng::stream(7, 2);
  const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    auto s = rng.sample_without_replacement(10, 6);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(std::unique(s.begin(), s.end()), s.end());
    EXPECT_LT(s.back(), 10u);
  }
}
