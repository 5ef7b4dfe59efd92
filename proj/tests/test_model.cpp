#include <gtest/gtest.h>

#include <numeric>

#include "fd_check.hpp"
#include "fewsel/fewsel.hpp"

using namespace fewsel;

namespace {

Matrix uniform_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform();
  return m;
}

Matrix permuted(const Matrix& x, Rng& rng) {
  std::vector<std::size_t> p(x.rows());
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return x.gather_rows(p);
}

}  // namespace

TEST(SetEncoder, PermutationInvariantBitwise) {
  Rng rng(2);
  const ModelConfig mc = ModelConfig::for_features(12, 4);
  const ModelParams p = init_params(mc, rng);
  const Matrix s = uniform_matrix(rng, 9, 12);
  const Matrix la = log_alpha(s, p, mc);
  const Matrix r = encode_r(s, p.encoder);
  for (int t = 0; t < 50; ++t) {
    const Matrix sp = permuted(s, rng);
    EXPECT_EQ(log_alpha(sp, p, mc), la);
    EXPECT_EQ(encode_r(sp, p.encoder), r);
  }
}

TEST(SetEncoder, SingleSlotMatchesBatch) {
  Rng rng(3);
  const ModelConfig mc = ModelConfig::for_features(7, 3);
  const ModelParams p = init_params(mc, rng);
  const Matrix s = uniform_matrix(rng, 4, 7);
  const Matrix all = log_alpha(s, p, mc);
  for (std::size_t k = 0; k < 3; ++k) {
    const Matrix row = encode_alpha(s, p.encoder, k);
    for (std::size_t m = 0; m < 7; ++m) EXPECT_EQ(row(0, m), all(k, m));
  }
  EXPECT_THROW(encode_alpha(s, p.encoder, 3), std::out_of_range);
}

TEST(SetEncoder, RejectsBadSupport) {
  Rng rng(1);
  const ModelConfig mc = ModelConfig::for_features(5, 2);
  const ModelParams p = init_params(mc, rng);
  EXPECT_THROW(log_alpha(Matrix(0, 5), p, mc), std::invalid_argument);
  EXPECT_THROW(log_alpha(Matrix(2, 4), p, mc), std::invalid_argument);
}

TEST(Model, ParameterShapesPerVariant) {
  Rng rng(0);
  ModelConfig mc = ModelConfig::for_features(10, 3);
  ModelParams full = init_params(mc, rng);
  EXPECT_EQ(full.encoder.pi.rows(), 3u);
  EXPECT_EQ(full.encoder.pi.cols(), 300u);
  EXPECT_EQ(full.encoder.phi1.out(), 64u);
  EXPECT_EQ(full.encoder.psi2.out(), 1u);
  EXPECT_EQ(full.dec1.in(), 4u);
  EXPECT_EQ(full.dec2.out(), 32u);
  EXPECT_TRUE(full.free_log_alpha.empty());

  mc.use_alpha_context = false;
  mc.use_r_context = false;
  ModelParams cae = init_params(mc, rng);
  EXPECT_TRUE(cae.encoder.phi1.empty());
  EXPECT_TRUE(cae.encoder.psi1.empty());
  EXPECT_EQ(cae.free_log_alpha.rows(), 3u);
  EXPECT_EQ(cae.dec1.in(), 3u);
  EXPECT_EQ(cae.named().size(), 7u);
}

TEST(Model, BudgetValidation) {
  EXPECT_THROW(ModelConfig::for_features(4, 5).validate(), std::invalid_argument);
  EXPECT_THROW(ModelConfig::for_features(4, 0).validate(), std::invalid_argument);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  for (bool alpha : {true, false})
    for (bool r : {true, false})
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto c = fdcheck::check_model(seed, fdcheck::tiny_model(alpha, r));
        EXPECT_LT(c.max_rel, 1e-6) << "alpha=" << alpha << " r=" << r << " worst=" << c.worst;
      }
}

TEST(Model, ReconstructSelectedUsesChosenColumns) {
  // A decoder that copies its input: one hidden unit per selected slot.
  ModelConfig mc;
  mc.features = 3;
  mc.budget = 2;
  mc.decoder_width = 2;
  mc.use_alpha_context = false;
  mc.use_r_context = false;
  mc.output = OutputActivation::none;
  Rng rng(0);
  ModelParams p = init_params(mc, rng);
  p.dec1.weight = Matrix::identity(2);
  p.dec1.bias = Matrix(1, 2);
  p.dec2.weight = Matrix::identity(2);
  p.dec2.bias = Matrix(1, 2);
  p.dec3.weight = Matrix{{1, 0, 0}, {0, 0, 1}};
  p.dec3.bias = Matrix(1, 3);
  const Matrix q{{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  SelectionResult sel;
  sel.indices = {2, 0};
  const Matrix out = reconstruct_selected(Matrix(1, 3), q, sel, p, mc);
  EXPECT_EQ(out, (Matrix{{0.3, 0.0, 0.1}, {0.6, 0.0, 0.4}}));
  sel.indices = {0};
  EXPECT_THROW(reconstruct_selected(Matrix(1, 3), q, sel, p, mc), std::invalid_argument);
  sel.indices = {0, 3};
  EXPECT_THROW(reconstruct_selected(Matrix(1, 3), q, sel, p, mc), std::out_of_range);
}

TEST(Model, SelectDeduplicates) {
  ModelConfig mc;
  mc.features = 5;
  mc.budget = 3;
  mc.use_alpha_context = false;
  mc.use_r_context = false;
  Rng rng(0);
  ModelParams p = init_params(mc, rng);
  p.free_log_alpha = Matrix{{0, 0, 0, 9, 0}, {0, 0, 0, 9, 0}, {1, 0, 0, 0, 0}};
  const SelectionResult r = select(Matrix(1, 5), p, mc);
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{3, 3, 0}));
  EXPECT_EQ(r.dedup, (std::vector<std::size_t>{0, 3}));
}

TEST(Model, LowTemperatureForwardMatchesHardSelection) {
  // With saturated logits and no noise the relaxed path equals the hard path.
  ModelConfig mc;
  mc.features = 4;
  mc.budget = 2;
  mc.encoder_width = 4;
  mc.pi_dim = 2;
  mc.decoder_width = 5;
  mc.use_alpha_context = false;
  Rng rng(7);
  ModelParams p = init_params(mc, rng);
  p.free_log_alpha = Matrix{{0, 40, 0, 0}, {0, 0, 0, 40}};
  const Matrix s = uniform_matrix(rng, 2, 4), q = uniform_matrix(rng, 5, 4);
  const Matrix relaxed = forward(s, q, 0.01, zero_gumbel(2, 4), p, mc).reconstruction;
  const Matrix hard = reconstruct_selected(s, q, select(s, p, mc), p, mc);
  for (std::size_t i = 0; i < hard.size(); ++i) EXPECT_NEAR(relaxed[i], hard[i], 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ModelConfig mc;
  mc.features = 2;
  mc.budget = 1;
  mc.decoder_width = 1;
  mc.use_alpha_context = false;
  mc.use_r_context = false;
  Rng rng(0);
  ModelParams p = init_params(mc, rng);
  const ModelParams before = p;
  std::vector<Matrix> grads;
  for (const auto& r : p.named()) {
    Matrix g(r.value->rows(), r.value->cols());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i % 2 == 0) ? 0.3 : -2.0;
    grads.push_back(g);
  }
  AdamState st;
  AdamConfig cfg;
  adam_step(p, grads, st, cfg);
  // Bias-corrected first step: m_hat = g, v_hat = g^2, so dw = -lr * g / (|g| + eps).
  auto a = p.named();
  auto b = before.named();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].value->size(); ++j) {
      const double g = grads[i][j];
      const double expect = (*b[i].value)[j] - cfg.lr * g / (std::abs(g) + cfg.epsilon);
      EXPECT_NEAR((*a[i].value)[j], expect, 1e-15);
    }
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  ModelConfig mc;
  mc.features = 3;
  mc.budget = 2;
  mc.decoder_width = 2;
  mc.use_alpha_context = false;
  mc.use_r_context = false;
  Rng rng(1);
  ModelParams p = init_params(mc, rng);
  // Minimise sum (w - 0.5)^2 over every parameter.
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.01;
  std::size_t steps = 0;
  double worst = 1.0;
  for (; steps < 5000 && worst > 1e-3; ++steps) {
    std::vector<Matrix> grads;
    worst = 0.0;
    for (const auto& r : p.named()) {
      Matrix g(r.value->rows(), r.value->cols());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = 2.0 * ((*r.value)[i] - 0.5);
        worst = std::max(worst, std::abs((*r.value)[i] - 0.5));
      }
      grads.push_back(g);
    }
    adam_step(p, grads, st, cfg);
  }
  EXPECT_LE(worst, 1e-3);
  EXPECT_LT(steps, 5000u);
}

TEST(Adam, RejectsNonFiniteGradients) {
  ModelConfig mc;
  mc.features = 2;
  mc.budget = 1;
  mc.use_alpha_context = false;
  mc.use_r_context = false;
  Rng rng(0);
  ModelParams p = init_params(mc, rng);
  std::vector<Matrix> grads;
  for (const auto& r : p.named()) grads.emplace_back(r.value->rows(), r.value->cols());
  grads[0][0] = NAN;
  AdamState st;
  EXPECT_THROW(adam_step(p, grads, st, AdamConfig{}), numeric_error);
  grads.pop_back();
  EXPECT_THROW(adam_step(p, grads, st, AdamConfig{}), std::invalid_argument);
}
