#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cxrclip/errors.hpp"
#include "cxrclip/losses.hpp"
#include "support.hpp"

using namespace cxrclip;
using testing::LossKind;

namespace {

Matrix eye2() {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  return m;
}

EmbeddingBatch text(Matrix m) { return EmbeddingBatch(std::move(m), Modality::text); }
EmbeddingBatch image(Matrix m) { return EmbeddingBatch(std::move(m), Modality::image); }

}  // namespace

TEST_CASE("l2_normalize") {
  Matrix a(1, 2);
  a(0, 0) = 3.0;
  a(0, 1) = 4.0;
  const auto na = l2_normalize(a, Modality::image);
  CHECK(na.rows()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(na.rows()(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Matrix b(2, 2);
  b(0, 0) = 1.0;
  b(1, 1) = 2.0;
  CHECK(l2_normalize(b, Modality::text).rows() == eye2());

  Rng rng(7);
  const auto r = l2_normalize(testing::random_matrix(rng, 4, 8), Modality::text);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(std::sqrt(dot(r.rows().row(i), r.rows().row(i))) - 1.0) < 1e-10);

  Matrix z(2, 3, 1.0);
  z(1, 0) = z(1, 1) = z(1, 2) = 0.0;
  try {
    l2_normalize(z, Modality::image);
    FAIL("expected ZeroRow");
  } catch (const ZeroRow& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("clip_loss worked values") {
  Matrix one(1, 2);
  one(0, 0) = 1.0;
  for (double tau : {0.01, 0.07, 1.0, 5.0}) {
    CHECK(clip_loss(text(one), image(one), Temperature::from_tau(tau)).value == doctest::Approx(0.0).epsilon(1e-15));
  }
  const double expected = std::log(1.0 + std::exp(-1.0));
  CHECK(clip_loss(text(eye2()), image(eye2()), Temperature::from_tau(1.0)).value ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(icl_loss(image(eye2()), image(eye2()), Temperature::from_tau(1.0)).value ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK(tcl_loss(text(eye2()), text(eye2()), Temperature::from_tau(1.0)).value ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("clip_loss rejects mismatched shapes") {
  Rng rng(1);
  const auto a = testing::random_batch(rng, 3, 4, Modality::text);
  const auto b = testing::random_batch(rng, 2, 4, Modality::image);
  const auto c = testing::random_batch(rng, 3, 5, Modality::image);
  CHECK_THROWS_AS(clip_loss(a, b, {}), ShapeMismatch);
  CHECK_THROWS_AS(clip_loss(a, c, {}), ShapeMismatch);
  CHECK_THROWS_AS(mvs_loss(a, a, b, b, {}), ShapeMismatch);
  CHECK_THROWS_AS(total_loss(a, a, c, c, {}, {}), ShapeMismatch);
}

TEST_CASE("clip_loss matches the explicit logit matrix") {
  Rng rng(11);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 32; ++n) {
    const auto u = testing::random_batch(rng, n, 8, Modality::text);
    const auto v = testing::random_batch(rng, n, 8, Modality::image);
    const double tau = rng.uniform(0.02, 2.0);
    worst = std::max(worst, std::abs(clip_loss(u, v, Temperature::from_tau(tau)).value -
                                     testing::naive_clip(u.rows(), v.rows(), tau)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("structural identities") {
  Rng rng(3);
  const std::size_t n = 6;
  const std::size_t d = 5;
  const auto u1 = testing::random_batch(rng, n, d, Modality::text);
  const auto u2 = testing::random_batch(rng, n, d, Modality::text);
  const auto v1 = testing::random_batch(rng, n, d, Modality::image);
  const auto v2 = testing::random_batch(rng, n, d, Modality::image);
  const Temperature t = Temperature::from_tau(0.3);

  SUBCASE("mvs collapses to clip for duplicated views") {
    CHECK(std::abs(mvs_loss(u1, u1, v1, v1, t).value - clip_loss(u1, v1, t).value) <= 1e-12);
  }
  SUBCASE("mvs is the mean of the four pairings") {
    const double sum = clip_loss(u1, v1, t).value + clip_loss(u2, v1, t).value + clip_loss(u1, v2, t).value +
                       clip_loss(u2, v2, t).value;
    CHECK(std::abs(mvs_loss(u1, u2, v1, v2, t).value - 0.25 * sum) <= 1e-12);
  }
  SUBCASE("single pair gives zero") {
    const auto a = testing::random_batch(rng, 1, d, Modality::text);
    const auto b = testing::random_batch(rng, 1, d, Modality::image);
    CHECK(mvs_loss(a, a, b, b, t).value == doctest::Approx(0.0));
    CHECK(icl_loss(b, b, t).value == doctest::Approx(0.0));
    CHECK(tcl_loss(a, a, t).value == doctest::Approx(0.0));
  }
  SUBCASE("icl is symmetric in its arguments") {
    CHECK(std::abs(icl_loss(v1, v2, t).value - icl_loss(v2, v1, t).value) <= 1e-12);
    CHECK(std::abs(clip_loss(u1, v1, t).value - clip_loss(EmbeddingBatch(v1.rows(), Modality::text),
                                                          EmbeddingBatch(u1.rows(), Modality::image), t)
                                                    .value) <= 1e-12);
  }
  SUBCASE("permutation invariance") {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto p = [&](const EmbeddingBatch& b) { return EmbeddingBatch(testing::permute_rows(b.rows(), perm), b.role()); };
    const TotalLoss a = total_loss(u1, u2, v1, v2, t, {});
    const TotalLoss b = total_loss(p(u1), p(u2), p(v1), p(v2), t, {});
    CHECK(std::abs(a.combined.value - b.combined.value) <= 1e-9);
    CHECK(std::abs(a.mvs - b.mvs) <= 1e-9);
    CHECK(std::abs(tcl_loss(u1, u2, t).value - tcl_loss(p(u1), p(u2), t).value) <= 1e-9);
  }
  SUBCASE("total is the weighted sum of its parts") {
    const TotalLoss tl = total_loss(u1, u2, v1, v2, t, LossWeights{1.0, 0.5});
    const LossOutput mvs = mvs_loss(u1, u2, v1, v2, t);
    const LossOutput icl = icl_loss(v1, v2, t);
    const LossOutput tcl = tcl_loss(u1, u2, t);
    CHECK(tl.mvs == mvs.value);
    CHECK(tl.icl == icl.value);
    CHECK(tl.tcl == tcl.value);
    CHECK(tl.combined.value == mvs.value + 1.0 * icl.value + 0.5 * tcl.value);

    Matrix gu1 = mvs.grad_inputs[0];
    add_scaled(gu1, tcl.grad_inputs[0], 0.5);
    Matrix gv2 = mvs.grad_inputs[3];
    add_scaled(gv2, icl.grad_inputs[1], 1.0);
    for (std::size_t k = 0; k < gu1.data.size(); ++k) {
      CHECK(std::abs(tl.combined.grad_inputs[0].data[k] - gu1.data[k]) <= 1e-12);
      CHECK(std::abs(tl.combined.grad_inputs[3].data[k] - gv2.data[k]) <= 1e-12);
    }
    CHECK(std::abs(tl.combined.grad_log_tau -
                   (mvs.grad_log_tau + icl.grad_log_tau + 0.5 * tcl.grad_log_tau)) <= 1e-12);

    const TotalLoss zero = total_loss(u1, u2, v1, v2, t, LossWeights{0.0, 0.0});
    CHECK(zero.combined.value == mvs.value);
  }
  SUBCASE("component arithmetic with the default weights") {
    const LossWeights w;
    CHECK(w.lambda_icl == 1.0);
    CHECK(w.lambda_tcl == 0.5);
    CHECK(1.0 + w.lambda_icl * 0.4 + w.lambda_tcl * 0.2 == doctest::Approx(1.5).epsilon(1e-15));
  }
}

TEST_CASE("losses are non-negative and gradient shapes match") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(8);
    const auto u1 = testing::random_batch(rng, n, 4, Modality::text);
    const auto u2 = testing::random_batch(rng, n, 4, Modality::text);
    const auto v1 = testing::random_batch(rng, n, 4, Modality::image);
    const auto v2 = testing::random_batch(rng, n, 4, Modality::image);
    const TotalLoss tl = total_loss(u1, u2, v1, v2, Temperature::from_tau(rng.uniform(0.01, 3.0)), {});
    CHECK(tl.mvs >= 0.0);
    CHECK(tl.icl >= 0.0);
    CHECK(tl.tcl >= 0.0);
    REQUIRE(tl.combined.grad_inputs.size() == 4);
    for (const Matrix& g : tl.combined.grad_inputs) CHECK(g.same_shape(u1.rows()));
  }
}

TEST_CASE("loss falls as the temperature sharpens at perfect alignment") {
  Matrix m(3, 3);
  for (std::size_t i = 0; i < 3; ++i) m(i, i) = 1.0;
  double previous = INFINITY;
  for (double inv = 0.5; inv <= 20.0; inv += 0.5) {
    const double value = clip_loss(text(m), image(m), Temperature::from_tau(1.0 / inv)).value;
    CHECK(value < previous);
    previous = value;
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(2024);
  for (LossKind k : {LossKind::clip, LossKind::mvs, LossKind::icl, LossKind::tcl, LossKind::total}) {
    double worst = 0.0;
    for (std::size_t n : {2, 4, 8}) {
      for (std::size_t d : {4, 16}) {
        std::vector<Matrix> raw;
        for (std::size_t i = 0; i < testing::loss_arity(k); ++i) raw.push_back(testing::random_matrix(rng, n, d));
        worst = std::max(worst, testing::gradient_check(k, raw, std::log(rng.uniform(0.05, 1.0))));
      }
    }
    INFO(testing::loss_name(k));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("finite_diff_grad") {
  std::vector<Matrix> in{Matrix(2, 3, 0.5)};
  in[0](1, 2) = -2.0;
  auto constant = [](std::span<const Matrix>, double) { return 4.0; };
  const auto zero = finite_diff_grad(constant, in, 0.1, 1e-5);
  for (double g : zero.grads[0].data) CHECK(g == 0.0);
  CHECK(zero.grad_log_tau == 0.0);

  auto cubic = [](std::span<const Matrix> x, double lt) {
    double s = lt * lt;
    for (double v : x[0].data) s += v * v * v;
    return s;
  };
  const auto g = finite_diff_grad(cubic, in, 0.25, 1e-4);
  CHECK(g.grads[0](0, 0) == doctest::Approx(0.75).epsilon(1e-7));
  CHECK(g.grads[0](1, 2) == doctest::Approx(12.0).epsilon(1e-7));
  CHECK(g.grad_log_tau == doctest::Approx(0.5).epsilon(1e-9));

  CHECK_THROWS(finite_diff_grad(constant, in, 0.0, 1e-2));
  CHECK_THROWS(finite_diff_grad(constant, in, 0.0, 1e-9));
}

TEST_CASE("temperature clamp") {
  Temperature t = Temperature::from_tau(50.0);
  t.clamp();
  CHECK(t.tau() == doctest::Approx(10.0));
  t = Temperature::from_tau(1e-6);
  t.clamp();
  CHECK(t.tau() == doctest::Approx(1e-3));
  CHECK(Temperature{}.tau() == doctest::Approx(0.07));
}

TEST_CASE("losses are bit-reproducible") {
  Rng a(9);
  Rng b(9);
  const auto u = testing::random_batch(a, 5, 6, Modality::text);
  const auto v = testing::random_batch(a, 5, 6, Modality::image);
  const auto u2 = testing::random_batch(b, 5, 6, Modality::text);
  const auto v2 = testing::random_batch(b, 5, 6, Modality::image);
  const LossOutput x = clip_loss(u, v, {});
  const LossOutput y = clip_loss(u2, v2, {});
  CHECK(x.value == y.value);
  CHECK(x.grad_inputs == y.grad_inputs);
}
