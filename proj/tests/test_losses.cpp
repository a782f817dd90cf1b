#include <doctest.h>

#include <cmath>

#include "ipreid/losses.hpp"
#include "test_util.hpp"

using namespace ipreid;

namespace {

Tensor scalar_tensor(std::initializer_list<Scalar> vals) {
  Tensor t(Shape{1, 1, 1, static_cast<int>(vals.size())});
  long i = 0;
  for (Scalar v : vals) t.data()[i++] = v;
  return t;
}

Scalar logit(Scalar p) { return std::log(p / (1 - p)); }

}  // namespace

TEST_CASE("adversarial loss closed forms") {
  // both sides at the sigmoid midpoint
  Tensor zeros = scalar_tensor({0.0});
  CHECK(adversarial_loss(zeros, zeros) == doctest::Approx(2 * std::log(0.5)).epsilon(1e-6));
  CHECK(adversarial_loss(zeros, zeros) == doctest::Approx(-1.3863).epsilon(1e-3));

  // perfect discriminator limit approaches 0 from below
  Tensor big = scalar_tensor({40.0});
  Tensor small = scalar_tensor({-40.0});
  Scalar sup = adversarial_loss(big, small);
  CHECK(sup < 0.0);
  CHECK(sup > -1e-10);

  // hand evaluation at probabilities 0.8 / 0.3
  Tensor r = scalar_tensor({logit(0.8)});
  Tensor f = scalar_tensor({logit(0.3)});
  CHECK(adversarial_loss(r, f) ==
        doctest::Approx(std::log(0.8) + std::log(0.7)).epsilon(1e-9));
  CHECK(adversarial_loss(r, f) == doctest::Approx(-0.5798).epsilon(1e-3));

  // patch-mean reduction: duplicated scores leave the value unchanged
  Tensor r4 = scalar_tensor({logit(0.8), logit(0.8), logit(0.8), logit(0.8)});
  CHECK(adversarial_loss(r4, f) == doctest::Approx(adversarial_loss(r, f)).epsilon(1e-12));
}

TEST_CASE("adversarial loss is never positive") {
  Rng rng(11);
  for (int it = 0; it < 200; ++it) {
    Tensor r = testutil::random_tensor(Shape{2, 1, 3, 2}, rng, -8, 8);
    Tensor f = testutil::random_tensor(Shape{2, 1, 3, 2}, rng, -8, 8);
    CHECK(adversarial_loss(r, f) <= 0.0);
  }
}

TEST_CASE("domain classification loss closed forms") {
  std::vector<Scalar> uniform7(7, 0.37);
  CHECK(domain_classification_loss(uniform7, 3) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-9));
  CHECK(domain_classification_loss(uniform7, 0) == doctest::Approx(1.9459).epsilon(1e-3));

  std::vector<Scalar> confident = {30.0, 0.0, 0.0};
  CHECK(domain_classification_loss(confident, 0) == doctest::Approx(0.0).epsilon(1e-9));

  // softmax probabilities (0.7, 0.2, 0.1)
  std::vector<Scalar> probs = {std::log(0.7), std::log(0.2), std::log(0.1)};
  CHECK(domain_classification_loss(probs, 0) ==
        doctest::Approx(-std::log(0.7)).epsilon(1e-9));
  CHECK(domain_classification_loss(probs, 0) == doctest::Approx(0.3567).epsilon(1e-3));

  CHECK_THROWS_WITH_AS(domain_classification_loss(probs, 3), doctest::Contains("out of range"),
                       std::runtime_error);
}

TEST_CASE("reconstruction loss closed forms") {
  Tensor x = scalar_tensor({0.2, -0.4});
  CHECK(reconstruction_loss(x, x) == doctest::Approx(0.0));

  Tensor ones(Shape{1, 1, 2, 2}, 1.0);
  Tensor zero(Shape{1, 1, 2, 2}, 0.0);
  CHECK(reconstruction_loss(ones, zero) == doctest::Approx(1.0));

  Tensor rec = scalar_tensor({0.5, -0.4});
  CHECK(reconstruction_loss(x, rec) == doctest::Approx(0.15).epsilon(1e-12));

  Tensor bad(Shape{1, 1, 3, 1});
  CHECK_THROWS_WITH_AS(reconstruction_loss(x, bad), doctest::Contains("shape mismatch"),
                       std::runtime_error);
}

TEST_CASE("identity semantic loss closed forms") {
  std::vector<Scalar> uniform751(751, -2.0);
  CHECK(identity_semantic_loss(uniform751, 42) ==
        doctest::Approx(std::log(751.0)).epsilon(1e-9));
  CHECK(identity_semantic_loss(uniform751, 0) == doctest::Approx(6.6214).epsilon(2e-4));

  std::vector<Scalar> confident = {50.0, 0.0};
  CHECK(identity_semantic_loss(confident, 0) == doctest::Approx(0.0).epsilon(1e-9));

  std::vector<Scalar> p91 = {std::log(0.9), std::log(0.1)};
  CHECK(identity_semantic_loss(p91, 1) == doctest::Approx(2.3026).epsilon(1e-4));
}

TEST_CASE("objective assembly") {
  LossWeights w;  // defaults (1, 10, 1)
  DiscriminatorLossParts dparts{-1.3863, 1.9459};
  CHECK(discriminator_objective(dparts, w) == doctest::Approx(3.3322).epsilon(1e-3));
  CHECK(discriminator_objective({0, 0}, w) == doctest::Approx(0.0));
  LossWeights w0 = w;
  w0.lambda_dom = 0;
  CHECK(discriminator_objective(dparts, w0) == doctest::Approx(1.3863).epsilon(1e-6));

  GeneratorLossParts gparts{-1.3863, 1.9459, 0.15, 6.6214};
  CHECK(generator_objective(gparts, w, true) == doctest::Approx(8.6810).epsilon(1e-3));
  CHECK(generator_objective(gparts, w, false) == doctest::Approx(2.0596).epsilon(1e-3));
  GeneratorLossParts zero{0, 0, 0, 0.0};
  CHECK(generator_objective(zero, w, true) == doctest::Approx(0.0));
  GeneratorLossParts missing{1, 1, 1, {}};
  CHECK_THROWS_AS(generator_objective(missing, w, true), std::runtime_error);
}

TEST_CASE("objectives are linear in the weights") {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    GeneratorLossParts p{rng.uniform(-3, 0), rng.uniform(0, 3), rng.uniform(0, 2),
                         rng.uniform(0, 7)};
    LossWeights w{rng.uniform(0, 2), rng.uniform(0, 20), rng.uniform(0, 2)};
    LossWeights w2 = w;
    w2.lambda_rec *= 2;
    Scalar base = generator_objective(p, w, true);
    Scalar doubled = generator_objective(p, w2, true);
    CHECK(doubled - base == doctest::Approx(w.lambda_rec * p.rec).epsilon(1e-9));

    DiscriminatorLossParts dp{p.adv, p.dom_fake};
    LossWeights dw = w;
    dw.lambda_dom *= 3;
    CHECK(discriminator_objective(dp, dw) - discriminator_objective(dp, w) ==
          doctest::Approx(2 * w.lambda_dom * dp.dom_real).epsilon(1e-9));
  }
}

TEST_CASE("plain and identity-preserving discriminator objectives coincide") {
  // one shared implementation; regression-check the identity on random parts
  Rng rng(17);
  for (int it = 0; it < 100; ++it) {
    DiscriminatorLossParts p{rng.uniform(-4, 0), rng.uniform(0, 4)};
    LossWeights w{rng.uniform(0, 3), 10, 1};
    Scalar a = discriminator_objective(p, w);
    Scalar b = -p.adv + w.lambda_dom * p.dom_real;
    CHECK(a == doctest::Approx(b).epsilon(1e-15));
  }
}

TEST_CASE("sign invariants") {
  Rng rng(23);
  for (int it = 0; it < 100; ++it) {
    int n = 2 + rng.uniform_int(9);
    std::vector<Scalar> logits(static_cast<std::size_t>(n));
    for (auto& v : logits) v = rng.uniform(-6, 6);
    int label = rng.uniform_int(n);
    CHECK(domain_classification_loss(logits, label) >= 0.0);
    CHECK(identity_semantic_loss(logits, label) >= 0.0);
    Tensor a = testutil::random_tensor(Shape{1, 3, 4, 2}, rng);
    Tensor b = testutil::random_tensor(Shape{1, 3, 4, 2}, rng);
    CHECK(reconstruction_loss(a, b) >= 0.0);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(31);
  // direct input-space gradients for each pure loss
  for (int it = 0; it < 25; ++it) {
    Shape s{1, 1, 2, 3};
    Tensor r = testutil::random_tensor(s, rng, -3, 3);
    Tensor f = testutil::random_tensor(s, rng, -3, 3);
    Tensor gr, gf;
    adversarial_loss(r, f, &gr, &gf);
    auto fn_r = [&](ConstSpan p) {
      Tensor rr = r;
      std::copy(p.begin(), p.end(), rr.vec().begin());
      return adversarial_loss(rr, f);
    };
    auto fd = testutil::fd_grad(fn_r, r.vec());
    CHECK(testutil::rel_err(gr.vec(), fd) < 1e-6);

    auto fn_f = [&](ConstSpan p) {
      Tensor ff = f;
      std::copy(p.begin(), p.end(), ff.vec().begin());
      return adversarial_loss(r, ff);
    };
    fd = testutil::fd_grad(fn_f, f.vec());
    CHECK(testutil::rel_err(gf.vec(), fd) < 1e-6);

    std::vector<Scalar> logits(6);
    for (auto& v : logits) v = rng.uniform(-4, 4);
    int label = rng.uniform_int(6);
    std::vector<Scalar> grad;
    domain_classification_loss(logits, label, &grad);
    auto fn_ce = [&](ConstSpan p) {
      return domain_classification_loss(std::vector<Scalar>(p.begin(), p.end()), label);
    };
    fd = testutil::fd_grad(fn_ce, logits);
    CHECK(testutil::rel_err(grad, fd) < 1e-6);
  }
}
