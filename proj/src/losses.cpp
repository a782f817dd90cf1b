#include "ipreid/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ipreid {

Scalar log_sigmoid(Scalar x) {
  // -softplus(-x)
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

Scalar sigmoid(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  Scalar e = std::exp(x);
  return e / (1.0 + e);
}

Scalar adversarial_loss(const Tensor& d_real, const Tensor& d_fake,
                        Tensor* grad_real, Tensor* grad_fake) {
  const long nr = d_real.count();
  const long nf = d_fake.count();
  check(nr > 0 && nf > 0, "adversarial_loss: empty score tensors");
  if (grad_real) *grad_real = Tensor(d_real.shape());
  if (grad_fake) *grad_fake = Tensor(d_fake.shape());

  Scalar real_term = 0.0;
  for (long i = 0; i < nr; ++i) {
    Scalar s = d_real.data()[i];
    real_term += log_sigmoid(s);
    // d/ds log s(s) = 1 - sigmoid(s)
    if (grad_real) grad_real->data()[i] = (1.0 - sigmoid(s)) / static_cast<Scalar>(nr);
  }
  Scalar fake_term = 0.0;
  for (long i = 0; i < nf; ++i) {
    Scalar s = d_fake.data()[i];
    // log(1 - sigmoid(s)) = log sigmoid(-s)
    fake_term += log_sigmoid(-s);
    if (grad_fake) grad_fake->data()[i] = -sigmoid(s) / static_cast<Scalar>(nf);
  }
  return real_term / static_cast<Scalar>(nr) + fake_term / static_cast<Scalar>(nf);
}

Scalar cross_entropy(ConstSpan logits, int label, Span grad) {
  const int n = static_cast<int>(logits.size());
  check(n > 0, "cross_entropy: empty logits");
  check(label >= 0 && label < n,
        "cross_entropy: label " + std::to_string(label) + " out of range [0, " +
            std::to_string(n) + ")");
  Scalar m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  Scalar sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
  Scalar lse = m + std::log(sum);
  if (!grad.empty()) {
    check(grad.size() == logits.size(), "cross_entropy: grad size mismatch");
    for (int i = 0; i < n; ++i) {
      grad[i] = std::exp(logits[i] - lse) - (i == label ? 1.0 : 0.0);
    }
  }
  return lse - logits[label];
}

Scalar domain_classification_loss(const std::vector<Scalar>& domain_logits, int label,
                                  std::vector<Scalar>* grad) {
  if (grad) grad->assign(domain_logits.size(), 0.0);
  return cross_entropy(ConstSpan(domain_logits), label,
                       grad ? Span(*grad) : Span{});
}

Scalar reconstruction_loss(const Tensor& x, const Tensor& x_rec, Tensor* grad_rec) {
  check(x.shape() == x_rec.shape(),
        "reconstruction_loss: shape mismatch " + x.shape().str() + " vs " +
            x_rec.shape().str());
  const long n = x.count();
  check(n > 0, "reconstruction_loss: empty tensors");
  if (grad_rec) *grad_rec = Tensor(x.shape());
  Scalar sum = 0.0;
  for (long i = 0; i < n; ++i) {
    Scalar d = x_rec.data()[i] - x.data()[i];
    sum += std::abs(d);
    if (grad_rec)
      grad_rec->data()[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<Scalar>(n);
  }
  return sum / static_cast<Scalar>(n);
}

Scalar identity_semantic_loss(const std::vector<Scalar>& id_logits, int y,
                              std::vector<Scalar>* grad) {
  if (grad) grad->assign(id_logits.size(), 0.0);
  return cross_entropy(ConstSpan(id_logits), y, grad ? Span(*grad) : Span{});
}

Scalar discriminator_objective(const DiscriminatorLossParts& parts, const LossWeights& w) {
  return -parts.adv + w.lambda_dom * parts.dom_real;
}

Scalar generator_objective(const GeneratorLossParts& parts, const LossWeights& w,
                           bool with_semantic) {
  Scalar v = parts.adv + w.lambda_dom * parts.dom_fake + w.lambda_rec * parts.rec;
  if (with_semantic) {
    check(parts.sem.has_value(), "generator_objective: semantic term requested but absent");
    v += w.lambda_sem * *parts.sem;
  }
  return v;
}

}  // namespace ipreid
