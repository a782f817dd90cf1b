#pragma once

#include <optional>
#include <vector>

#include "ipreid/common.hpp"
#include "ipreid/tensor.hpp"

namespace ipreid {

// Weights assembling the discriminator/generator objectives.
struct LossWeights {
  Scalar lambda_dom = 1.0;
  Scalar lambda_rec = 10.0;
  Scalar lambda_sem = 1.0;

  void validate() const {
    check_config(lambda_dom >= 0 && lambda_rec >= 0 && lambda_sem >= 0,
                 "loss weights must be non-negative");
  }
};

// log(sigmoid(x)), stable for large |x|.
Scalar log_sigmoid(Scalar x);
Scalar sigmoid(Scalar x);

// Mean over patches/batch of log s(d_real) + log(1 - s(d_fake)). Always <= 0.
// Gradients (optional) are d loss / d score, same layout as the inputs.
Scalar adversarial_loss(const Tensor& d_real, const Tensor& d_fake,
                        Tensor* grad_real = nullptr, Tensor* grad_fake = nullptr);

// -log softmax(logits)[label] via log-sum-exp. grad = softmax - onehot.
Scalar cross_entropy(ConstSpan logits, int label, Span grad = {});

// Domain classification loss of real (label = c') or fake (label = c) images.
Scalar domain_classification_loss(const std::vector<Scalar>& domain_logits, int label,
                                  std::vector<Scalar>* grad = nullptr);

// Mean absolute difference between an image and its cycle reconstruction.
// grad_rec = d loss / d x_rec.
Scalar reconstruction_loss(const Tensor& x, const Tensor& x_rec,
                           Tensor* grad_rec = nullptr);

// -log D_sem(y | G(x_s, c)) over the frozen classifier's logits.
Scalar identity_semantic_loss(const std::vector<Scalar>& id_logits, int y,
                              std::vector<Scalar>* grad = nullptr);

struct DiscriminatorLossParts {
  Scalar adv = 0.0;       // adversarial_loss value
  Scalar dom_real = 0.0;  // domain classification on real images
};

struct GeneratorLossParts {
  Scalar adv = 0.0;
  Scalar dom_fake = 0.0;
  Scalar rec = 0.0;
  std::optional<Scalar> sem;
};

// -L_adv + lambda_dom * L_dom^r. One implementation serves both the plain
// multi-domain objective and the identity-preserving one (they are identical).
Scalar discriminator_objective(const DiscriminatorLossParts& parts, const LossWeights& w);

// L_adv + lambda_dom * L_dom^f + lambda_rec * L_rec [+ lambda_sem * L_sem].
// with_semantic=false drops the semantic term (the plain multi-domain ablation).
Scalar generator_objective(const GeneratorLossParts& parts, const LossWeights& w,
                           bool with_semantic);

}  // namespace ipreid
