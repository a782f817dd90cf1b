#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ipreid/common.hpp"
#include "ipreid/rng.hpp"
#include "ipreid/tensor.hpp"

namespace ipreid {
namespace nn {

enum class Mode { kTrain, kEval };

// Per-forward activation storage. Each layer derives its own; a fresh context
// per forward pass lets several passes through the same parameters coexist
// (e.g. the generator applied twice in a cycle).
struct Ctx {
  virtual ~Ctx() = default;
};
using CtxPtr = std::unique_ptr<Ctx>;

struct NamedShape {
  std::string name;
  Shape shape;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  virtual Shape out_shape(const Shape& in) const = 0;
  virtual long param_count() const { return 0; }
  virtual long state_count() const { return 0; }
  virtual std::vector<NamedShape> param_tensors() const { return {}; }
  virtual std::vector<NamedShape> state_tensors() const { return {}; }
  virtual void init_params(Span /*p*/, Rng& /*rng*/) const {}
  virtual void init_state(Span /*s*/) const {}

  // When ctx is null the pass saves nothing (inference only). Train mode may
  // mutate `state` (running statistics).
  virtual Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                         CtxPtr* ctx) const = 0;
  // Accumulates (+=) parameter gradients into dp and returns d loss / d input.
  virtual Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const = 0;

 private:
  std::string name_;
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad);
  Shape out_shape(const Shape& in) const override;
  long param_count() const override;
  std::vector<NamedShape> param_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
};

// Stride-s upsampling transposed convolution; weight layout [in_c, out_c, k, k].
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad);
  Shape out_shape(const Shape& in) const override;
  long param_count() const override;
  std::vector<NamedShape> param_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
};

class Linear : public Layer {
 public:
  Linear(std::string name, int in_dim, int out_dim);
  Shape out_shape(const Shape& in) const override;
  long param_count() const override;
  std::vector<NamedShape> param_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int in_, out_;
};

// Affine instance normalization; statistics over spatial positions of each
// (sample, channel), identical in train and eval modes.
class InstanceNorm2d : public Layer {
 public:
  InstanceNorm2d(std::string name, int channels, Scalar eps = 1e-5);
  Shape out_shape(const Shape& in) const override { return in; }
  long param_count() const override { return 2L * c_; }
  std::vector<NamedShape> param_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int c_;
  Scalar eps_;
};

// Affine batch normalization with running statistics (state = mean, var).
class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, Scalar eps = 1e-5, Scalar momentum = 0.1);
  Shape out_shape(const Shape& in) const override { return in; }
  long param_count() const override { return 2L * c_; }
  long state_count() const override { return 2L * c_; }
  std::vector<NamedShape> param_tensors() const override;
  std::vector<NamedShape> state_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  void init_state(Span s) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int c_;
  Scalar eps_, momentum_;
};

class ReLU : public Layer {
 public:
  explicit ReLU(std::string name) : Layer(std::move(name)) {}
  Shape out_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;
};

class LeakyReLU : public Layer {
 public:
  LeakyReLU(std::string name, Scalar slope) : Layer(std::move(name)), slope_(slope) {}
  Shape out_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  Scalar slope_;
};

class Tanh : public Layer {
 public:
  explicit Tanh(std::string name) : Layer(std::move(name)) {}
  Shape out_shape(const Shape& in) const override { return in; }
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;
};

class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  Shape out_shape(const Shape& in) const override { return Shape{in.n, in.c, 1, 1}; }
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;
};

class Flatten : public Layer {
 public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}
  Shape out_shape(const Shape& in) const override {
    return Shape{in.n, static_cast<int>(in.per_sample()), 1, 1};
  }
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;
};

// Sequential network over a flat parameter/state vector; also usable as a
// building block inside composite layers. Parameter counts depend only on the
// layer definitions, so they are available before any shape is known.
class Net {
 public:
  Net& add(std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  Net& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  long param_count() const;
  long state_count() const;
  Shape out_shape(const Shape& in) const;

  std::vector<NamedShape> param_tensors(const std::string& prefix = "") const;
  std::vector<NamedShape> state_tensors(const std::string& prefix = "") const;
  void init(Span params, Span state, std::uint64_t seed) const;

  struct FwdCtx {
    std::vector<CtxPtr> layers;
  };

  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode, FwdCtx* ctx) const;
  Tensor backward(const Tensor& dy, ConstSpan p, FwdCtx& ctx, Span dp) const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Residual block used by the classifiers: conv-bn-relu-conv-bn plus identity
// (or 1x1 projection when shape changes), ReLU after the sum.
class ClassifierResBlock : public Layer {
 public:
  ClassifierResBlock(std::string name, int in_c, int out_c, int stride);
  Shape out_shape(const Shape& in) const override;
  long param_count() const override;
  long state_count() const override;
  std::vector<NamedShape> param_tensors() const override;
  std::vector<NamedShape> state_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  void init_state(Span s) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  int in_c_, out_c_, stride_;
  Net main_, proj_;
  bool has_proj_;
};

// Residual block used by the generator: conv-in-relu-conv-in plus identity,
// no activation after the sum.
class GenResBlock : public Layer {
 public:
  GenResBlock(std::string name, int channels);
  Shape out_shape(const Shape& in) const override { return in; }
  long param_count() const override { return main_.param_count(); }
  std::vector<NamedShape> param_tensors() const override;
  void init_params(Span p, Rng& rng) const override;
  Tensor forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                 CtxPtr* ctx) const override;
  Tensor backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const override;

 private:
  Net main_;
};

// Standalone instance-normalization primitive (gain/bias per channel).
Tensor instance_normalize(const Tensor& x, Scalar eps, ConstSpan gain, ConstSpan bias);

}  // namespace nn
}  // namespace ipreid
