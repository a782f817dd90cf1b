#include "ipreid/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>

namespace ipreid {
namespace nn {

namespace {

using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Patches of one sample as a [C*k*k x OH*OW] row-major matrix.
void im2col(const Scalar* x, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, Scalar* cols) {
  const long ohw = static_cast<long>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        Scalar* row = cols + (static_cast<long>(ch) * k * k + ki * k + kj) * ohw;
        const Scalar* plane = x + static_cast<long>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::memset(row + static_cast<long>(oy) * ow, 0, sizeof(Scalar) * ow);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kj;
            row[static_cast<long>(oy) * ow + ox] =
                (ix >= 0 && ix < w) ? plane[static_cast<long>(iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a [C*k*k x OH*OW] patch matrix back into one sample.
void col2im_add(const Scalar* cols, int c, int h, int w, int k, int stride, int pad,
                int oh, int ow, Scalar* x) {
  const long ohw = static_cast<long>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Scalar* row = cols + (static_cast<long>(ch) * k * k + ki * k + kj) * ohw;
        Scalar* plane = x + static_cast<long>(ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) plane[static_cast<long>(iy) * w + ix] += row[static_cast<long>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

struct SavedInputCtx : Ctx {
  Tensor input;
};

void he_normal(Span w, long fan_in, Rng& rng) {
  Scalar std = std::sqrt(2.0 / static_cast<Scalar>(fan_in));
  for (auto& v : w) v = rng.normal(0.0, std);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_c, int out_c, int kernel, int stride, int pad)
    : Layer(std::move(name)), in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad) {}

Shape Conv2d::out_shape(const Shape& in) const {
  check(in.c == in_c_, name() + ": expected " + std::to_string(in_c_) +
                           " input channels, got " + std::to_string(in.c));
  int oh = conv_out_dim(in.h, k_, stride_, pad_);
  int ow = conv_out_dim(in.w, k_, stride_, pad_);
  check(oh > 0 && ow > 0, name() + ": input " + in.str() + " too small for kernel");
  return Shape{in.n, out_c_, oh, ow};
}

long Conv2d::param_count() const { return static_cast<long>(out_c_) * in_c_ * k_ * k_ + out_c_; }

std::vector<NamedShape> Conv2d::param_tensors() const {
  return {{name() + ".weight", Shape{out_c_, in_c_, k_, k_}},
          {name() + ".bias", Shape{1, out_c_, 1, 1}}};
}

void Conv2d::init_params(Span p, Rng& rng) const {
  long wn = static_cast<long>(out_c_) * in_c_ * k_ * k_;
  he_normal(p.subspan(0, wn), static_cast<long>(in_c_) * k_ * k_, rng);
  for (long i = wn; i < wn + out_c_; ++i) p[i] = 0.0;
}

Tensor Conv2d::forward(const Tensor& x, ConstSpan p, Span, Mode, CtxPtr* ctx) const {
  Shape os = out_shape(x.shape());
  Tensor y(os);
  const long kk = static_cast<long>(in_c_) * k_ * k_;
  const long ohw = static_cast<long>(os.h) * os.w;
  std::vector<Scalar> cols(kk * ohw);
  CMapRM W(p.data(), out_c_, kk);
  const Scalar* bias = p.data() + out_c_ * kk;
  for (int n = 0; n < x.shape().n; ++n) {
    im2col(x.sample(n), in_c_, x.shape().h, x.shape().w, k_, stride_, pad_, os.h, os.w,
           cols.data());
    MapRM Y(y.sample(n), out_c_, ohw);
    CMapRM P(cols.data(), kk, ohw);
    Y.noalias() = W * P;
    for (int oc = 0; oc < out_c_; ++oc) Y.row(oc).array() += bias[oc];
  }
  if (ctx) {
    auto c = std::make_unique<SavedInputCtx>();
    c->input = x;
    *ctx = std::move(c);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  const auto& saved = static_cast<SavedInputCtx&>(ctx);
  const Tensor& x = saved.input;
  Shape os = dy.shape();
  Tensor dx(x.shape());
  const long kk = static_cast<long>(in_c_) * k_ * k_;
  const long ohw = static_cast<long>(os.h) * os.w;
  std::vector<Scalar> cols(kk * ohw);
  std::vector<Scalar> dcols(kk * ohw);
  CMapRM W(p.data(), out_c_, kk);
  MapRM dW(dp.data(), out_c_, kk);
  Scalar* db = dp.data() + out_c_ * kk;
  for (int n = 0; n < x.shape().n; ++n) {
    im2col(x.sample(n), in_c_, x.shape().h, x.shape().w, k_, stride_, pad_, os.h, os.w,
           cols.data());
    CMapRM P(cols.data(), kk, ohw);
    CMapRM dY(dy.sample(n), out_c_, ohw);
    dW.noalias() += dY * P.transpose();
    for (int oc = 0; oc < out_c_; ++oc) db[oc] += dY.row(oc).sum();
    MapRM dP(dcols.data(), kk, ohw);
    dP.noalias() = W.transpose() * dY;
    col2im_add(dcols.data(), in_c_, x.shape().h, x.shape().w, k_, stride_, pad_, os.h,
               os.w, dx.sample(n));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::string name, int in_c, int out_c, int kernel,
                                 int stride, int pad)
    : Layer(std::move(name)), in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad) {}

Shape ConvTranspose2d::out_shape(const Shape& in) const {
  check(in.c == in_c_, name() + ": expected " + std::to_string(in_c_) +
                           " input channels, got " + std::to_string(in.c));
  int oh = (in.h - 1) * stride_ - 2 * pad_ + k_;
  int ow = (in.w - 1) * stride_ - 2 * pad_ + k_;
  check(oh > 0 && ow > 0, name() + ": degenerate output for input " + in.str());
  return Shape{in.n, out_c_, oh, ow};
}

long ConvTranspose2d::param_count() const {
  return static_cast<long>(in_c_) * out_c_ * k_ * k_ + out_c_;
}

std::vector<NamedShape> ConvTranspose2d::param_tensors() const {
  return {{name() + ".weight", Shape{in_c_, out_c_, k_, k_}},
          {name() + ".bias", Shape{1, out_c_, 1, 1}}};
}

void ConvTranspose2d::init_params(Span p, Rng& rng) const {
  long wn = static_cast<long>(in_c_) * out_c_ * k_ * k_;
  // fan_in of the equivalent forward map: each output pixel draws from
  // in_c * (k/stride)^2 inputs; use in_c * k * k / stride^2.
  he_normal(p.subspan(0, wn),
            std::max(1L, static_cast<long>(in_c_) * k_ * k_ / (stride_ * stride_)), rng);
  for (long i = wn; i < wn + out_c_; ++i) p[i] = 0.0;
}

Tensor ConvTranspose2d::forward(const Tensor& x, ConstSpan p, Span, Mode, CtxPtr* ctx) const {
  Shape os = out_shape(x.shape());
  Tensor y(os);
  // Virtual forward conv maps y (out_c_) -> x (in_c_) with (k, stride, pad);
  // this forward is its backward-data pass.
  const long kk = static_cast<long>(out_c_) * k_ * k_;
  const long ihw = static_cast<long>(x.shape().h) * x.shape().w;
  std::vector<Scalar> dcols(kk * ihw);
  CMapRM W(p.data(), in_c_, kk);
  const Scalar* bias = p.data() + in_c_ * kk;
  for (int n = 0; n < x.shape().n; ++n) {
    CMapRM X(x.sample(n), in_c_, ihw);
    MapRM dP(dcols.data(), kk, ihw);
    dP.noalias() = W.transpose() * X;
    col2im_add(dcols.data(), out_c_, os.h, os.w, k_, stride_, pad_, x.shape().h,
               x.shape().w, y.sample(n));
    MapRM Y(y.sample(n), out_c_, static_cast<long>(os.h) * os.w);
    for (int oc = 0; oc < out_c_; ++oc) Y.row(oc).array() += bias[oc];
  }
  if (ctx) {
    auto c = std::make_unique<SavedInputCtx>();
    c->input = x;
    *ctx = std::move(c);
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  const auto& saved = static_cast<SavedInputCtx&>(ctx);
  const Tensor& x = saved.input;
  Shape os = dy.shape();
  Tensor dx(x.shape());
  const long kk = static_cast<long>(out_c_) * k_ * k_;
  const long ihw = static_cast<long>(x.shape().h) * x.shape().w;
  std::vector<Scalar> cols(kk * ihw);
  CMapRM W(p.data(), in_c_, kk);
  MapRM dW(dp.data(), in_c_, kk);
  Scalar* db = dp.data() + in_c_ * kk;
  for (int n = 0; n < x.shape().n; ++n) {
    // dx = virtual conv forward over dy
    im2col(dy.sample(n), out_c_, os.h, os.w, k_, stride_, pad_, x.shape().h, x.shape().w,
           cols.data());
    CMapRM P(cols.data(), kk, ihw);
    MapRM dX(dx.sample(n), in_c_, ihw);
    dX.noalias() = W * P;
    CMapRM X(x.sample(n), in_c_, ihw);
    dW.noalias() += X * P.transpose();
    CMapRM dY(dy.sample(n), out_c_, static_cast<long>(os.h) * os.w);
    for (int oc = 0; oc < out_c_; ++oc) db[oc] += dY.row(oc).sum();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_dim, int out_dim)
    : Layer(std::move(name)), in_(in_dim), out_(out_dim) {}

Shape Linear::out_shape(const Shape& in) const {
  check(in.per_sample() == in_, name() + ": expected " + std::to_string(in_) +
                                    " input features, got shape " + in.str());
  return Shape{in.n, out_, 1, 1};
}

long Linear::param_count() const { return static_cast<long>(out_) * in_ + out_; }

std::vector<NamedShape> Linear::param_tensors() const {
  return {{name() + ".weight", Shape{out_, in_, 1, 1}},
          {name() + ".bias", Shape{1, out_, 1, 1}}};
}

void Linear::init_params(Span p, Rng& rng) const {
  he_normal(p.subspan(0, static_cast<long>(out_) * in_), in_, rng);
  for (long i = static_cast<long>(out_) * in_; i < param_count(); ++i) p[i] = 0.0;
}

Tensor Linear::forward(const Tensor& x, ConstSpan p, Span, Mode, CtxPtr* ctx) const {
  Shape os = out_shape(x.shape());
  Tensor y(os);
  CMapRM W(p.data(), out_, in_);
  const Scalar* bias = p.data() + static_cast<long>(out_) * in_;
  CMapRM X(x.data(), x.shape().n, in_);
  MapRM Y(y.data(), os.n, out_);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < os.n; ++n)
    for (int o = 0; o < out_; ++o) Y(n, o) += bias[o];
  if (ctx) {
    auto c = std::make_unique<SavedInputCtx>();
    c->input = x;
    *ctx = std::move(c);
  }
  return y;
}

Tensor Linear::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  const auto& saved = static_cast<SavedInputCtx&>(ctx);
  const Tensor& x = saved.input;
  Tensor dx(x.shape());
  CMapRM W(p.data(), out_, in_);
  MapRM dW(dp.data(), out_, in_);
  Scalar* db = dp.data() + static_cast<long>(out_) * in_;
  CMapRM X(x.data(), x.shape().n, in_);
  CMapRM dY(dy.data(), dy.shape().n, out_);
  dW.noalias() += dY.transpose() * X;
  for (int o = 0; o < out_; ++o) db[o] += dY.col(o).sum();
  MapRM dX(dx.data(), x.shape().n, in_);
  dX.noalias() = dY * W;
  return dx;
}

// ---------------------------------------------------------------------------
// InstanceNorm2d

namespace {
struct NormCtx : Ctx {
  Tensor xhat;                  // normalized input
  std::vector<Scalar> invstd;   // per (n,c) for IN, per c for BN
  bool used_batch_stats = false;
};
}  // namespace

InstanceNorm2d::InstanceNorm2d(std::string name, int channels, Scalar eps)
    : Layer(std::move(name)), c_(channels), eps_(eps) {}

std::vector<NamedShape> InstanceNorm2d::param_tensors() const {
  return {{name() + ".gain", Shape{1, c_, 1, 1}}, {name() + ".bias", Shape{1, c_, 1, 1}}};
}

void InstanceNorm2d::init_params(Span p, Rng&) const {
  for (int i = 0; i < c_; ++i) p[i] = 1.0;
  for (int i = c_; i < 2 * c_; ++i) p[i] = 0.0;
}

Tensor InstanceNorm2d::forward(const Tensor& x, ConstSpan p, Span, Mode, CtxPtr* ctx) const {
  check(x.shape().c == c_, name() + ": channel mismatch");
  const int hw = x.shape().h * x.shape().w;
  check(hw >= 1, name() + ": empty spatial extent");
  Tensor y(x.shape());
  auto c = std::make_unique<NormCtx>();
  c->xhat = Tensor(x.shape());
  c->invstd.resize(static_cast<std::size_t>(x.shape().n) * c_);
  const Scalar* gain = p.data();
  const Scalar* bias = p.data() + c_;
  for (int n = 0; n < x.shape().n; ++n) {
    for (int ch = 0; ch < c_; ++ch) {
      const Scalar* px = x.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar* py = y.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar* ph = c->xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar mean = 0.0;
      for (int i = 0; i < hw; ++i) mean += px[i];
      mean /= hw;
      Scalar var = 0.0;
      for (int i = 0; i < hw; ++i) {
        Scalar d = px[i] - mean;
        var += d * d;
      }
      var /= hw;
      Scalar inv = 1.0 / std::sqrt(var + eps_);
      c->invstd[static_cast<std::size_t>(n) * c_ + ch] = inv;
      for (int i = 0; i < hw; ++i) {
        Scalar xh = (px[i] - mean) * inv;
        ph[i] = xh;
        py[i] = gain[ch] * xh + bias[ch];
      }
    }
  }
  if (ctx) *ctx = std::move(c);
  return y;
}

Tensor InstanceNorm2d::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  const auto& c = static_cast<NormCtx&>(ctx);
  const int hw = dy.shape().h * dy.shape().w;
  Tensor dx(dy.shape());
  const Scalar* gain = p.data();
  Scalar* dgain = dp.data();
  Scalar* dbias = dp.data() + c_;
  for (int n = 0; n < dy.shape().n; ++n) {
    for (int ch = 0; ch < c_; ++ch) {
      const Scalar* pdy = dy.data() + (static_cast<long>(n) * c_ + ch) * hw;
      const Scalar* ph = c.xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar* pdx = dx.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar inv = c.invstd[static_cast<std::size_t>(n) * c_ + ch];
      Scalar sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < hw; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * ph[i];
      }
      dgain[ch] += sum_dy_xhat;
      dbias[ch] += sum_dy;
      const Scalar m = static_cast<Scalar>(hw);
      for (int i = 0; i < hw; ++i) {
        pdx[i] = gain[ch] * inv * (pdy[i] - sum_dy / m - ph[i] * sum_dy_xhat / m);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, Scalar eps, Scalar momentum)
    : Layer(std::move(name)), c_(channels), eps_(eps), momentum_(momentum) {}

std::vector<NamedShape> BatchNorm2d::param_tensors() const {
  return {{name() + ".gain", Shape{1, c_, 1, 1}}, {name() + ".bias", Shape{1, c_, 1, 1}}};
}

std::vector<NamedShape> BatchNorm2d::state_tensors() const {
  return {{name() + ".running_mean", Shape{1, c_, 1, 1}},
          {name() + ".running_var", Shape{1, c_, 1, 1}}};
}

void BatchNorm2d::init_params(Span p, Rng&) const {
  for (int i = 0; i < c_; ++i) p[i] = 1.0;
  for (int i = c_; i < 2 * c_; ++i) p[i] = 0.0;
}

void BatchNorm2d::init_state(Span s) const {
  for (int i = 0; i < c_; ++i) s[i] = 0.0;
  for (int i = c_; i < 2 * c_; ++i) s[i] = 1.0;
}

Tensor BatchNorm2d::forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                            CtxPtr* ctx) const {
  check(x.shape().c == c_, name() + ": channel mismatch");
  const int hw = x.shape().h * x.shape().w;
  const long m = static_cast<long>(x.shape().n) * hw;
  Tensor y(x.shape());
  auto cx = std::make_unique<NormCtx>();
  cx->xhat = Tensor(x.shape());
  cx->invstd.resize(c_);
  cx->used_batch_stats = (mode == Mode::kTrain);
  const Scalar* gain = p.data();
  const Scalar* bias = p.data() + c_;
  if (mode == Mode::kTrain) {
    check(m >= 2, name() + ": batch statistics require at least 2 values per channel");
    for (int ch = 0; ch < c_; ++ch) {
      Scalar mean = 0.0;
      for (int n = 0; n < x.shape().n; ++n) {
        const Scalar* px = x.data() + (static_cast<long>(n) * c_ + ch) * hw;
        for (int i = 0; i < hw; ++i) mean += px[i];
      }
      mean /= static_cast<Scalar>(m);
      Scalar var = 0.0;
      for (int n = 0; n < x.shape().n; ++n) {
        const Scalar* px = x.data() + (static_cast<long>(n) * c_ + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          Scalar d = px[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<Scalar>(m);
      Scalar inv = 1.0 / std::sqrt(var + eps_);
      cx->invstd[ch] = inv;
      for (int n = 0; n < x.shape().n; ++n) {
        const Scalar* px = x.data() + (static_cast<long>(n) * c_ + ch) * hw;
        Scalar* py = y.data() + (static_cast<long>(n) * c_ + ch) * hw;
        Scalar* ph = cx->xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          Scalar xh = (px[i] - mean) * inv;
          ph[i] = xh;
          py[i] = gain[ch] * xh + bias[ch];
        }
      }
      // unbiased variance for the running estimate
      Scalar var_unbiased = var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1);
      state[ch] = (1.0 - momentum_) * state[ch] + momentum_ * mean;
      state[c_ + ch] = (1.0 - momentum_) * state[c_ + ch] + momentum_ * var_unbiased;
    }
  } else {
    for (int ch = 0; ch < c_; ++ch) {
      Scalar mean = state[ch];
      Scalar inv = 1.0 / std::sqrt(state[c_ + ch] + eps_);
      cx->invstd[ch] = inv;
      for (int n = 0; n < x.shape().n; ++n) {
        const Scalar* px = x.data() + (static_cast<long>(n) * c_ + ch) * hw;
        Scalar* py = y.data() + (static_cast<long>(n) * c_ + ch) * hw;
        Scalar* ph = cx->xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          Scalar xh = (px[i] - mean) * inv;
          ph[i] = xh;
          py[i] = gain[ch] * xh + bias[ch];
        }
      }
    }
  }
  if (ctx) *ctx = std::move(cx);
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  const auto& c = static_cast<NormCtx&>(ctx);
  const int hw = dy.shape().h * dy.shape().w;
  const long m = static_cast<long>(dy.shape().n) * hw;
  Tensor dx(dy.shape());
  const Scalar* gain = p.data();
  Scalar* dgain = dp.data();
  Scalar* dbias = dp.data() + c_;
  for (int ch = 0; ch < c_; ++ch) {
    Scalar sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.shape().n; ++n) {
      const Scalar* pdy = dy.data() + (static_cast<long>(n) * c_ + ch) * hw;
      const Scalar* ph = c.xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
      for (int i = 0; i < hw; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * ph[i];
      }
    }
    dgain[ch] += sum_dy_xhat;
    dbias[ch] += sum_dy;
    Scalar inv = c.invstd[ch];
    for (int n = 0; n < dy.shape().n; ++n) {
      const Scalar* pdy = dy.data() + (static_cast<long>(n) * c_ + ch) * hw;
      const Scalar* ph = c.xhat.data() + (static_cast<long>(n) * c_ + ch) * hw;
      Scalar* pdx = dx.data() + (static_cast<long>(n) * c_ + ch) * hw;
      if (c.used_batch_stats) {
        for (int i = 0; i < hw; ++i) {
          pdx[i] = gain[ch] * inv *
                   (pdy[i] - sum_dy / static_cast<Scalar>(m) -
                    ph[i] * sum_dy_xhat / static_cast<Scalar>(m));
        }
      } else {
        // eval mode: fixed statistics, a per-channel affine map
        for (int i = 0; i < hw; ++i) pdx[i] = gain[ch] * inv * pdy[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations

namespace {
struct MaskCtx : Ctx {
  Tensor ref;  // input for (leaky) relu, output for tanh
};
}  // namespace

Tensor ReLU::forward(const Tensor& x, ConstSpan, Span, Mode, CtxPtr* ctx) const {
  Tensor y(x.shape());
  for (long i = 0; i < x.count(); ++i) y.data()[i] = x.data()[i] > 0 ? x.data()[i] : 0.0;
  if (ctx) {
    auto c = std::make_unique<MaskCtx>();
    c->ref = x;
    *ctx = std::move(c);
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy, ConstSpan, Ctx& ctx, Span) const {
  const auto& c = static_cast<MaskCtx&>(ctx);
  Tensor dx(dy.shape());
  for (long i = 0; i < dy.count(); ++i)
    dx.data()[i] = c.ref.data()[i] > 0 ? dy.data()[i] : 0.0;
  return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, ConstSpan, Span, Mode, CtxPtr* ctx) const {
  Tensor y(x.shape());
  for (long i = 0; i < x.count(); ++i) {
    Scalar v = x.data()[i];
    y.data()[i] = v > 0 ? v : slope_ * v;
  }
  if (ctx) {
    auto c = std::make_unique<MaskCtx>();
    c->ref = x;
    *ctx = std::move(c);
  }
  return y;
}

Tensor LeakyReLU::backward(const Tensor& dy, ConstSpan, Ctx& ctx, Span) const {
  const auto& c = static_cast<MaskCtx&>(ctx);
  Tensor dx(dy.shape());
  for (long i = 0; i < dy.count(); ++i)
    dx.data()[i] = c.ref.data()[i] > 0 ? dy.data()[i] : slope_ * dy.data()[i];
  return dx;
}

Tensor Tanh::forward(const Tensor& x, ConstSpan, Span, Mode, CtxPtr* ctx) const {
  Tensor y(x.shape());
  for (long i = 0; i < x.count(); ++i) y.data()[i] = std::tanh(x.data()[i]);
  if (ctx) {
    auto c = std::make_unique<MaskCtx>();
    c->ref = y;
    *ctx = std::move(c);
  }
  return y;
}

Tensor Tanh::backward(const Tensor& dy, ConstSpan, Ctx& ctx, Span) const {
  const auto& c = static_cast<MaskCtx&>(ctx);
  Tensor dx(dy.shape());
  for (long i = 0; i < dy.count(); ++i) {
    Scalar t = c.ref.data()[i];
    dx.data()[i] = dy.data()[i] * (1.0 - t * t);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling / reshaping

namespace {
struct ShapeCtx : Ctx {
  Shape in;
};
}  // namespace

Tensor GlobalAvgPool::forward(const Tensor& x, ConstSpan, Span, Mode, CtxPtr* ctx) const {
  const int hw = x.shape().h * x.shape().w;
  Tensor y(Shape{x.shape().n, x.shape().c, 1, 1});
  for (int n = 0; n < x.shape().n; ++n) {
    for (int ch = 0; ch < x.shape().c; ++ch) {
      const Scalar* px = x.data() + (static_cast<long>(n) * x.shape().c + ch) * hw;
      Scalar s = 0.0;
      for (int i = 0; i < hw; ++i) s += px[i];
      y.at(n, ch, 0, 0) = s / hw;
    }
  }
  if (ctx) {
    auto c = std::make_unique<ShapeCtx>();
    c->in = x.shape();
    *ctx = std::move(c);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy, ConstSpan, Ctx& ctx, Span) const {
  const auto& c = static_cast<ShapeCtx&>(ctx);
  const int hw = c.in.h * c.in.w;
  Tensor dx(c.in);
  for (int n = 0; n < c.in.n; ++n) {
    for (int ch = 0; ch < c.in.c; ++ch) {
      Scalar g = dy.at(n, ch, 0, 0) / hw;
      Scalar* pdx = dx.data() + (static_cast<long>(n) * c.in.c + ch) * hw;
      for (int i = 0; i < hw; ++i) pdx[i] = g;
    }
  }
  return dx;
}

Tensor Flatten::forward(const Tensor& x, ConstSpan, Span, Mode, CtxPtr* ctx) const {
  Tensor y(out_shape(x.shape()));
  y.vec() = x.vec();
  if (ctx) {
    auto c = std::make_unique<ShapeCtx>();
    c->in = x.shape();
    *ctx = std::move(c);
  }
  return y;
}

Tensor Flatten::backward(const Tensor& dy, ConstSpan, Ctx& ctx, Span) const {
  const auto& c = static_cast<ShapeCtx&>(ctx);
  Tensor dx(c.in);
  dx.vec() = dy.vec();
  return dx;
}

// ---------------------------------------------------------------------------
// Net

Net& Net::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

long Net::param_count() const {
  long n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

long Net::state_count() const {
  long n = 0;
  for (const auto& l : layers_) n += l->state_count();
  return n;
}

Shape Net::out_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->out_shape(s);
  return s;
}

std::vector<NamedShape> Net::param_tensors(const std::string& prefix) const {
  std::vector<NamedShape> out;
  for (const auto& l : layers_) {
    for (auto& t : l->param_tensors()) out.push_back({prefix + t.name, t.shape});
  }
  return out;
}

std::vector<NamedShape> Net::state_tensors(const std::string& prefix) const {
  std::vector<NamedShape> out;
  for (const auto& l : layers_) {
    for (auto& t : l->state_tensors()) out.push_back({prefix + t.name, t.shape});
  }
  return out;
}

namespace {
// FNV-1a; layer init streams are keyed by name so that inserting or removing
// unrelated layers leaves every other layer's initial values unchanged.
std::uint64_t hash_name(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

void Net::init(Span params, Span state, std::uint64_t seed) const {
  check(static_cast<long>(params.size()) == param_count(), "Net: params size mismatch");
  check(static_cast<long>(state.size()) == state_count(), "Net: state size mismatch");
  long po = 0, so = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Rng rng(mix_seed(seed, 0x11, hash_name(layers_[i]->name())));
    long pc = layers_[i]->param_count();
    long sc = layers_[i]->state_count();
    if (pc > 0) layers_[i]->init_params(params.subspan(po, pc), rng);
    if (sc > 0) layers_[i]->init_state(state.subspan(so, sc));
    po += pc;
    so += sc;
  }
}

Tensor Net::forward(const Tensor& x, ConstSpan p, Span state, Mode mode, FwdCtx* ctx) const {
  if (ctx) {
    ctx->layers.clear();
    ctx->layers.resize(layers_.size());
  }
  Tensor cur = x;
  long po = 0, so = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    long pc = layers_[i]->param_count();
    long sc = layers_[i]->state_count();
    ConstSpan lp = p.subspan(po, pc);
    Span ls = sc > 0 ? state.subspan(so, sc) : Span{};
    cur = layers_[i]->forward(cur, lp, ls, mode, ctx ? &ctx->layers[i] : nullptr);
    po += pc;
    so += sc;
  }
  return cur;
}

Tensor Net::backward(const Tensor& dy, ConstSpan p, FwdCtx& ctx, Span dp) const {
  check(ctx.layers.size() == layers_.size(), "Net: context mismatch");
  std::vector<long> po(layers_.size());
  long acc = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    po[i] = acc;
    acc += layers_[i]->param_count();
  }
  Tensor cur = dy;
  for (std::size_t ri = layers_.size(); ri-- > 0;) {
    long pc = layers_[ri]->param_count();
    ConstSpan lp = p.subspan(po[ri], pc);
    Span ldp = pc > 0 ? dp.subspan(po[ri], pc) : Span{};
    check(ctx.layers[ri] != nullptr, "Net: backward without saved context");
    cur = layers_[ri]->backward(cur, lp, *ctx.layers[ri], ldp);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Residual blocks

namespace {
struct ResCtx : Ctx {
  Net::FwdCtx main_ctx;
  Net::FwdCtx proj_ctx;
  Tensor sum;  // pre-activation sum (classifier block only)
};
}  // namespace

ClassifierResBlock::ClassifierResBlock(std::string name, int in_c, int out_c, int stride)
    : Layer(std::move(name)),
      in_c_(in_c),
      out_c_(out_c),
      stride_(stride),
      has_proj_(stride != 1 || in_c != out_c) {
  main_.emplace<Conv2d>("conv1", in_c, out_c, 3, stride, 1);
  main_.emplace<BatchNorm2d>("bn1", out_c);
  main_.emplace<ReLU>("relu1");
  main_.emplace<Conv2d>("conv2", out_c, out_c, 3, 1, 1);
  main_.emplace<BatchNorm2d>("bn2", out_c);
  if (has_proj_) {
    proj_.emplace<Conv2d>("proj_conv", in_c, out_c, 1, stride, 0);
    proj_.emplace<BatchNorm2d>("proj_bn", out_c);
  }
}

Shape ClassifierResBlock::out_shape(const Shape& in) const {
  check(in.c == in_c_, name() + ": channel mismatch");
  return Shape{in.n, out_c_, (in.h + stride_ - 1) / stride_, (in.w + stride_ - 1) / stride_};
}

long ClassifierResBlock::param_count() const {
  return main_.param_count() + (has_proj_ ? proj_.param_count() : 0);
}

long ClassifierResBlock::state_count() const {
  return main_.state_count() + (has_proj_ ? proj_.state_count() : 0);
}

std::vector<NamedShape> ClassifierResBlock::param_tensors() const {
  auto out = main_.param_tensors(name() + ".");
  if (has_proj_) {
    auto p = proj_.param_tensors(name() + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<NamedShape> ClassifierResBlock::state_tensors() const {
  auto out = main_.state_tensors(name() + ".");
  if (has_proj_) {
    auto p = proj_.state_tensors(name() + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void ClassifierResBlock::init_params(Span p, Rng& rng) const {
  main_.init(p.subspan(0, main_.param_count()), Span{}, rng.next_u64());
  if (has_proj_)
    proj_.init(p.subspan(main_.param_count(), proj_.param_count()), Span{}, rng.next_u64());
}

void ClassifierResBlock::init_state(Span s) const {
  // Delegate through the nets' layer-wise init (dummy param buffers discarded).
  long ms = main_.state_count();
  if (ms > 0) {
    std::vector<Scalar> mp(static_cast<std::size_t>(main_.param_count()));
    main_.init(Span(mp), s.subspan(0, ms), 0);
  }
  if (has_proj_ && proj_.state_count() > 0) {
    std::vector<Scalar> pp(static_cast<std::size_t>(proj_.param_count()));
    proj_.init(Span(pp), s.subspan(ms, proj_.state_count()), 0);
  }
}

Tensor ClassifierResBlock::forward(const Tensor& x, ConstSpan p, Span state, Mode mode,
                                   CtxPtr* ctx) const {
  auto c = std::make_unique<ResCtx>();
  ConstSpan mp = p.subspan(0, main_.param_count());
  Span ms = main_.state_count() > 0 ? state.subspan(0, main_.state_count()) : Span{};
  Tensor h = main_.forward(x, mp, ms, mode, ctx ? &c->main_ctx : nullptr);
  Tensor skip;
  if (has_proj_) {
    ConstSpan pp = p.subspan(main_.param_count(), proj_.param_count());
    Span ps = proj_.state_count() > 0
                  ? state.subspan(main_.state_count(), proj_.state_count())
                  : Span{};
    skip = proj_.forward(x, pp, ps, mode, ctx ? &c->proj_ctx : nullptr);
  } else {
    skip = x;
  }
  Tensor y(h.shape());
  for (long i = 0; i < h.count(); ++i) {
    Scalar s = h.data()[i] + skip.data()[i];
    y.data()[i] = s > 0 ? s : 0.0;
  }
  if (ctx) {
    c->sum = Tensor(h.shape());
    for (long i = 0; i < h.count(); ++i) c->sum.data()[i] = h.data()[i] + skip.data()[i];
    *ctx = std::move(c);
  }
  return y;
}

Tensor ClassifierResBlock::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  auto& c = static_cast<ResCtx&>(ctx);
  Tensor dsum(dy.shape());
  for (long i = 0; i < dy.count(); ++i)
    dsum.data()[i] = c.sum.data()[i] > 0 ? dy.data()[i] : 0.0;
  ConstSpan mp = p.subspan(0, main_.param_count());
  Span mdp = dp.subspan(0, main_.param_count());
  Tensor dx = main_.backward(dsum, mp, c.main_ctx, mdp);
  if (has_proj_) {
    ConstSpan pp = p.subspan(main_.param_count(), proj_.param_count());
    Span pdp = dp.subspan(main_.param_count(), proj_.param_count());
    Tensor dskip = proj_.backward(dsum, pp, c.proj_ctx, pdp);
    for (long i = 0; i < dx.count(); ++i) dx.data()[i] += dskip.data()[i];
  } else {
    for (long i = 0; i < dx.count(); ++i) dx.data()[i] += dsum.data()[i];
  }
  return dx;
}

GenResBlock::GenResBlock(std::string name, int channels) : Layer(std::move(name)) {
  main_.emplace<Conv2d>("conv1", channels, channels, 3, 1, 1);
  main_.emplace<InstanceNorm2d>("in1", channels);
  main_.emplace<ReLU>("relu1");
  main_.emplace<Conv2d>("conv2", channels, channels, 3, 1, 1);
  main_.emplace<InstanceNorm2d>("in2", channels);
}

std::vector<NamedShape> GenResBlock::param_tensors() const {
  return main_.param_tensors(name() + ".");
}

void GenResBlock::init_params(Span p, Rng& rng) const {
  main_.init(p, Span{}, rng.next_u64());
}

Tensor GenResBlock::forward(const Tensor& x, ConstSpan p, Span, Mode mode, CtxPtr* ctx) const {
  auto c = std::make_unique<ResCtx>();
  Tensor h = main_.forward(x, p, Span{}, mode, ctx ? &c->main_ctx : nullptr);
  Tensor y(h.shape());
  for (long i = 0; i < h.count(); ++i) y.data()[i] = h.data()[i] + x.data()[i];
  if (ctx) *ctx = std::move(c);
  return y;
}

Tensor GenResBlock::backward(const Tensor& dy, ConstSpan p, Ctx& ctx, Span dp) const {
  auto& c = static_cast<ResCtx&>(ctx);
  Tensor dx = main_.backward(dy, p, c.main_ctx, dp);
  for (long i = 0; i < dx.count(); ++i) dx.data()[i] += dy.data()[i];
  return dx;
}

// ---------------------------------------------------------------------------

Tensor instance_normalize(const Tensor& x, Scalar eps, ConstSpan gain, ConstSpan bias) {
  check(eps > 0, "instance_normalize: eps must be positive");
  check(static_cast<int>(gain.size()) == x.shape().c &&
            static_cast<int>(bias.size()) == x.shape().c,
        "instance_normalize: affine parameter size mismatch");
  InstanceNorm2d layer("in", x.shape().c, eps);
  std::vector<Scalar> p(static_cast<std::size_t>(2) * x.shape().c);
  for (int i = 0; i < x.shape().c; ++i) {
    p[i] = gain[i];
    p[x.shape().c + i] = bias[i];
  }
  return layer.forward(x, ConstSpan(p), Span{}, Mode::kEval, nullptr);
}

}  // namespace nn
}  // namespace ipreid
