#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ipreid/nn.hpp"
#include "ipreid/rng.hpp"
#include "ipreid/tensor.hpp"

namespace ipreid::testutil {

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (long i = 0; i < t.count(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// ||a - b|| / max(||a||, ||b||, floor)
inline double rel_err(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

// central differences, step h
inline std::vector<Scalar> fd_grad(const std::function<double(ConstSpan)>& value,
                                   std::vector<Scalar> params, double h = 1e-4) {
  std::vector<Scalar> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double orig = params[i];
    params[i] = orig + h;
    double up = value(ConstSpan(params));
    params[i] = orig - h;
    double down = value(ConstSpan(params));
    params[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Small net wrapper with owned parameters/state for gradient checking.
struct TinyModel {
  nn::Net net;
  std::vector<Scalar> params, state;

  void init(std::uint64_t seed) {
    params.resize(static_cast<std::size_t>(net.param_count()));
    state.resize(static_cast<std::size_t>(net.state_count()));
    net.init(Span(params), Span(state), seed);
  }

  Tensor forward(const Tensor& x, nn::Net::FwdCtx* ctx, nn::Mode mode = nn::Mode::kEval) {
    return net.forward(x, ConstSpan(params), Span(state), mode, ctx);
  }

  Tensor forward_at(ConstSpan p, const Tensor& x, nn::Mode mode = nn::Mode::kEval) {
    std::vector<Scalar> st = state;  // keep stored state untouched
    return net.forward(x, p, Span(st), mode, nullptr);
  }
};

}  // namespace ipreid::testutil
