#include <doctest.h>

#include <cmath>

#include "ipreid/losses.hpp"
#include "ipreid/nn.hpp"
#include "test_util.hpp"

using namespace ipreid;
using namespace ipreid::testutil;

namespace {

// squared-sum readout turns any net output into a scalar loss
double readout(const Tensor& y) {
  double s = 0;
  for (long i = 0; i < y.count(); ++i) s += y.data()[i] * y.data()[i];
  return 0.5 * s;
}

Tensor readout_grad(const Tensor& y) { return y; }

// checks dL/dparams and dL/dx against central differences
void check_net_gradients(TinyModel& m, const Tensor& x, nn::Mode mode,
                         double tol = 1e-6) {
  nn::Net::FwdCtx ctx;
  std::vector<Scalar> state_before = m.state;
  Tensor y = m.net.forward(x, ConstSpan(m.params), Span(m.state), mode, &ctx);
  m.state = state_before;  // keep train-mode stats updates out of the check
  std::vector<Scalar> grads(m.params.size(), 0.0);
  Tensor dx = m.net.backward(readout_grad(y), ConstSpan(m.params), ctx, Span(grads));

  auto value_p = [&](ConstSpan p) { return readout(m.forward_at(p, x, mode)); };
  auto fd_p = fd_grad(value_p, m.params);
  CHECK(rel_err(grads, fd_p) < tol);

  auto value_x = [&](ConstSpan px) {
    Tensor xx = x;
    std::copy(px.begin(), px.end(), xx.vec().begin());
    return readout(m.forward_at(ConstSpan(m.params), xx, mode));
  };
  auto fd_x = fd_grad(value_x, x.vec());
  CHECK(rel_err(dx.vec(), fd_x) < tol);
}

}  // namespace

TEST_CASE("conv2d gradients") {
  TinyModel m;
  m.net.emplace<nn::Conv2d>("c1", 2, 3, 3, 1, 1);
  m.net.emplace<nn::Conv2d>("c2", 3, 2, 3, 2, 1);
  m.init(7);
  Rng rng(1);
  Tensor x = random_tensor(Shape{2, 2, 6, 4}, rng);
  check_net_gradients(m, x, nn::Mode::kEval);
}

TEST_CASE("conv transpose gradients and shape") {
  nn::ConvTranspose2d up("up", 3, 2, 4, 2, 1);
  CHECK(up.out_shape(Shape{1, 3, 4, 2}) == Shape{1, 2, 8, 4});

  TinyModel m;
  m.net.emplace<nn::ConvTranspose2d>("up", 2, 3, 4, 2, 1);
  m.net.emplace<nn::Tanh>("t");
  m.init(9);
  Rng rng(2);
  Tensor x = random_tensor(Shape{2, 2, 3, 2}, rng);
  check_net_gradients(m, x, nn::Mode::kEval);
}

TEST_CASE("linear and flatten gradients") {
  TinyModel m;
  m.net.emplace<nn::Flatten>("f");
  m.net.emplace<nn::Linear>("fc1", 12, 5);
  m.net.emplace<nn::LeakyReLU>("lr", 0.01);
  m.net.emplace<nn::Linear>("fc2", 5, 3);
  m.init(11);
  Rng rng(3);
  Tensor x = random_tensor(Shape{3, 3, 2, 2}, rng);
  check_net_gradients(m, x, nn::Mode::kEval);
}

TEST_CASE("instance norm gradients") {
  TinyModel m;
  m.net.emplace<nn::Conv2d>("c", 2, 4, 3, 1, 1);
  m.net.emplace<nn::InstanceNorm2d>("in", 4);
  m.net.emplace<nn::ReLU>("r");
  m.init(13);
  Rng rng(4);
  Tensor x = random_tensor(Shape{2, 2, 4, 3}, rng);
  check_net_gradients(m, x, nn::Mode::kEval, 1e-5);
}

TEST_CASE("batch norm gradients in both modes") {
  TinyModel m;
  m.net.emplace<nn::Conv2d>("c", 2, 3, 3, 1, 1);
  m.net.emplace<nn::BatchNorm2d>("bn", 3);
  m.net.emplace<nn::ReLU>("r");
  m.init(17);
  Rng rng(5);
  Tensor x = random_tensor(Shape{3, 2, 4, 3}, rng);
  check_net_gradients(m, x, nn::Mode::kTrain, 1e-5);

  // park the running stats away from init so eval mode is non-trivial
  nn::Net::FwdCtx warm;
  m.net.forward(x, ConstSpan(m.params), Span(m.state), nn::Mode::kTrain, &warm);
  check_net_gradients(m, x, nn::Mode::kEval, 1e-5);
}

TEST_CASE("residual block gradients") {
  TinyModel m;
  m.net.emplace<nn::ClassifierResBlock>("rb1", 2, 4, 2);
  m.net.emplace<nn::ClassifierResBlock>("rb2", 4, 4, 1);
  m.init(19);
  Rng rng(6);
  Tensor x = random_tensor(Shape{2, 2, 4, 4}, rng);
  check_net_gradients(m, x, nn::Mode::kTrain, 1e-5);

  TinyModel g;
  g.net.emplace<nn::GenResBlock>("gr", 3);
  g.init(23);
  Tensor xg = random_tensor(Shape{2, 3, 3, 3}, rng);
  check_net_gradients(g, xg, nn::Mode::kEval, 1e-5);
}

TEST_CASE("global average pool gradients") {
  TinyModel m;
  m.net.emplace<nn::GlobalAvgPool>("p");
  m.net.emplace<nn::Flatten>("f");
  m.net.emplace<nn::Linear>("fc", 3, 2);
  m.init(29);
  Rng rng(7);
  Tensor x = random_tensor(Shape{2, 3, 4, 2}, rng);
  check_net_gradients(m, x, nn::Mode::kEval);
}

TEST_CASE("instance_normalize closed forms") {
  std::vector<Scalar> gain = {1.0}, bias = {0.0};

  // constant channel: mean removed, variance zero
  Tensor c(Shape{1, 1, 2, 2}, 3.0);
  Tensor out = nn::instance_normalize(c, 1e-5, ConstSpan(gain), ConstSpan(bias));
  for (long i = 0; i < out.count(); ++i) CHECK(out.data()[i] == doctest::Approx(0.0));

  // two pixels {-1, 1}: already zero-mean unit-variance
  Tensor two(Shape{1, 1, 1, 2});
  two.data()[0] = -1.0;
  two.data()[1] = 1.0;
  out = nn::instance_normalize(two, 1e-12, ConstSpan(gain), ConstSpan(bias));
  CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-6));

  // normalized input is (nearly) a fixed point
  Rng rng(8);
  Tensor x(Shape{1, 1, 4, 4});
  double mean = 0, var = 0;
  for (long i = 0; i < x.count(); ++i) {
    x.data()[i] = rng.normal();
    mean += x.data()[i];
  }
  mean /= x.count();
  for (long i = 0; i < x.count(); ++i) {
    x.data()[i] -= mean;
    var += x.data()[i] * x.data()[i];
  }
  var /= x.count();
  for (long i = 0; i < x.count(); ++i) x.data()[i] /= std::sqrt(var);
  out = nn::instance_normalize(x, 1e-5, ConstSpan(gain), ConstSpan(bias));
  for (long i = 0; i < x.count(); ++i)
    CHECK(std::abs(out.data()[i] - x.data()[i]) < 1e-3);

  CHECK_THROWS_AS(nn::instance_normalize(x, 0.0, ConstSpan(gain), ConstSpan(bias)),
                  std::runtime_error);
}

TEST_CASE("instance normalization removes per-channel affine photometric shifts") {
  Rng rng(9);
  std::vector<Scalar> gain = {1.0, 1.0}, bias = {0.0, 0.0};
  for (int it = 0; it < 20; ++it) {
    Tensor x = random_tensor(Shape{2, 2, 5, 3}, rng);
    double a = rng.uniform(0.2, 3.0);
    double b = rng.uniform(-2.0, 2.0);
    Tensor shifted = x;
    for (long i = 0; i < x.count(); ++i) shifted.data()[i] = a * x.data()[i] + b;
    Tensor n1 = nn::instance_normalize(x, 1e-9, ConstSpan(gain), ConstSpan(bias));
    Tensor n2 = nn::instance_normalize(shifted, 1e-9, ConstSpan(gain), ConstSpan(bias));
    for (long i = 0; i < n1.count(); ++i)
      CHECK(std::abs(n1.data()[i] - n2.data()[i]) < 1e-5);
  }
}

TEST_CASE("batch norm eval output is independent of batch composition") {
  TinyModel m;
  m.net.emplace<nn::Conv2d>("c", 1, 2, 3, 1, 1);
  m.net.emplace<nn::BatchNorm2d>("bn", 2);
  m.init(31);
  Rng rng(10);
  // drift the running statistics first
  Tensor warmup = random_tensor(Shape{4, 1, 3, 3}, rng);
  m.net.forward(warmup, ConstSpan(m.params), Span(m.state), nn::Mode::kTrain, nullptr);

  Tensor one = random_tensor(Shape{1, 1, 3, 3}, rng);
  Tensor batch(Shape{3, 1, 3, 3});
  batch.set_sample(0, one, 0);
  Tensor other = random_tensor(Shape{2, 1, 3, 3}, rng);
  batch.set_sample(1, other, 0);
  batch.set_sample(2, other, 1);

  Tensor y_alone = m.forward(one, nullptr, nn::Mode::kEval);
  Tensor y_batch = m.forward(batch, nullptr, nn::Mode::kEval);
  for (long i = 0; i < y_alone.count(); ++i)
    CHECK(std::abs(y_alone.data()[i] - y_batch.data()[i]) < 1e-12);
}

TEST_CASE("batch norm train mode rejects single-value statistics") {
  TinyModel m;
  m.net.emplace<nn::BatchNorm2d>("bn", 2);
  m.init(37);
  Tensor x(Shape{1, 2, 1, 1}, 1.0);
  CHECK_THROWS_WITH_AS(m.forward(x, nullptr, nn::Mode::kTrain),
                       doctest::Contains("at least 2"), std::runtime_error);
}

TEST_CASE("layer init is keyed by name, not position") {
  nn::Net a, b;
  a.emplace<nn::Conv2d>("stem", 1, 2, 3, 1, 1);
  a.emplace<nn::Linear>("fc", 8, 2);
  b.emplace<nn::Conv2d>("stem", 1, 2, 3, 1, 1);
  b.emplace<nn::InstanceNorm2d>("extra_in", 2);
  b.emplace<nn::Linear>("fc", 8, 2);

  std::vector<Scalar> pa(static_cast<std::size_t>(a.param_count()));
  std::vector<Scalar> pb(static_cast<std::size_t>(b.param_count()));
  a.init(Span(pa), Span{}, 99);
  b.init(Span(pb), Span{}, 99);

  // shared layers get identical values despite the inserted layer
  long conv_n = 2 * 1 * 3 * 3 + 2;
  for (long i = 0; i < conv_n; ++i) CHECK(pa[i] == pb[i]);
  long fc_n = 2 * 8 + 2;
  for (long i = 0; i < fc_n; ++i)
    CHECK(pa[pa.size() - fc_n + i] == pb[pb.size() - fc_n + i]);
}
