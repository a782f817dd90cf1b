#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "ipreid/models.hpp"
#include "test_util.hpp"

using namespace ipreid;
using namespace ipreid::testutil;

namespace {

GeneratorConfig desk_gen(int num_domains) {
  GeneratorConfig g;
  g.base_channels = 8;
  g.num_res_blocks = 2;
  g.height = 32;
  g.width = 16;
  g.channels = 3;
  g.num_domains = num_domains;
  return g;
}

DomainDiscriminatorConfig desk_dis(int num_domains) {
  DomainDiscriminatorConfig d;
  d.base_channels = 8;
  d.num_layers = 3;
  d.height = 32;
  d.width = 16;
  d.channels = 3;
  d.num_domains = num_domains;
  return d;
}

ReIDConfig desk_reid(int n_classes) {
  ReIDConfig r;
  r.stage_channels = {8, 12, 16, 24};
  r.blocks_per_stage = {1, 1, 1, 1};
  r.embedding_dim = 32;
  r.num_classes = n_classes;
  r.height = 32;
  r.width = 16;
  r.channels = 3;
  return r;
}

}  // namespace

TEST_CASE("domain label invariants") {
  auto d = DomainLabel::from_index(2, 5);
  auto oh = d.one_hot();
  CHECK(oh.size() == 5);
  CHECK(oh[2] == 1.0);
  CHECK(DomainLabel::from_one_hot(oh).index == 2);
  CHECK_THROWS_AS(DomainLabel::from_index(5, 5), std::runtime_error);
  CHECK_THROWS_AS(DomainLabel::from_one_hot({1.0, 1.0, 0.0}), std::runtime_error);
  CHECK_THROWS_AS(DomainLabel::from_one_hot({0.0, 0.5, 0.5}), std::runtime_error);
  CHECK_THROWS_AS(DomainLabel::from_one_hot({0.0, 0.0}), std::runtime_error);
}

TEST_CASE("generator output shape, range and determinism") {
  Generator gen(desk_gen(5));
  ModelParams p = gen.init_params(42);
  Rng rng(1);
  Tensor x = random_tensor(Shape{2, 3, 32, 16}, rng);
  Tensor y1 = gen.forward(x, {0, 3}, p);
  CHECK(y1.shape() == x.shape());
  for (long i = 0; i < y1.count(); ++i) CHECK(std::abs(y1.data()[i]) <= 1.0);
  Tensor y2 = gen.forward(x, {0, 3}, p);
  for (long i = 0; i < y1.count(); ++i) CHECK(y1.data()[i] == y2.data()[i]);

  CHECK_THROWS_WITH_AS(gen.forward(x, {0, 5}, p), doctest::Contains("out of range"),
                       std::runtime_error);
  Tensor bad = random_tensor(Shape{1, 3, 16, 16}, rng);
  CHECK_THROWS_AS(gen.forward(bad, {0}, p), std::runtime_error);
  CHECK_THROWS_AS(gen.forward(x, {0}, p), std::runtime_error);  // one label per sample
}

TEST_CASE("generator conditioning channel count and param determinism") {
  Generator gen(desk_gen(5));
  // input channels = image channels + (L+1): verify via the first conv tensor
  auto table = gen.param_table();
  CHECK(table.front().name == "stem.weight");
  CHECK(table.front().shape.c == 3 + 5);

  ModelParams a = gen.init_params(123);
  ModelParams b = gen.init_params(123);
  CHECK(a.params == b.params);
  ModelParams c = gen.init_params(124);
  CHECK(a.params != c.params);
}

TEST_CASE("discriminator output shapes and determinism") {
  DomainDiscriminator dis(desk_dis(5));
  ModelParams p = dis.init_params(7);
  Rng rng(2);
  Tensor x = random_tensor(Shape{2, 3, 32, 16}, rng);
  DiscriminatorOut out = dis.forward(x, p);
  // 32x16 input through 3 stride-2 layers -> 4x2 patch grid
  CHECK(out.adv_map.shape() == Shape{2, 1, 4, 2});
  CHECK(out.domain_logits.shape() == Shape{2, 5, 1, 1});
  DiscriminatorOut out2 = dis.forward(x, p);
  CHECK(out.adv_map.vec() == out2.adv_map.vec());
  CHECK(out.domain_logits.vec() == out2.domain_logits.vec());

  Tensor bad = random_tensor(Shape{1, 3, 8, 8}, rng);
  CHECK_THROWS_AS(dis.forward(bad, p), std::runtime_error);
}

TEST_CASE("reid forward contracts") {
  ReIDNet net(desk_reid(20));
  ModelParams p = net.init_params(11);
  Rng rng(3);
  Tensor x = random_tensor(Shape{4, 3, 32, 16}, rng);
  ReIDOut out = net.forward(x, p, nn::Mode::kTrain);
  CHECK(out.logits.shape() == Shape{4, 20, 1, 1});
  CHECK(out.embedding.shape() == Shape{4, 32, 1, 1});
  CHECK(out.backbone_pool.shape() == Shape{4, 24, 1, 1});

  Tensor single = random_tensor(Shape{1, 3, 32, 16}, rng);
  CHECK_THROWS_WITH_AS(net.forward(single, p, nn::Mode::kTrain),
                       doctest::Contains("batch size >= 2"), std::runtime_error);

  // eval embedding is batch-composition independent
  Tensor batch(Shape{3, 3, 32, 16});
  batch.set_sample(0, single, 0);
  Tensor others = random_tensor(Shape{2, 3, 32, 16}, rng);
  batch.set_sample(1, others, 0);
  batch.set_sample(2, others, 1);
  ReIDOut alone = net.forward_eval(single, p);
  ReIDOut inbatch = net.forward_eval(batch, p);
  for (int d = 0; d < 32; ++d)
    CHECK(std::abs(alone.embedding.at(0, d, 0, 0) - inbatch.embedding.at(0, d, 0, 0)) <
          1e-6);
}

TEST_CASE("softmax of semantic logits is normalized") {
  ReIDNet net(desk_reid(13));
  ModelParams p = net.init_params(5);
  Rng rng(4);
  Tensor x = random_tensor(Shape{1, 3, 32, 16}, rng);
  Tensor logits = semantic_discriminator_forward(net, p, x);
  double m = logits.data()[0];
  for (int k = 1; k < 13; ++k) m = std::max(m, logits.data()[k]);
  double sum = 0;
  for (int k = 0; k < 13; ++k) sum += std::exp(logits.data()[k] - m);
  double total = 0;
  for (int k = 0; k < 13; ++k) total += std::exp(logits.data()[k] - m) / sum;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ibn variant differs only by the instance-norm parameters") {
  ReIDConfig base = desk_reid(10);
  ReIDConfig ibn = base;
  ibn.use_ibn = true;
  ReIDNet net_a(base), net_b(ibn);
  ModelParams pa = net_a.init_params(77);
  ModelParams pb = net_b.init_params(77);

  auto collect = [](const ReIDNet& n, const ModelParams& m) {
    std::map<std::string, std::vector<Scalar>> out;
    long off = 0;
    for (const auto& t : n.param_table()) {
      out[t.name] = std::vector<Scalar>(m.params.begin() + off,
                                        m.params.begin() + off + t.shape.count());
      off += t.shape.count();
    }
    return out;
  };
  auto ta = collect(net_a, pa);
  auto tb = collect(net_b, pb);

  std::set<std::string> only_b;
  for (const auto& [name, vals] : tb) {
    auto it = ta.find(name);
    if (it == ta.end()) {
      only_b.insert(name);
    } else {
      CHECK(it->second == vals);  // shared tensors identical under the same seed
    }
  }
  for (const auto& [name, _] : ta) CHECK(tb.count(name) == 1);
  CHECK(only_b == std::set<std::string>{"stem_in.gain", "stem_in.bias", "stage1_in.gain",
                                        "stage1_in.bias", "stage2_in.gain",
                                        "stage2_in.bias"});
}

TEST_CASE("exactly two fully connected layers in the classifier head") {
  ReIDNet net(desk_reid(9));
  int fc_count = 0;
  for (const auto& t : net.param_table()) {
    if (t.name.find("fc_") == 0 && t.name.find(".weight") != std::string::npos)
      ++fc_count;
  }
  CHECK(fc_count == 2);
}

TEST_CASE("checkpoint round trip preserves bytes and content") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ipreid_test_models";
  fs::create_directories(dir);

  ReIDNet net(desk_reid(6));
  ModelParams p = net.init_params(3);
  p.config["vocabulary"] = std::vector<int>{3, 5, 7, 9, 11, 13};
  save_model(p, dir / "a.ipar");
  ModelParams q = load_model(dir / "a.ipar");
  CHECK(q.arch == p.arch);
  CHECK(q.params == p.params);
  CHECK(q.state == p.state);
  CHECK(q.config == p.config);

  // identical content serializes to identical bytes
  save_model(q, dir / "b.ipar");
  std::ifstream fa(dir / "a.ipar", std::ios::binary);
  std::ifstream fb(dir / "b.ipar", std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);

  // future format version is rejected with a version message
  {
    std::string header = R"({"blobs":[],"format_version":99,"meta":{}})";
    std::ofstream f(dir / "future.ipar", std::ios::binary);
    f.write("IPARCH0\n", 8);
    std::uint64_t hlen = header.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
  }
  CHECK_THROWS_WITH_AS(load_model(dir / "future.ipar"),
                       doctest::Contains("version mismatch"), std::exception);
  fs::remove_all(dir);
}
