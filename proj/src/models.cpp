#include "ipreid/models.hpp"

#include <cstring>

namespace ipreid {

namespace {

nlohmann::json shape_json(const Shape& s) {
  return nlohmann::json::array({s.n, s.c, s.h, s.w});
}

nlohmann::json tensor_table_json(const std::vector<nn::NamedShape>& table) {
  nlohmann::json out = nlohmann::json::array();
  long offset = 0;
  for (const auto& t : table) {
    out.push_back({{"name", t.name},
                   {"shape", shape_json(t.shape)},
                   {"offset", offset},
                   {"count", t.shape.count()}});
    offset += t.shape.count();
  }
  return out;
}

}  // namespace

void put_model(Archive& a, const std::string& key, const ModelParams& m,
               const std::vector<nn::NamedShape>& param_table,
               const std::vector<nn::NamedShape>& state_table) {
  nlohmann::json entry;
  entry["arch"] = m.arch;
  entry["config"] = m.config;
  entry["param_tensors"] = tensor_table_json(param_table);
  entry["state_tensors"] = tensor_table_json(state_table);
  a.meta["models"][key] = entry;
  a.add_blob(key + ".params", m.params);
  a.add_blob(key + ".state", m.state);
}

ModelParams get_model(const Archive& a, const std::string& key) {
  check(a.meta.contains("models") && a.meta["models"].contains(key),
        "archive has no model '" + key + "'");
  const auto& entry = a.meta["models"][key];
  ModelParams m;
  m.arch = entry.at("arch").get<std::string>();
  m.config = entry.at("config");
  m.params = a.blob(key + ".params");
  m.state = a.blob(key + ".state");
  return m;
}

void save_model(const ModelParams& m, const std::filesystem::path& path) {
  Archive a;
  a.meta["kind"] = "model";
  std::vector<nn::NamedShape> ptable, stable;
  if (m.arch == "generator") {
    ptable = Generator::from_params(m).param_table();
  } else if (m.arch == "domain_discriminator") {
    ptable = DomainDiscriminator::from_params(m).param_table();
  } else if (m.arch == "reid") {
    ReIDNet net = ReIDNet::from_params(m);
    ptable = net.param_table();
    stable = net.state_table();
  } else {
    throw IoError("save_model: unknown arch '" + m.arch + "'");
  }
  put_model(a, "model", m, ptable, stable);
  a.save(path);
}

ModelParams load_model(const std::filesystem::path& path) {
  Archive a = Archive::load(path);
  return get_model(a, "model");
}

// ---------------------------------------------------------------------------
// Generator

void GeneratorConfig::validate() const {
  check_config(base_channels >= 1, "generator: base_channels must be positive");
  check_config(num_res_blocks >= 1, "generator: num_res_blocks must be positive");
  check_config(channels >= 1 && height >= 4 && width >= 4,
               "generator: invalid input size");
  check_config(height % 4 == 0 && width % 4 == 0,
               "generator: input size must be divisible by 4 (two stride-2 stages)");
  check_config(num_domains >= 2, "generator: need at least 2 domains");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"base_channels", base_channels}, {"num_res_blocks", num_res_blocks},
          {"height", height},               {"width", width},
          {"channels", channels},           {"num_domains", num_domains}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.num_res_blocks = j.at("num_res_blocks").get<int>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_domains = j.at("num_domains").get<int>();
  c.validate();
  return c;
}

Generator::Generator(GeneratorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_channels;
  const int in_c = cfg_.channels + cfg_.num_domains;
  net_.emplace<nn::Conv2d>("stem", in_c, b, 7, 1, 3);
  net_.emplace<nn::InstanceNorm2d>("stem_in", b);
  net_.emplace<nn::ReLU>("stem_relu");
  net_.emplace<nn::Conv2d>("down1", b, 2 * b, 4, 2, 1);
  net_.emplace<nn::InstanceNorm2d>("down1_in", 2 * b);
  net_.emplace<nn::ReLU>("down1_relu");
  net_.emplace<nn::Conv2d>("down2", 2 * b, 4 * b, 4, 2, 1);
  net_.emplace<nn::InstanceNorm2d>("down2_in", 4 * b);
  net_.emplace<nn::ReLU>("down2_relu");
  for (int i = 0; i < cfg_.num_res_blocks; ++i) {
    net_.emplace<nn::GenResBlock>("res" + std::to_string(i + 1), 4 * b);
  }
  net_.emplace<nn::ConvTranspose2d>("up1", 4 * b, 2 * b, 4, 2, 1);
  net_.emplace<nn::InstanceNorm2d>("up1_in", 2 * b);
  net_.emplace<nn::ReLU>("up1_relu");
  net_.emplace<nn::ConvTranspose2d>("up2", 2 * b, b, 4, 2, 1);
  net_.emplace<nn::InstanceNorm2d>("up2_in", b);
  net_.emplace<nn::ReLU>("up2_relu");
  net_.emplace<nn::Conv2d>("out", b, cfg_.channels, 7, 1, 3);
  net_.emplace<nn::Tanh>("out_tanh");
}

ModelParams Generator::init_params(std::uint64_t seed) const {
  ModelParams m;
  m.arch = "generator";
  m.config = cfg_.to_json();
  m.params.resize(static_cast<std::size_t>(net_.param_count()));
  m.state.resize(static_cast<std::size_t>(net_.state_count()));
  net_.init(Span(m.params), Span(m.state), seed);
  return m;
}

Tensor Generator::forward(const Tensor& x, const std::vector<int>& domains,
                          const ModelParams& m, nn::Net::FwdCtx* ctx) const {
  const Shape& s = x.shape();
  check(s.c == cfg_.channels && s.h == cfg_.height && s.w == cfg_.width,
        "generator: input shape " + s.str() + " does not match configured " +
            std::to_string(cfg_.channels) + "x" + std::to_string(cfg_.height) + "x" +
            std::to_string(cfg_.width));
  check(static_cast<int>(domains.size()) == s.n,
        "generator: one domain label required per sample");
  for (int d : domains) {
    check(d >= 0 && d < cfg_.num_domains,
          "generator: domain index " + std::to_string(d) + " out of range [0, " +
              std::to_string(cfg_.num_domains) + ")");
  }
  Tensor cond(Shape{s.n, s.c + cfg_.num_domains, s.h, s.w});
  const long hw = static_cast<long>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(cond.sample(n), x.sample(n),
                sizeof(Scalar) * static_cast<std::size_t>(s.per_sample()));
    Scalar* dom_planes = cond.sample(n) + s.per_sample();
    for (int d = 0; d < cfg_.num_domains; ++d) {
      Scalar v = (d == domains[static_cast<std::size_t>(n)]) ? 1.0 : 0.0;
      for (long i = 0; i < hw; ++i) dom_planes[static_cast<long>(d) * hw + i] = v;
    }
  }
  return net_.forward(cond, ConstSpan(m.params), Span{}, nn::Mode::kTrain, ctx);
}

Tensor Generator::backward(const Tensor& dy, const ModelParams& m, nn::Net::FwdCtx& ctx,
                           Span dp) const {
  Tensor dcond = net_.backward(dy, ConstSpan(m.params), ctx, dp);
  const Shape& s = dcond.shape();
  Tensor dx(Shape{s.n, cfg_.channels, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(dx.sample(n), dcond.sample(n),
                sizeof(Scalar) * static_cast<std::size_t>(dx.shape().per_sample()));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// DomainDiscriminator

void DomainDiscriminatorConfig::validate() const {
  check_config(base_channels >= 1, "discriminator: base_channels must be positive");
  check_config(num_layers >= 1, "discriminator: need at least one layer");
  check_config(leaky_slope >= 0, "discriminator: negative slope must be >= 0");
  check_config(num_domains >= 2, "discriminator: need at least 2 domains");
  check_config((height >> num_layers) >= 1 && (width >> num_layers) >= 1,
               "discriminator: too many down-sampling layers for input size");
}

nlohmann::json DomainDiscriminatorConfig::to_json() const {
  return {{"base_channels", base_channels}, {"num_layers", num_layers},
          {"leaky_slope", leaky_slope},     {"height", height},
          {"width", width},                 {"channels", channels},
          {"num_domains", num_domains}};
}

DomainDiscriminatorConfig DomainDiscriminatorConfig::from_json(const nlohmann::json& j) {
  DomainDiscriminatorConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.leaky_slope = j.at("leaky_slope").get<Scalar>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.num_domains = j.at("num_domains").get<int>();
  c.validate();
  return c;
}

DomainDiscriminator::DomainDiscriminator(DomainDiscriminatorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  int in_c = cfg_.channels;
  for (int i = 0; i < cfg_.num_layers; ++i) {
    int out_c = cfg_.base_channels << i;
    std::string idx = std::to_string(i + 1);
    trunk_.emplace<nn::Conv2d>("conv" + idx, in_c, out_c, 4, 2, 1);
    trunk_.emplace<nn::LeakyReLU>("lrelu" + idx, cfg_.leaky_slope);
    in_c = out_c;
  }
  trunk_out_ = trunk_.out_shape(Shape{1, cfg_.channels, cfg_.height, cfg_.width});
  adv_head_.emplace<nn::Conv2d>("adv", in_c, 1, 3, 1, 1);
  dom_head_.emplace<nn::Flatten>("dom_flat");
  dom_head_.emplace<nn::Linear>("dom_fc",
                                static_cast<int>(trunk_out_.per_sample()),
                                cfg_.num_domains);
}

long DomainDiscriminator::param_count() const {
  return trunk_.param_count() + adv_head_.param_count() + dom_head_.param_count();
}

std::vector<nn::NamedShape> DomainDiscriminator::param_table() const {
  auto out = trunk_.param_tensors();
  auto a = adv_head_.param_tensors();
  auto d = dom_head_.param_tensors();
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

ModelParams DomainDiscriminator::init_params(std::uint64_t seed) const {
  ModelParams m;
  m.arch = "domain_discriminator";
  m.config = cfg_.to_json();
  m.params.resize(static_cast<std::size_t>(param_count()));
  Span p(m.params);
  trunk_.init(p.subspan(0, trunk_.param_count()), Span{}, mix_seed(seed, 1));
  adv_head_.init(p.subspan(trunk_.param_count(), adv_head_.param_count()), Span{},
                 mix_seed(seed, 2));
  dom_head_.init(
      p.subspan(trunk_.param_count() + adv_head_.param_count(), dom_head_.param_count()),
      Span{}, mix_seed(seed, 3));
  return m;
}

ConstSpan DomainDiscriminator::trunk_p(const ModelParams& m) const {
  return ConstSpan(m.params).subspan(0, trunk_.param_count());
}
ConstSpan DomainDiscriminator::adv_p(const ModelParams& m) const {
  return ConstSpan(m.params).subspan(trunk_.param_count(), adv_head_.param_count());
}
ConstSpan DomainDiscriminator::dom_p(const ModelParams& m) const {
  return ConstSpan(m.params).subspan(trunk_.param_count() + adv_head_.param_count(),
                                     dom_head_.param_count());
}

Shape DomainDiscriminator::adv_map_shape(int batch) const {
  return Shape{batch, 1, trunk_out_.h, trunk_out_.w};
}

DiscriminatorOut DomainDiscriminator::forward(const Tensor& x, const ModelParams& m,
                                              FwdCtx* ctx) const {
  const Shape& s = x.shape();
  check(s.c == cfg_.channels && s.h == cfg_.height && s.w == cfg_.width,
        "discriminator: input shape " + s.str() + " does not match configured size");
  Tensor t = trunk_.forward(x, trunk_p(m), Span{}, nn::Mode::kTrain,
                            ctx ? &ctx->trunk : nullptr);
  DiscriminatorOut out;
  out.adv_map =
      adv_head_.forward(t, adv_p(m), Span{}, nn::Mode::kTrain, ctx ? &ctx->adv : nullptr);
  out.domain_logits =
      dom_head_.forward(t, dom_p(m), Span{}, nn::Mode::kTrain, ctx ? &ctx->dom : nullptr);
  return out;
}

Tensor DomainDiscriminator::backward(const Tensor& d_adv, const Tensor& d_dom,
                                     const ModelParams& m, FwdCtx& ctx, Span dp) const {
  Span trunk_dp = dp.subspan(0, trunk_.param_count());
  Span adv_dp = dp.subspan(trunk_.param_count(), adv_head_.param_count());
  Span dom_dp = dp.subspan(trunk_.param_count() + adv_head_.param_count(),
                           dom_head_.param_count());
  Tensor dt = adv_head_.backward(d_adv, adv_p(m), ctx.adv, adv_dp);
  Tensor dt2 = dom_head_.backward(d_dom, dom_p(m), ctx.dom, dom_dp);
  for (long i = 0; i < dt.count(); ++i) dt.data()[i] += dt2.data()[i];
  return trunk_.backward(dt, trunk_p(m), ctx.trunk, trunk_dp);
}

// ---------------------------------------------------------------------------
// ReIDNet

void ReIDConfig::validate() const {
  check_config(!stage_channels.empty(), "reid: stage_channels must be non-empty");
  for (int c : stage_channels)
    check_config(c >= 1, "reid: stage channel widths must be positive");
  check_config(blocks_per_stage.size() == stage_channels.size(),
               "reid: blocks_per_stage must match stage_channels in length");
  for (int b : blocks_per_stage)
    check_config(b >= 1, "reid: blocks per stage must be positive");
  check_config(embedding_dim >= 1, "reid: embedding_dim must be positive");
  check_config(num_classes >= 1, "reid: num_classes must be positive");
  check_config(channels >= 1 && height >= 2 && width >= 2, "reid: invalid input size");
  check_config(feature_source == "embedding" || feature_source == "backbone_pool",
               "reid: feature_source must be 'embedding' or 'backbone_pool'");
  check_config(vocabulary.empty() ||
                   static_cast<int>(vocabulary.size()) == num_classes,
               "reid: vocabulary size must equal num_classes");
  int down = static_cast<int>(stage_channels.size()) - 1;
  check_config((height >> down) >= 1 && (width >> down) >= 1,
               "reid: too many stages for input size");
}

nlohmann::json ReIDConfig::to_json() const {
  return {{"stage_channels", stage_channels},
          {"blocks_per_stage", blocks_per_stage},
          {"embedding_dim", embedding_dim},
          {"num_classes", num_classes},
          {"use_ibn", use_ibn},
          {"height", height},
          {"width", width},
          {"channels", channels},
          {"feature_source", feature_source},
          {"vocabulary", vocabulary}};
}

ReIDConfig ReIDConfig::from_json(const nlohmann::json& j) {
  ReIDConfig c;
  c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.use_ibn = j.at("use_ibn").get<bool>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.feature_source = j.at("feature_source").get<std::string>();
  c.vocabulary = j.value("vocabulary", std::vector<int>{});
  c.validate();
  return c;
}

ReIDNet::ReIDNet(ReIDConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& ch = cfg_.stage_channels;
  backbone_.emplace<nn::Conv2d>("stem", cfg_.channels, ch[0], 3, 1, 1);
  backbone_.emplace<nn::BatchNorm2d>("stem_bn", ch[0]);
  backbone_.emplace<nn::ReLU>("stem_relu");
  if (cfg_.use_ibn) backbone_.emplace<nn::InstanceNorm2d>("stem_in", ch[0]);
  int prev = ch[0];
  for (std::size_t i = 0; i < ch.size(); ++i) {
    int stride = (i == 0) ? 1 : 2;
    std::string name = "stage" + std::to_string(i + 1);
    backbone_.emplace<nn::ClassifierResBlock>(name + "_b1", prev, ch[i], stride);
    for (int b = 2; b <= cfg_.blocks_per_stage[i]; ++b) {
      backbone_.emplace<nn::ClassifierResBlock>(name + "_b" + std::to_string(b), ch[i],
                                                ch[i], 1);
    }
    if (cfg_.use_ibn && i < 2) backbone_.emplace<nn::InstanceNorm2d>(name + "_in", ch[i]);
    prev = ch[i];
  }
  backbone_.emplace<nn::GlobalAvgPool>("pool");
  neck_.emplace<nn::Flatten>("flat");
  neck_.emplace<nn::Linear>("fc_embed", prev, cfg_.embedding_dim);
  head_.emplace<nn::Linear>("fc_class", cfg_.embedding_dim, cfg_.num_classes);
}

ModelParams ReIDNet::init_params(std::uint64_t seed) const {
  ModelParams m;
  m.arch = "reid";
  m.config = cfg_.to_json();
  m.params.resize(static_cast<std::size_t>(param_count()));
  m.state.resize(static_cast<std::size_t>(backbone_.state_count()));
  Span p(m.params);
  long bo = backbone_.param_count();
  long no = neck_.param_count();
  backbone_.init(p.subspan(0, bo), Span(m.state), mix_seed(seed, 1));
  neck_.init(p.subspan(bo, no), Span{}, mix_seed(seed, 2));
  head_.init(p.subspan(bo + no, head_.param_count()), Span{}, mix_seed(seed, 3));
  return m;
}

std::vector<nn::NamedShape> ReIDNet::param_table() const {
  auto out = backbone_.param_tensors();
  auto n = neck_.param_tensors();
  auto h = head_.param_tensors();
  out.insert(out.end(), n.begin(), n.end());
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<nn::NamedShape> ReIDNet::state_table() const {
  return backbone_.state_tensors();
}

ReIDOut ReIDNet::run(const Tensor& x, ConstSpan params, Span state, nn::Mode mode,
                     FwdCtx* ctx) const {
  const Shape& s = x.shape();
  check(s.c == cfg_.channels && s.h == cfg_.height && s.w == cfg_.width,
        "reid: input shape " + s.str() + " does not match configured size");
  if (mode == nn::Mode::kTrain)
    check(s.n >= 2, "reid: train mode requires batch size >= 2");
  const long bo = backbone_.param_count();
  const long no = neck_.param_count();
  ReIDOut out;
  out.backbone_pool = backbone_.forward(x, params.subspan(0, bo), state, mode,
                                        ctx ? &ctx->backbone : nullptr);
  out.embedding = neck_.forward(out.backbone_pool, params.subspan(bo, no), Span{}, mode,
                                ctx ? &ctx->neck : nullptr);
  out.logits = head_.forward(out.embedding, params.subspan(bo + no, head_.param_count()),
                             Span{}, mode, ctx ? &ctx->head : nullptr);
  return out;
}

ReIDOut ReIDNet::forward(const Tensor& x, ModelParams& m, nn::Mode mode,
                         FwdCtx* ctx) const {
  return run(x, ConstSpan(m.params), Span(m.state), mode, ctx);
}

ReIDOut ReIDNet::forward_eval(const Tensor& x, const ModelParams& m, FwdCtx* ctx) const {
  // Eval mode never writes running statistics.
  auto& state = const_cast<std::vector<Scalar>&>(m.state);
  return run(x, ConstSpan(m.params), Span(state), nn::Mode::kEval, ctx);
}

Tensor ReIDNet::backward(const Tensor& d_logits, const ModelParams& m, FwdCtx& ctx,
                         Span dp, const Tensor* d_embedding) const {
  const long bo = backbone_.param_count();
  const long no = neck_.param_count();
  ConstSpan p(m.params);
  Tensor d_emb = head_.backward(d_logits, p.subspan(bo + no, head_.param_count()),
                                ctx.head, dp.subspan(bo + no, head_.param_count()));
  if (d_embedding) {
    check(d_embedding->shape() == d_emb.shape(), "reid: d_embedding shape mismatch");
    for (long i = 0; i < d_emb.count(); ++i) d_emb.data()[i] += d_embedding->data()[i];
  }
  Tensor d_pool = neck_.backward(d_emb, p.subspan(bo, no), ctx.neck, dp.subspan(bo, no));
  return backbone_.backward(d_pool, p.subspan(0, bo), ctx.backbone, dp.subspan(0, bo));
}

Tensor semantic_discriminator_forward(const ReIDNet& net, const ModelParams& m,
                                      const Tensor& x, ReIDNet::FwdCtx* ctx) {
  return net.forward_eval(x, m, ctx).logits;
}

}  // namespace ipreid
