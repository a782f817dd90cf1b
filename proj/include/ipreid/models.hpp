#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipreid/nn.hpp"
#include "ipreid/serialize.hpp"

namespace ipreid {

// Domain index over the L+1 domains: 0 = source, 1..L = target cameras.
struct DomainLabel {
  int index = 0;
  int num_domains = 0;

  static DomainLabel from_index(int index, int num_domains) {
    check(num_domains > 0, "DomainLabel: num_domains must be positive");
    check(index >= 0 && index < num_domains,
          "DomainLabel: index " + std::to_string(index) + " out of range [0, " +
              std::to_string(num_domains) + ")");
    return DomainLabel{index, num_domains};
  }

  static DomainLabel from_one_hot(const std::vector<Scalar>& one_hot) {
    int idx = -1;
    for (std::size_t i = 0; i < one_hot.size(); ++i) {
      if (one_hot[i] == 1.0) {
        check(idx < 0, "DomainLabel: one_hot has more than one active entry");
        idx = static_cast<int>(i);
      } else {
        check(one_hot[i] == 0.0, "DomainLabel: one_hot entries must be 0 or 1");
      }
    }
    check(idx >= 0, "DomainLabel: one_hot has no active entry");
    return DomainLabel{idx, static_cast<int>(one_hot.size())};
  }

  std::vector<Scalar> one_hot() const {
    std::vector<Scalar> v(static_cast<std::size_t>(num_domains), 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return v;
  }
};

// Opaque trainable snapshot of any network: flat parameters, flat
// non-trainable state (running statistics) and the originating config.
struct ModelParams {
  std::string arch;
  nlohmann::json config;
  std::vector<Scalar> params;
  std::vector<Scalar> state;
};

void save_model(const ModelParams& m, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

// Archive helpers shared with training checkpoints.
void put_model(Archive& a, const std::string& key, const ModelParams& m,
               const std::vector<nn::NamedShape>& param_table,
               const std::vector<nn::NamedShape>& state_table);
ModelParams get_model(const Archive& a, const std::string& key);

// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int base_channels = 32;
  int num_res_blocks = 6;
  int height = 128, width = 64, channels = 3;
  int num_domains = 0;  // L+1

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Conditional image-to-image generator: 2 stride-2 convolutions, residual
// blocks, 2 stride-2 transposed convolutions; instance normalization in all
// layers except the output, tanh output. The domain label is tiled over the
// spatial extent and concatenated to the input channels.
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }
  long param_count() const { return net_.param_count(); }
  ModelParams init_params(std::uint64_t seed) const;

  // One domain index per batch sample.
  Tensor forward(const Tensor& x, const std::vector<int>& domains, const ModelParams& m,
                 nn::Net::FwdCtx* ctx = nullptr) const;
  // Returns d loss / d image (conditioning channels dropped).
  Tensor backward(const Tensor& dy, const ModelParams& m, nn::Net::FwdCtx& ctx,
                  Span dp) const;

  std::vector<nn::NamedShape> param_table() const { return net_.param_tensors(); }

  static Generator from_params(const ModelParams& m) {
    return Generator(GeneratorConfig::from_json(m.config));
  }

 private:
  GeneratorConfig cfg_;
  nn::Net net_;
};

struct DomainDiscriminatorConfig {
  int base_channels = 32;
  int num_layers = 3;  // stride-2 down-sampling layers
  Scalar leaky_slope = 0.01;
  int height = 128, width = 64, channels = 3;
  int num_domains = 0;  // L+1

  void validate() const;
  nlohmann::json to_json() const;
  static DomainDiscriminatorConfig from_json(const nlohmann::json& j);
};

struct DiscriminatorOut {
  Tensor adv_map;        // (N, 1, h', w') raw patch scores
  Tensor domain_logits;  // (N, L+1, 1, 1) unnormalized
};

// Fully convolutional patch discriminator with two heads: per-patch real/fake
// scores and an (L+1)-way domain classifier over the final feature map.
class DomainDiscriminator {
 public:
  explicit DomainDiscriminator(DomainDiscriminatorConfig cfg);

  const DomainDiscriminatorConfig& config() const { return cfg_; }
  long param_count() const;
  ModelParams init_params(std::uint64_t seed) const;

  struct FwdCtx {
    nn::Net::FwdCtx trunk, adv, dom;
  };

  DiscriminatorOut forward(const Tensor& x, const ModelParams& m,
                           FwdCtx* ctx = nullptr) const;
  Tensor backward(const Tensor& d_adv, const Tensor& d_dom, const ModelParams& m,
                  FwdCtx& ctx, Span dp) const;

  Shape adv_map_shape(int batch) const;
  std::vector<nn::NamedShape> param_table() const;

  static DomainDiscriminator from_params(const ModelParams& m) {
    return DomainDiscriminator(DomainDiscriminatorConfig::from_json(m.config));
  }

 private:
  ConstSpan trunk_p(const ModelParams& m) const;
  ConstSpan adv_p(const ModelParams& m) const;
  ConstSpan dom_p(const ModelParams& m) const;

  DomainDiscriminatorConfig cfg_;
  nn::Net trunk_, adv_head_, dom_head_;
  Shape trunk_out_{};
};

struct ReIDConfig {
  std::vector<int> stage_channels = {16, 32, 64, 128};
  std::vector<int> blocks_per_stage = {1, 1, 1, 1};
  int embedding_dim = 1024;
  int num_classes = 0;
  bool use_ibn = false;
  int height = 128, width = 64, channels = 3;
  std::string feature_source = "embedding";  // or "backbone_pool"
  std::vector<int> vocabulary;               // identity labels, index = class

  void validate() const;
  nlohmann::json to_json() const;
  static ReIDConfig from_json(const nlohmann::json& j);
};

struct ReIDOut {
  Tensor embedding;  // (N, embedding_dim, 1, 1)
  Tensor logits;     // (N, num_classes, 1, 1)
  Tensor backbone_pool;  // (N, last_stage_channels, 1, 1)
};

// Identity classifier: residual backbone, global pooling, then exactly two
// fully connected layers (embedding dim, then N). With use_ibn, three
// instance-normalization layers follow the stem and the first two stages.
class ReIDNet {
 public:
  explicit ReIDNet(ReIDConfig cfg);

  const ReIDConfig& config() const { return cfg_; }
  long param_count() const {
    return backbone_.param_count() + neck_.param_count() + head_.param_count();
  }
  ModelParams init_params(std::uint64_t seed) const;

  struct FwdCtx {
    nn::Net::FwdCtx backbone, neck, head;
  };

  // Train mode requires batch size >= 2 and updates running statistics.
  ReIDOut forward(const Tensor& x, ModelParams& m, nn::Mode mode,
                  FwdCtx* ctx = nullptr) const;
  // Eval-mode forward over immutable params.
  ReIDOut forward_eval(const Tensor& x, const ModelParams& m,
                       FwdCtx* ctx = nullptr) const;
  // d_logits (+ optional d_embedding) -> d input.
  Tensor backward(const Tensor& d_logits, const ModelParams& m, FwdCtx& ctx, Span dp,
                  const Tensor* d_embedding = nullptr) const;

  std::vector<nn::NamedShape> param_table() const;
  std::vector<nn::NamedShape> state_table() const;

  static ReIDNet from_params(const ModelParams& m) {
    return ReIDNet(ReIDConfig::from_json(m.config));
  }

 private:
  ReIDOut run(const Tensor& x, ConstSpan params, Span state, nn::Mode mode,
              FwdCtx* ctx) const;

  ReIDConfig cfg_;
  nn::Net backbone_;  // stem .. global pool
  nn::Net neck_;      // flatten + fc_embed
  nn::Net head_;      // fc_class
};

// Logits of the frozen identity classifier on (generated) images; eval-mode
// statistics, parameters never touched.
Tensor semantic_discriminator_forward(const ReIDNet& net, const ModelParams& m,
                                      const Tensor& x, ReIDNet::FwdCtx* ctx = nullptr);

}  // namespace ipreid
