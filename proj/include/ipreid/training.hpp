#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ipreid/datasets.hpp"
#include "ipreid/losses.hpp"
#include "ipreid/models.hpp"

namespace ipreid {

struct TrainConfig {
  int total_epochs = 200;  // schedule: constant first half, linear to zero second half
  Scalar base_lr = 1e-4;
  int batch_size = 16;
  long seed = 0;
  LossWeights weights;
  int d_steps_per_g_step = 1;
  bool with_semantic = true;
  bool nonsaturating_g_adv = false;  // optional stability switch; off by default
  Scalar beta1 = 0.5;                // 0.9 for the classifiers
  Scalar beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  int checkpoint_every = 0;                // epochs; 0 = final only
  std::filesystem::path checkpoint_dir;    // used when checkpoint_every > 0
  std::filesystem::path metrics_path;      // empty = keep metrics in memory only

  void validate() const;
};

// Constant for the first half, then linear decay to zero.
Scalar lr_at_epoch(const TrainConfig& config, int epoch);

struct AdamState {
  std::vector<Scalar> m, v;
  long t = 0;
};

// Everything needed to resume or audit a run.
struct Checkpoint {
  ModelParams generator, discriminator, d_sem;
  AdamState g_opt, d_opt;
  int next_epoch = 0;
  long rng_seed = 0;
  nlohmann::json config_snapshot;
  std::vector<std::string> metrics;
};

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Supervised identity classifier over the source training set; the result is
// used downstream as the frozen semantic discriminator. arch.num_classes and
// arch.vocabulary are filled from the manifest.
ModelParams pretrain_semantic_discriminator(const DatasetManifest& source_train,
                                            ReIDConfig arch, const TrainConfig& config);

// Supervised classifier over a (translated) training set; labels must already
// be contiguous 0..N-1.
ModelParams train_reid(const DatasetManifest& train_set, const TrainConfig& config,
                       bool use_ibn, ReIDConfig arch);

// Alternates domain-discriminator and generator updates over the pooled L+1
// domains; d_sem stays frozen. Resumes from `resume` when provided.
Checkpoint train_ipgan(const DatasetManifest& source_train,
                       const DatasetManifest& target_train, const ModelParams& d_sem,
                       const GeneratorConfig& g_arch,
                       const DomainDiscriminatorConfig& d_arch, const TrainConfig& config,
                       const Checkpoint* resume = nullptr);

}  // namespace ipreid
