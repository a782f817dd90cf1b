#include "ipreid/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "ipreid/adam.hpp"

namespace ipreid {

namespace {

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw IoError("cannot open metrics file: " + path.string());
    }
  }

  void log(int epoch, long step,
           const std::vector<std::pair<std::string, double>>& scalars) {
    std::string line = "epoch=" + std::to_string(epoch) + " step=" + std::to_string(step);
    char buf[64];
    for (const auto& [k, v] : scalars) {
      std::snprintf(buf, sizeof(buf), " %s=%.9g", k.c_str(), v);
      line += buf;
    }
    lines_.push_back(line);
    if (file_.is_open()) file_ << line << "\n" << std::flush;
  }

  std::vector<std::string> take() { return std::move(lines_); }

 private:
  std::vector<std::string> lines_;
  std::ofstream file_;
};

std::vector<std::size_t> epoch_permutation(std::size_t n, long seed, int epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(static_cast<std::uint64_t>(seed), 0xE0, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(perm);
  return perm;
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"total_epochs", c.total_epochs},
          {"base_lr", c.base_lr},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"lambda_dom", c.weights.lambda_dom},
          {"lambda_rec", c.weights.lambda_rec},
          {"lambda_sem", c.weights.lambda_sem},
          {"d_steps_per_g_step", c.d_steps_per_g_step},
          {"with_semantic", c.with_semantic},
          {"nonsaturating_g_adv", c.nonsaturating_g_adv},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}};
}

}  // namespace

void TrainConfig::validate() const {
  check_config(total_epochs > 0 && total_epochs % 2 == 0,
               "train config: total_epochs must be positive and even (the schedule "
               "splits in half)");
  check_config(base_lr > 0, "train config: base_lr must be positive");
  check_config(batch_size >= 1, "train config: batch_size must be >= 1");
  check_config(d_steps_per_g_step >= 1, "train config: d_steps_per_g_step must be >= 1");
  weights.validate();
}

Scalar lr_at_epoch(const TrainConfig& config, int epoch) {
  check(epoch >= 0 && epoch < config.total_epochs,
        "lr_at_epoch: epoch " + std::to_string(epoch) + " out of range [0, " +
            std::to_string(config.total_epochs) + ")");
  const int half = config.total_epochs / 2;
  if (epoch < half) return config.base_lr;
  return config.base_lr * static_cast<Scalar>(config.total_epochs - epoch) /
         static_cast<Scalar>(half);
}

// ---------------------------------------------------------------------------
// Classifier training (shared by the semantic discriminator and the re-ID model)

namespace {

ModelParams train_classifier(const DatasetManifest& manifest, ReIDConfig arch,
                             const TrainConfig& cfg, bool require_contiguous,
                             const std::string& what) {
  cfg.validate();
  check_config(cfg.batch_size >= 2, what + ": batch_size must be >= 2 (batch statistics)");

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split == Split::kTrain && r.identity >= 0) rows.push_back(i);
  }
  check(!rows.empty(), what + ": manifest has no labeled train records");

  std::set<int> id_set;
  for (auto i : rows) id_set.insert(manifest.records[i].identity);
  check(id_set.size() >= 2,
        what + ": degenerate classification (need at least 2 identities, got " +
            std::to_string(id_set.size()) + ")");
  std::vector<int> vocab(id_set.begin(), id_set.end());
  if (require_contiguous) {
    for (std::size_t k = 0; k < vocab.size(); ++k) {
      check(vocab[k] == static_cast<int>(k),
            what + ": non-contiguous identity labels (caller must remap); found " +
                std::to_string(vocab[k]) + " at class " + std::to_string(k));
    }
  }
  std::map<int, int> id_to_class;
  for (std::size_t k = 0; k < vocab.size(); ++k) id_to_class[vocab[k]] = static_cast<int>(k);

  arch.num_classes = static_cast<int>(vocab.size());
  arch.vocabulary = vocab;
  arch.height = manifest.height;
  arch.width = manifest.width;
  arch.channels = manifest.channels;
  ReIDNet net(arch);
  ModelParams params = net.init_params(mix_seed(static_cast<std::uint64_t>(cfg.seed), 0x5EED));

  // tiny corpora: keep everything decoded in memory
  Tensor images(Shape{static_cast<int>(rows.size()), manifest.channels, manifest.height,
                      manifest.width});
  std::vector<int> labels(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Tensor one = load_record_image(manifest, rows[i]);
    images.set_sample(static_cast<int>(i), one, 0);
    labels[i] = id_to_class.at(manifest.records[rows[i]].identity);
  }

  Adam opt(net.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<Scalar> grads(static_cast<std::size_t>(net.param_count()));
  MetricsLog log(cfg.metrics_path);

  const long n = static_cast<long>(rows.size());
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    Scalar lr = lr_at_epoch(cfg, epoch);
    auto perm = epoch_permutation(rows.size(), cfg.seed, epoch);
    Scalar epoch_ce = 0.0;
    long epoch_correct = 0, epoch_seen = 0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      int bn = static_cast<int>(std::min<long>(cfg.batch_size, n - start));
      if (bn < 2) break;  // batch statistics need >= 2 samples
      Tensor x(Shape{bn, manifest.channels, manifest.height, manifest.width});
      std::vector<int> y(static_cast<std::size_t>(bn));
      for (int i = 0; i < bn; ++i) {
        std::size_t src = perm[static_cast<std::size_t>(start + i)];
        x.set_sample(i, images, static_cast<int>(src));
        y[static_cast<std::size_t>(i)] = labels[src];
      }
      ReIDNet::FwdCtx ctx;
      ReIDOut out = net.forward(x, params, nn::Mode::kTrain, &ctx);
      Tensor dlogits(out.logits.shape());
      Scalar batch_ce = 0.0;
      std::vector<Scalar> g(static_cast<std::size_t>(arch.num_classes));
      for (int i = 0; i < bn; ++i) {
        ConstSpan logits(out.logits.sample(i), static_cast<std::size_t>(arch.num_classes));
        batch_ce += cross_entropy(logits, y[static_cast<std::size_t>(i)], Span(g));
        for (int k = 0; k < arch.num_classes; ++k)
          dlogits.sample(i)[k] = g[static_cast<std::size_t>(k)] / bn;
        int best = 0;
        for (int k = 1; k < arch.num_classes; ++k)
          if (logits[k] > logits[best]) best = k;
        if (best == y[static_cast<std::size_t>(i)]) ++epoch_correct;
      }
      batch_ce /= bn;
      epoch_ce += batch_ce * bn;
      epoch_seen += bn;
      std::fill(grads.begin(), grads.end(), 0.0);
      net.backward(dlogits, params, ctx, Span(grads));
      opt.step(Span(params.params), ConstSpan(grads), lr);
      ++global_step;
    }
    log.log(epoch, global_step,
            {{"cross_entropy", epoch_ce / std::max<long>(1, epoch_seen)},
             {"train_accuracy",
              static_cast<double>(epoch_correct) / std::max<long>(1, epoch_seen)},
             {"lr", lr}});
  }

  // final accuracy / cross-entropy under eval-mode statistics
  long correct = 0;
  Scalar final_ce = 0.0;
  const int eval_batch = 64;
  for (long start = 0; start < n; start += eval_batch) {
    int bn = static_cast<int>(std::min<long>(eval_batch, n - start));
    Tensor x(Shape{bn, manifest.channels, manifest.height, manifest.width});
    for (int i = 0; i < bn; ++i) x.set_sample(i, images, static_cast<int>(start + i));
    ReIDOut out = net.forward_eval(x, params);
    for (int i = 0; i < bn; ++i) {
      ConstSpan logits(out.logits.sample(i), static_cast<std::size_t>(arch.num_classes));
      final_ce += cross_entropy(logits, labels[static_cast<std::size_t>(start + i)]);
      int best = 0;
      for (int k = 1; k < arch.num_classes; ++k)
        if (logits[k] > logits[best]) best = k;
      if (best == labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  params.config["final_train_accuracy"] = static_cast<double>(correct) / n;
  params.config["final_train_cross_entropy"] = final_ce / n;
  params.config["trained_epochs"] = cfg.total_epochs;
  params.config["train_seed"] = cfg.seed;
  return params;
}

}  // namespace

ModelParams pretrain_semantic_discriminator(const DatasetManifest& source_train,
                                            ReIDConfig arch, const TrainConfig& config) {
  return train_classifier(source_train, std::move(arch), config, false,
                          "pretrain_semantic_discriminator");
}

ModelParams train_reid(const DatasetManifest& train_set, const TrainConfig& config,
                       bool use_ibn, ReIDConfig arch) {
  arch.use_ibn = use_ibn;
  return train_classifier(train_set, std::move(arch), config, true, "train_reid");
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  Archive a;
  a.meta["kind"] = "gan_checkpoint";
  a.meta["next_epoch"] = c.next_epoch;
  a.meta["rng_seed"] = c.rng_seed;
  a.meta["config_snapshot"] = c.config_snapshot;
  a.meta["metrics"] = c.metrics;
  a.meta["optimizer"] = {{"g_t", c.g_opt.t}, {"d_t", c.d_opt.t}};
  Generator g = Generator::from_params(c.generator);
  DomainDiscriminator d = DomainDiscriminator::from_params(c.discriminator);
  ReIDNet dsem = ReIDNet::from_params(c.d_sem);
  put_model(a, "generator", c.generator, g.param_table(), {});
  put_model(a, "discriminator", c.discriminator, d.param_table(), {});
  put_model(a, "d_sem", c.d_sem, dsem.param_table(), dsem.state_table());
  a.add_blob("g_opt.m", c.g_opt.m);
  a.add_blob("g_opt.v", c.g_opt.v);
  a.add_blob("d_opt.m", c.d_opt.m);
  a.add_blob("d_opt.v", c.d_opt.v);
  a.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Archive a = Archive::load(path);
  check(a.meta.value("kind", "") == "gan_checkpoint",
        "not a training checkpoint: " + path.string());
  Checkpoint c;
  c.generator = get_model(a, "generator");
  c.discriminator = get_model(a, "discriminator");
  c.d_sem = get_model(a, "d_sem");
  c.next_epoch = a.meta.at("next_epoch").get<int>();
  c.rng_seed = a.meta.at("rng_seed").get<long>();
  c.config_snapshot = a.meta.at("config_snapshot");
  c.metrics = a.meta.at("metrics").get<std::vector<std::string>>();
  c.g_opt.m = a.blob("g_opt.m");
  c.g_opt.v = a.blob("g_opt.v");
  c.g_opt.t = a.meta.at("optimizer").at("g_t").get<long>();
  c.d_opt.m = a.blob("d_opt.m");
  c.d_opt.v = a.blob("d_opt.v");
  c.d_opt.t = a.meta.at("optimizer").at("d_t").get<long>();
  return c;
}

// ---------------------------------------------------------------------------
// IPGAN training

Checkpoint train_ipgan(const DatasetManifest& source_train,
                       const DatasetManifest& target_train, const ModelParams& d_sem,
                       const GeneratorConfig& g_arch,
                       const DomainDiscriminatorConfig& d_arch, const TrainConfig& cfg,
                       const Checkpoint* resume) {
  cfg.validate();
  const int L = target_train.num_cameras;
  const int num_domains = L + 1;
  check(g_arch.num_domains == num_domains && d_arch.num_domains == num_domains,
        "train_ipgan: domain-count mismatch (target L=" + std::to_string(L) +
            " needs " + std::to_string(num_domains) + " network domains)");
  check(source_train.height == target_train.height &&
            source_train.width == target_train.width &&
            source_train.channels == target_train.channels,
        "train_ipgan: source/target image size mismatch");
  check(g_arch.height == source_train.height && g_arch.width == source_train.width &&
            g_arch.channels == source_train.channels,
        "train_ipgan: generator size does not match manifests");

  // frozen semantic discriminator
  ReIDNet dsem_net = ReIDNet::from_params(d_sem);
  const auto& dsem_cfg = dsem_net.config();
  check(!dsem_cfg.vocabulary.empty(), "train_ipgan: d_sem carries no identity vocabulary");
  std::map<int, int> id_to_class;
  for (std::size_t k = 0; k < dsem_cfg.vocabulary.size(); ++k)
    id_to_class[dsem_cfg.vocabulary[k]] = static_cast<int>(k);

  struct Item {
    const DatasetManifest* manifest;
    std::size_t row;
    int domain;     // c': 0 source, 1..L target camera
    int sem_class;  // d_sem class for source items, -1 otherwise
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < source_train.records.size(); ++i) {
    const auto& r = source_train.records[i];
    if (r.split != Split::kTrain || r.identity < 0) continue;
    auto it = id_to_class.find(r.identity);
    check(it != id_to_class.end(),
          "train_ipgan: d_sem vocabulary mismatch, source identity " +
              std::to_string(r.identity) + " unknown to the classifier");
    items.push_back({&source_train, i, 0, it->second});
  }
  for (std::size_t i = 0; i < target_train.records.size(); ++i) {
    const auto& r = target_train.records[i];
    if (r.split != Split::kTrain) continue;
    items.push_back({&target_train, i, r.camera, -1});
  }
  check(!items.empty(), "train_ipgan: no train records");

  Tensor images(Shape{static_cast<int>(items.size()), source_train.channels,
                      source_train.height, source_train.width});
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor one = load_record_image(*items[i].manifest, items[i].row);
    images.set_sample(static_cast<int>(i), one, 0);
  }

  Generator gen(g_arch);
  DomainDiscriminator dis(d_arch);
  ModelParams gp, dp;
  Adam g_opt(gen.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam d_opt(dis.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  int start_epoch = 0;
  std::vector<std::string> metrics_history;
  if (resume) {
    check(resume->rng_seed == cfg.seed, "train_ipgan: resume seed mismatch");
    check(resume->next_epoch <= cfg.total_epochs, "train_ipgan: resume beyond schedule");
    gp = resume->generator;
    dp = resume->discriminator;
    g_opt.restore(resume->g_opt.m, resume->g_opt.v, resume->g_opt.t);
    d_opt.restore(resume->d_opt.m, resume->d_opt.v, resume->d_opt.t);
    start_epoch = resume->next_epoch;
    metrics_history = resume->metrics;
  } else {
    gp = gen.init_params(mix_seed(static_cast<std::uint64_t>(cfg.seed), 0x6E));
    dp = dis.init_params(mix_seed(static_cast<std::uint64_t>(cfg.seed), 0xD1));
  }

  std::vector<Scalar> g_grads(static_cast<std::size_t>(gen.param_count()));
  std::vector<Scalar> d_grads(static_cast<std::size_t>(dis.param_count()));
  std::vector<Scalar> scratch_d(static_cast<std::size_t>(dis.param_count()));
  std::vector<Scalar> scratch_sem(static_cast<std::size_t>(dsem_net.param_count()));
  MetricsLog log(cfg.metrics_path);
  const Scalar lam_dom = cfg.weights.lambda_dom;
  const Scalar lam_rec = cfg.weights.lambda_rec;
  const Scalar lam_sem = cfg.weights.lambda_sem;
  const long n = static_cast<long>(items.size());
  long global_step = 0;

  for (int epoch = start_epoch; epoch < cfg.total_epochs; ++epoch) {
    Scalar lr = lr_at_epoch(cfg, epoch);
    auto perm = epoch_permutation(items.size(), cfg.seed, epoch);
    Scalar ep_adv = 0, ep_dom_r = 0, ep_dom_f = 0, ep_rec = 0, ep_sem = 0;
    Scalar ep_d_obj = 0, ep_g_obj = 0;
    long d_steps = 0, g_steps = 0, sem_batches = 0;
    long step_in_epoch = 0;
    for (long startb = 0; startb < n; startb += cfg.batch_size, ++step_in_epoch) {
      int bn = static_cast<int>(std::min<long>(cfg.batch_size, n - startb));
      Tensor x(Shape{bn, source_train.channels, source_train.height, source_train.width});
      std::vector<int> cprime(static_cast<std::size_t>(bn));
      std::vector<int> sem_class(static_cast<std::size_t>(bn));
      for (int i = 0; i < bn; ++i) {
        std::size_t src = perm[static_cast<std::size_t>(startb + i)];
        x.set_sample(i, images, static_cast<int>(src));
        cprime[static_cast<std::size_t>(i)] = items[src].domain;
        sem_class[static_cast<std::size_t>(i)] = items[src].sem_class;
      }
      Rng dom_rng(mix_seed(static_cast<std::uint64_t>(cfg.seed), 0xE1,
                           static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(step_in_epoch)));
      std::vector<int> c(static_cast<std::size_t>(bn));
      for (auto& v : c) v = dom_rng.uniform_int(num_domains);

      // ---- discriminator step: minimize -L_adv + lambda_dom * L_dom^r
      Tensor fake = gen.forward(x, c, gp);
      DomainDiscriminator::FwdCtx dctx_real, dctx_fake;
      DiscriminatorOut real_out = dis.forward(x, dp, &dctx_real);
      DiscriminatorOut fake_out = dis.forward(fake, dp, &dctx_fake);
      Tensor adv_grad_real, adv_grad_fake;
      Scalar l_adv = adversarial_loss(real_out.adv_map, fake_out.adv_map, &adv_grad_real,
                                      &adv_grad_fake);
      Scalar l_dom_r = 0;
      Tensor d_dom_real(real_out.domain_logits.shape());
      std::vector<Scalar> ce_grad(static_cast<std::size_t>(num_domains));
      for (int i = 0; i < bn; ++i) {
        ConstSpan logits(real_out.domain_logits.sample(i),
                         static_cast<std::size_t>(num_domains));
        l_dom_r += cross_entropy(logits, cprime[static_cast<std::size_t>(i)], Span(ce_grad));
        for (int k = 0; k < num_domains; ++k)
          d_dom_real.sample(i)[k] = lam_dom * ce_grad[static_cast<std::size_t>(k)] / bn;
      }
      l_dom_r /= bn;
      for (long i = 0; i < adv_grad_real.count(); ++i) adv_grad_real.data()[i] *= -1.0;
      for (long i = 0; i < adv_grad_fake.count(); ++i) adv_grad_fake.data()[i] *= -1.0;
      Tensor d_dom_zero(fake_out.domain_logits.shape());
      std::fill(d_grads.begin(), d_grads.end(), 0.0);
      dis.backward(adv_grad_real, d_dom_real, dp, dctx_real, Span(d_grads));
      dis.backward(adv_grad_fake, d_dom_zero, dp, dctx_fake, Span(d_grads));
      d_opt.step(Span(dp.params), ConstSpan(d_grads), lr);
      ep_adv += l_adv;
      ep_dom_r += l_dom_r;
      ep_d_obj += discriminator_objective({l_adv, l_dom_r}, cfg.weights);
      ++d_steps;

      // ---- generator step: minimize L_adv + dom^f + rec (+ sem)
      if ((step_in_epoch + 1) % cfg.d_steps_per_g_step != 0) continue;
      nn::Net::FwdCtx gctx_a, gctx_b;
      fake = gen.forward(x, c, gp, &gctx_a);
      DomainDiscriminator::FwdCtx dctx;
      DiscriminatorOut out = dis.forward(fake, dp, &dctx);
      DiscriminatorOut real_scores = dis.forward(x, dp);  // value only
      Tensor g_adv_grad;
      Scalar l_adv_g;
      if (cfg.nonsaturating_g_adv) {
        // gradient source: -mean log s(d_fake); logged value stays the
        // saturating objective for comparability
        l_adv_g = adversarial_loss(real_scores.adv_map, out.adv_map);
        g_adv_grad = Tensor(out.adv_map.shape());
        const long np = out.adv_map.count();
        for (long i = 0; i < np; ++i) {
          g_adv_grad.data()[i] =
              -(1.0 - sigmoid(out.adv_map.data()[i])) / static_cast<Scalar>(np);
        }
      } else {
        Tensor unused;
        l_adv_g = adversarial_loss(real_scores.adv_map, out.adv_map, &unused, &g_adv_grad);
      }
      Scalar l_dom_f = 0;
      Tensor d_dom_fake(out.domain_logits.shape());
      for (int i = 0; i < bn; ++i) {
        ConstSpan logits(out.domain_logits.sample(i), static_cast<std::size_t>(num_domains));
        l_dom_f += cross_entropy(logits, c[static_cast<std::size_t>(i)], Span(ce_grad));
        for (int k = 0; k < num_domains; ++k)
          d_dom_fake.sample(i)[k] = lam_dom * ce_grad[static_cast<std::size_t>(k)] / bn;
      }
      l_dom_f /= bn;

      Tensor rec = gen.forward(fake, cprime, gp, &gctx_b);
      Tensor rec_grad;
      Scalar l_rec = reconstruction_loss(x, rec, &rec_grad);
      for (long i = 0; i < rec_grad.count(); ++i) rec_grad.data()[i] *= lam_rec;

      std::fill(g_grads.begin(), g_grads.end(), 0.0);
      Tensor dfake_rec = gen.backward(rec_grad, gp, gctx_b, Span(g_grads));

      std::fill(scratch_d.begin(), scratch_d.end(), 0.0);
      Tensor dfake = dis.backward(g_adv_grad, d_dom_fake, dp, dctx, Span(scratch_d));
      for (long i = 0; i < dfake.count(); ++i) dfake.data()[i] += dfake_rec.data()[i];

      Scalar l_sem = 0;
      bool sem_used = false;
      if (cfg.with_semantic && lam_sem > 0) {
        std::vector<int> src_rows;
        for (int i = 0; i < bn; ++i)
          if (sem_class[static_cast<std::size_t>(i)] >= 0) src_rows.push_back(i);
        if (!src_rows.empty()) {
          sem_used = true;
          const int ns = static_cast<int>(src_rows.size());
          Tensor fake_src(Shape{ns, fake.shape().c, fake.shape().h, fake.shape().w});
          for (int i = 0; i < ns; ++i)
            fake_src.set_sample(i, fake, src_rows[static_cast<std::size_t>(i)]);
          ReIDNet::FwdCtx sem_ctx;
          Tensor sem_logits = semantic_discriminator_forward(dsem_net, d_sem, fake_src,
                                                             &sem_ctx);
          const int ncls = dsem_cfg.num_classes;
          Tensor d_sem_logits(sem_logits.shape());
          std::vector<Scalar> sg(static_cast<std::size_t>(ncls));
          for (int i = 0; i < ns; ++i) {
            ConstSpan logits(sem_logits.sample(i), static_cast<std::size_t>(ncls));
            l_sem += cross_entropy(
                logits, sem_class[static_cast<std::size_t>(src_rows[static_cast<std::size_t>(i)])],
                Span(sg));
            for (int k = 0; k < ncls; ++k)
              d_sem_logits.sample(i)[k] = lam_sem * sg[static_cast<std::size_t>(k)] / ns;
          }
          l_sem /= ns;
          std::fill(scratch_sem.begin(), scratch_sem.end(), 0.0);
          Tensor dfake_sem =
              dsem_net.backward(d_sem_logits, d_sem, sem_ctx, Span(scratch_sem));
          for (int i = 0; i < ns; ++i) {
            const Scalar* srcg = dfake_sem.sample(i);
            Scalar* dst = dfake.sample(src_rows[static_cast<std::size_t>(i)]);
            for (long k = 0; k < dfake.shape().per_sample(); ++k) dst[k] += srcg[k];
          }
        }
      }

      gen.backward(dfake, gp, gctx_a, Span(g_grads));
      g_opt.step(Span(gp.params), ConstSpan(g_grads), lr);

      GeneratorLossParts parts{l_adv_g, l_dom_f, l_rec, {}};
      if (cfg.with_semantic) parts.sem = sem_used ? l_sem : 0.0;
      ep_g_obj += generator_objective(parts, cfg.weights, cfg.with_semantic);
      ep_dom_f += l_dom_f;
      ep_rec += l_rec;
      if (sem_used) {
        ep_sem += l_sem;
        ++sem_batches;
      }
      ++g_steps;
      ++global_step;
    }
    log.log(epoch, global_step,
            {{"loss_adv", ep_adv / std::max<long>(1, d_steps)},
             {"loss_dom_real", ep_dom_r / std::max<long>(1, d_steps)},
             {"loss_dom_fake", ep_dom_f / std::max<long>(1, g_steps)},
             {"loss_rec", ep_rec / std::max<long>(1, g_steps)},
             {"loss_sem", ep_sem / std::max<long>(1, sem_batches)},
             {"objective_d", ep_d_obj / std::max<long>(1, d_steps)},
             {"objective_g", ep_g_obj / std::max<long>(1, g_steps)},
             {"lr", lr}});

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.total_epochs) {
      Checkpoint c;
      c.generator = gp;
      c.discriminator = dp;
      c.d_sem = d_sem;
      c.g_opt = {g_opt.moment1(), g_opt.moment2(), g_opt.steps()};
      c.d_opt = {d_opt.moment1(), d_opt.moment2(), d_opt.steps()};
      c.next_epoch = epoch + 1;
      c.rng_seed = cfg.seed;
      c.config_snapshot = train_config_json(cfg);
      auto lines = log.take();
      metrics_history.insert(metrics_history.end(), lines.begin(), lines.end());
      c.metrics = metrics_history;
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint(c, cfg.checkpoint_dir /
                             ("checkpoint_epoch" + std::to_string(epoch + 1) + ".ipar"));
    }
  }

  Checkpoint c;
  c.generator = std::move(gp);
  c.discriminator = std::move(dp);
  c.d_sem = d_sem;
  c.g_opt = {g_opt.moment1(), g_opt.moment2(), g_opt.steps()};
  c.d_opt = {d_opt.moment1(), d_opt.moment2(), d_opt.steps()};
  c.next_epoch = cfg.total_epochs;
  c.rng_seed = cfg.seed;
  c.config_snapshot = train_config_json(cfg);
  auto lines = log.take();
  metrics_history.insert(metrics_history.end(), lines.begin(), lines.end());
  c.metrics = std::move(metrics_history);
  return c;
}

}  // namespace ipreid
