#include <sys/file.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ipreid/config.hpp"
#include "ipreid/datasets.hpp"
#include "ipreid/evaluation.hpp"
#include "ipreid/models.hpp"
#include "ipreid/training.hpp"
#include "ipreid/translation.hpp"

namespace fs = std::filesystem;
using namespace ipreid;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  long seed = 0;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "config file (key=value lines)");
  cmd->add_option("--override", o.overrides, "config override key=value (repeatable)");
  cmd->add_option("--out", o.out, "output directory (default $IPREID_OUT_ROOT/<cmd>)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "compute threads hint");
}

Config resolve_config(const CommonOpts& o) {
  Config cfg;
  if (!o.config_path.empty()) cfg.load_file(o.config_path);
  for (const auto& ov : o.overrides) cfg.apply_override(ov);
  return cfg;
}

// Owns the output directory for the duration of a subcommand: advisory lock,
// in-progress sentinel, resolved config snapshot.
class RunDir {
 public:
  RunDir(const CommonOpts& o, const std::string& subcommand, const Config& cfg) {
    if (!o.out.empty()) {
      dir_ = o.out;
    } else if (const char* root = std::getenv("IPREID_OUT_ROOT")) {
      dir_ = fs::path(root) / subcommand;
    } else {
      throw ConfigError("no output directory: pass --out or set IPREID_OUT_ROOT");
    }
    fs::create_directories(dir_);
    lock_fd_ = ::open((dir_ / ".lock").c_str(), O_CREAT | O_RDWR, 0644);
    if (lock_fd_ < 0) throw IoError("cannot open lock file in " + dir_.string());
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(lock_fd_);
      lock_fd_ = -1;
      throw IoError("another run owns output directory " + dir_.string());
    }
    std::ofstream(dir_ / "_INCOMPLETE") << "run in progress or aborted\n";
    cfg.save(dir_ / "resolved.cfg");
  }

  ~RunDir() {
    if (lock_fd_ >= 0) {
      ::flock(lock_fd_, LOCK_UN);
      ::close(lock_fd_);
    }
  }

  const fs::path& path() const { return dir_; }

  void finish(const nlohmann::json& summary) const {
    std::ofstream f(dir_ / "summary.json", std::ios::trunc);
    f << summary.dump(2) << "\n";
    if (!f) throw IoError("cannot write summary.json");
    fs::remove(dir_ / "_INCOMPLETE");
  }

 private:
  fs::path dir_;
  int lock_fd_ = -1;
};

nlohmann::json manifest_summary(const DatasetManifest& m) {
  return {{"name", m.name},
          {"records", m.records.size()},
          {"L", m.num_cameras},
          {"N", m.num_identities}};
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const CommonOpts& o) {
  Config cfg = resolve_config(o);
  RunDir run(o, "synth-data", cfg);
  SyntheticSpec spec = cfg.synthetic_spec();
  SyntheticDataset ds = generate_synthetic_dataset(spec, o.seed, run.path());
  save_manifest(ds.source_train, run.path() / "source_train.manifest");
  save_manifest(ds.target_train, run.path() / "target_train.manifest");
  save_manifest(ds.query, run.path() / "query.manifest");
  save_manifest(ds.gallery, run.path() / "gallery.manifest");
  nlohmann::json summary = {{"kind", "synth-data"},
                            {"seed", o.seed},
                            {"source_train", manifest_summary(ds.source_train)},
                            {"target_train", manifest_summary(ds.target_train)},
                            {"query", manifest_summary(ds.query)},
                            {"gallery", manifest_summary(ds.gallery)}};
  run.finish(summary);
  std::cout << "synthetic corpus written to " << run.path() << "\n";
  return 0;
}

int cmd_pretrain_dsem(const CommonOpts& o, const std::string& data_dir,
                      const std::string& manifest_path) {
  Config cfg = resolve_config(o);
  RunDir run(o, "pretrain-dsem", cfg);
  fs::path src = manifest_path.empty() ? fs::path(data_dir) / "source_train.manifest"
                                       : fs::path(manifest_path);
  DatasetManifest manifest = load_manifest(src);
  TrainConfig tc = cfg.dsem_train_config(o.seed);
  tc.metrics_path = run.path() / "metrics.txt";
  ModelParams dsem = pretrain_semantic_discriminator(manifest, cfg.reid_config(), tc);
  save_model(dsem, run.path() / "dsem.ipar");
  nlohmann::json summary = {{"kind", "pretrain-dsem"},
                            {"seed", o.seed},
                            {"source_manifest", src.string()},
                            {"num_classes", dsem.config.at("num_classes")},
                            {"final_train_accuracy",
                             dsem.config.at("final_train_accuracy")},
                            {"final_train_cross_entropy",
                             dsem.config.at("final_train_cross_entropy")}};
  run.finish(summary);
  std::cout << "d_sem trained, accuracy "
            << dsem.config.at("final_train_accuracy").get<double>() << "\n";
  return 0;
}

int cmd_train_ipgan(const CommonOpts& o, const std::string& data_dir,
                    const std::string& dsem_path, const std::string& resume_path) {
  Config cfg = resolve_config(o);
  RunDir run(o, "train-ipgan", cfg);
  DatasetManifest source = load_manifest(fs::path(data_dir) / "source_train.manifest");
  DatasetManifest target = load_manifest(fs::path(data_dir) / "target_train.manifest");
  ModelParams dsem = load_model(dsem_path);
  const int num_domains = target.num_cameras + 1;
  TrainConfig tc = cfg.gan_train_config(o.seed);
  tc.metrics_path = run.path() / "metrics.txt";
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = run.path() / "checkpoints";
  Checkpoint resume;
  bool has_resume = !resume_path.empty();
  if (has_resume) resume = load_checkpoint(resume_path);
  Checkpoint ck = train_ipgan(source, target, dsem, cfg.generator_config(num_domains),
                              cfg.discriminator_config(num_domains), tc,
                              has_resume ? &resume : nullptr);
  save_checkpoint(ck, run.path() / "checkpoint.ipar");
  save_model(ck.generator, run.path() / "generator.ipar");
  save_model(ck.discriminator, run.path() / "discriminator.ipar");
  nlohmann::json summary = {{"kind", "train-ipgan"},
                            {"seed", o.seed},
                            {"with_semantic", tc.with_semantic},
                            {"lambda_sem", tc.weights.lambda_sem},
                            {"epochs", tc.total_epochs},
                            {"last_metrics", ck.metrics.empty() ? "" : ck.metrics.back()}};
  run.finish(summary);
  std::cout << (tc.with_semantic ? "identity-preserving" : "plain multi-domain")
            << " translation model trained\n";
  return 0;
}

int cmd_translate(const CommonOpts& o, const std::string& generator_path,
                  const std::string& data_dir, const std::string& manifest_path,
                  std::vector<int> cameras) {
  Config cfg = resolve_config(o);
  RunDir run(o, "translate", cfg);
  TranslationJob job;
  job.generator = load_model(generator_path);
  fs::path src = manifest_path.empty() ? fs::path(data_dir) / "source_train.manifest"
                                       : fs::path(manifest_path);
  job.source = load_manifest(src);
  if (cameras.empty()) {
    int L = GeneratorConfig::from_json(job.generator.config).num_domains - 1;
    for (int c = 1; c <= L; ++c) cameras.push_back(c);
  }
  job.target_cameras = cameras;
  job.out_dir = run.path();
  job.seed = o.seed;
  DatasetManifest translated = translate_dataset(job);
  save_manifest(translated, run.path() / "translated.manifest");
  nlohmann::json summary = {{"kind", "translate"},
                            {"seed", o.seed},
                            {"source_records", job.source.records.size()},
                            {"target_cameras", cameras},
                            {"output_records", translated.records.size()}};
  run.finish(summary);
  std::cout << translated.records.size() << " translated images written\n";
  return 0;
}

int cmd_train_reid(const CommonOpts& o, const std::string& manifest_path) {
  Config cfg = resolve_config(o);
  RunDir run(o, "train-reid", cfg);
  DatasetManifest manifest = load_manifest(manifest_path);
  TrainConfig tc = cfg.reid_train_config(o.seed);
  tc.metrics_path = run.path() / "metrics.txt";
  ReIDConfig arch = cfg.reid_config();
  ModelParams model = train_reid(manifest, tc, arch.use_ibn, arch);
  save_model(model, run.path() / "reid.ipar");
  nlohmann::json summary = {{"kind", "train-reid"},
                            {"seed", o.seed},
                            {"use_ibn", arch.use_ibn},
                            {"train_manifest", manifest_path},
                            {"num_classes", model.config.at("num_classes")},
                            {"final_train_accuracy",
                             model.config.at("final_train_accuracy")},
                            {"final_train_cross_entropy",
                             model.config.at("final_train_cross_entropy")}};
  run.finish(summary);
  std::cout << "re-ID model trained, cross-entropy "
            << model.config.at("final_train_cross_entropy").get<double>() << "\n";
  return 0;
}

void write_cmc_plot(const std::vector<Scalar>& cmc, const fs::path& path) {
  const int w = 240, h = 160, margin = 10;
  Tensor img(Shape{1, 3, h, w}, 1.0);
  auto put = [&](int x, int y, double r, double g, double b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    img.at(0, 0, y, x) = r;
    img.at(0, 1, y, x) = g;
    img.at(0, 2, y, x) = b;
  };
  for (int x = margin; x < w - margin; ++x) {
    put(x, h - margin, -1, -1, -1);
    put(x, margin, 0.7, 0.7, 0.7);
  }
  for (int y = margin; y < h - margin; ++y) put(margin, y, -1, -1, -1);
  const int n = static_cast<int>(cmc.size());
  for (int k = 0; k < n; ++k) {
    double fx = margin + (w - 2.0 * margin) * (n == 1 ? 0.5 : k / double(n - 1));
    double fy = h - margin - (h - 2.0 * margin) * cmc[static_cast<std::size_t>(k)];
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        put(static_cast<int>(fx) + dx, static_cast<int>(fy) + dy, -1, -0.2, 0.6);
  }
  save_image(img, path);
}

int cmd_evaluate(const CommonOpts& o, const std::string& model_path,
                 const std::string& data_dir, const std::string& query_path,
                 const std::string& gallery_path, const std::string& label) {
  Config cfg = resolve_config(o);
  RunDir run(o, "evaluate", cfg);
  ModelParams model = load_model(model_path);
  fs::path qp = query_path.empty() ? fs::path(data_dir) / "query.manifest"
                                   : fs::path(query_path);
  fs::path gp = gallery_path.empty() ? fs::path(data_dir) / "gallery.manifest"
                                     : fs::path(gallery_path);
  DatasetManifest query = load_manifest(qp);
  DatasetManifest gallery = load_manifest(gp);
  FeatureMatrix qf = extract_features(model, query);
  FeatureMatrix gf = extract_features(model, gallery);
  EvalResult res = compute_cmc_map(qf, gf, cfg.get_int("protocol.max_rank"));
  save_eval_report(res, run.path() / "eval_report.txt");
  write_cmc_plot(res.cmc, run.path() / "cmc_curve.ppm");
  auto rank = [&](int k) {
    return k <= static_cast<int>(res.cmc.size())
               ? res.cmc[static_cast<std::size_t>(k - 1)]
               : res.cmc.back();
  };
  nlohmann::json summary = {{"kind", "evaluate"},
                            {"seed", o.seed},
                            {"label", label},
                            {"model", model_path},
                            {"rank1", rank(1)},
                            {"rank5", rank(5)},
                            {"rank10", rank(10)},
                            {"mAP", res.mAP},
                            {"queries_evaluated", res.queries_evaluated},
                            {"queries_skipped", res.queries_skipped},
                            {"result", res.to_json()}};
  run.finish(summary);
  std::cout << "rank-1 " << rank(1) << ", mAP " << res.mAP << "\n";
  return 0;
}

int cmd_audit_identity(const CommonOpts& o, const std::string& classifier_path,
                       const std::string& manifest_path, const std::string& label) {
  Config cfg = resolve_config(o);
  RunDir run(o, "audit-identity", cfg);
  ModelParams classifier = load_model(classifier_path);
  DatasetManifest translated = load_manifest(manifest_path);
  double acc = identity_preservation_accuracy(classifier, translated);
  nlohmann::json summary = {{"kind", "audit-identity"},
                            {"seed", o.seed},
                            {"label", label},
                            {"classifier", classifier_path},
                            {"manifest", manifest_path},
                            {"records", translated.records.size()},
                            {"accuracy", acc}};
  run.finish(summary);
  std::cout << "identity preservation accuracy " << acc << "\n";
  return 0;
}

int cmd_report(const CommonOpts& o, const std::string& runs_dir) {
  Config cfg = resolve_config(o);
  RunDir run(o, "report", cfg);
  std::vector<nlohmann::json> evals, audits;
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().filename() == "summary.json")
      found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());
  for (const auto& p : found) {
    std::ifstream f(p);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) continue;
    std::string kind = j.value("kind", "");
    if (kind == "evaluate") evals.push_back(j);
    if (kind == "audit-identity") audits.push_back(j);
  }
  std::ostringstream table;
  table << "retrieval (query/gallery protocol)\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "  %-32s %8s %8s %8s %8s\n", "label", "rank-1",
                "rank-5", "rank-10", "mAP");
  table << buf;
  for (const auto& j : evals) {
    std::snprintf(buf, sizeof(buf), "  %-32s %8.4f %8.4f %8.4f %8.4f\n",
                  j.value("label", "(unlabeled)").c_str(), j.value("rank1", 0.0),
                  j.value("rank5", 0.0), j.value("rank10", 0.0), j.value("mAP", 0.0));
    table << buf;
  }
  table << "\nidentity preservation on translated images\n";
  std::snprintf(buf, sizeof(buf), "  %-32s %10s\n", "label", "accuracy");
  table << buf;
  for (const auto& j : audits) {
    std::snprintf(buf, sizeof(buf), "  %-32s %10.4f\n",
                  j.value("label", "(unlabeled)").c_str(), j.value("accuracy", 0.0));
    table << buf;
  }
  std::ofstream rf(run.path() / "report.txt", std::ios::trunc);
  rf << table.str();
  if (!rf) throw IoError("cannot write report.txt");
  nlohmann::json summary = {{"kind", "report"},
                            {"runs_scanned", found.size()},
                            {"evaluations", evals},
                            {"identity_audits", audits}};
  run.finish(summary);
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity-preserving camera-style translation and re-ID pipeline"};
  app.require_subcommand(1);

  CommonOpts o_synth, o_dsem, o_gan, o_tr, o_reid, o_eval, o_audit, o_report;

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic multi-camera corpus");
  add_common(synth, o_synth);

  auto* dsem = app.add_subcommand("pretrain-dsem", "train the identity classifier used as the frozen semantic discriminator");
  add_common(dsem, o_dsem);
  std::string dsem_data, dsem_manifest;
  dsem->add_option("--data", dsem_data, "synth-data output directory");
  dsem->add_option("--source-manifest", dsem_manifest, "explicit source manifest path");

  auto* gan = app.add_subcommand("train-ipgan", "train the camera-style translation model");
  add_common(gan, o_gan);
  std::string gan_data, gan_dsem, gan_resume;
  gan->add_option("--data", gan_data, "synth-data output directory")->required();
  gan->add_option("--dsem", gan_dsem, "pretrained classifier checkpoint")->required();
  gan->add_option("--resume", gan_resume, "resume from a training checkpoint");

  auto* tr = app.add_subcommand("translate", "style the source training set toward target cameras");
  add_common(tr, o_tr);
  std::string tr_gen, tr_data, tr_manifest;
  std::vector<int> tr_cams;
  tr->add_option("--generator", tr_gen, "generator checkpoint")->required();
  tr->add_option("--data", tr_data, "synth-data output directory");
  tr->add_option("--source-manifest", tr_manifest, "explicit source manifest path");
  tr->add_option("--cameras", tr_cams, "target cameras (default: all)");

  auto* reid = app.add_subcommand("train-reid", "train a re-ID classifier on a manifest");
  add_common(reid, o_reid);
  std::string reid_manifest;
  reid->add_option("--train-manifest", reid_manifest, "training manifest")->required();

  auto* ev = app.add_subcommand("evaluate", "CMC/mAP retrieval evaluation");
  add_common(ev, o_eval);
  std::string ev_model, ev_data, ev_query, ev_gallery, ev_label;
  ev->add_option("--model", ev_model, "re-ID checkpoint")->required();
  ev->add_option("--data", ev_data, "synth-data output directory");
  ev->add_option("--query", ev_query, "query manifest");
  ev->add_option("--gallery", ev_gallery, "gallery manifest");
  ev->add_option("--label", ev_label, "row label for the report table");

  auto* audit = app.add_subcommand("audit-identity", "identity preservation accuracy of translated images");
  add_common(audit, o_audit);
  std::string audit_cls, audit_manifest, audit_label;
  audit->add_option("--classifier", audit_cls, "identity classifier checkpoint")->required();
  audit->add_option("--translated", audit_manifest, "translated manifest")->required();
  audit->add_option("--label", audit_label, "row label for the report table");

  auto* rep = app.add_subcommand("report", "aggregate summaries into a comparison table");
  add_common(rep, o_report);
  std::string rep_runs;
  rep->add_option("--runs", rep_runs, "directory scanned recursively for summary.json")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(o_synth);
    if (dsem->parsed()) {
      if (dsem_data.empty() && dsem_manifest.empty())
        throw ConfigError("pretrain-dsem: pass --data or --source-manifest");
      return cmd_pretrain_dsem(o_dsem, dsem_data, dsem_manifest);
    }
    if (gan->parsed()) return cmd_train_ipgan(o_gan, gan_data, gan_dsem, gan_resume);
    if (tr->parsed()) {
      if (tr_data.empty() && tr_manifest.empty())
        throw ConfigError("translate: pass --data or --source-manifest");
      return cmd_translate(o_tr, tr_gen, tr_data, tr_manifest, tr_cams);
    }
    if (reid->parsed()) return cmd_train_reid(o_reid, reid_manifest);
    if (ev->parsed()) {
      if (ev_data.empty() && (ev_query.empty() || ev_gallery.empty()))
        throw ConfigError("evaluate: pass --data or both --query and --gallery");
      return cmd_evaluate(o_eval, ev_model, ev_data, ev_query, ev_gallery, ev_label);
    }
    if (audit->parsed())
      return cmd_audit_identity(o_audit, audit_cls, audit_manifest, audit_label);
    if (rep->parsed()) return cmd_report(o_report, rep_runs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
