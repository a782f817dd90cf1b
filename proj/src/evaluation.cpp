#include "ipreid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace ipreid {

nlohmann::json EvalResult::to_json() const {
  return {{"cmc", cmc},
          {"mAP", mAP},
          {"queries_evaluated", queries_evaluated},
          {"queries_skipped", queries_skipped},
          {"protocol",
           {{"metric", protocol.metric},
            {"exclusion", protocol.exclusion},
            {"junk_rule", protocol.junk_rule},
            {"tie_break", protocol.tie_break}}}};
}

FeatureMatrix extract_features(const ModelParams& params, const DatasetManifest& manifest) {
  check(params.arch == "reid", "extract_features: expected a classifier checkpoint");
  ReIDNet net = ReIDNet::from_params(params);
  const auto& cfg = net.config();
  check(cfg.height == manifest.height && cfg.width == manifest.width &&
            cfg.channels == manifest.channels,
        "extract_features: manifest image size " + std::to_string(manifest.height) + "x" +
            std::to_string(manifest.width) + " does not match model input " +
            std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  const bool use_embedding = cfg.feature_source == "embedding";
  FeatureMatrix fm;
  fm.rows = static_cast<long>(manifest.records.size());
  fm.dims = use_embedding ? cfg.embedding_dim : cfg.stage_channels.back();
  fm.data.resize(fm.rows * fm.dims);
  fm.identities.reserve(manifest.records.size());
  fm.cameras.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    fm.identities.push_back(r.identity);
    fm.cameras.push_back(r.camera);
  }
  const int batch = 64;
  for (long start = 0; start < fm.rows; start += batch) {
    int bn = static_cast<int>(std::min<long>(batch, fm.rows - start));
    Tensor x(Shape{bn, manifest.channels, manifest.height, manifest.width});
    for (int i = 0; i < bn; ++i) {
      Tensor one = load_record_image(manifest, static_cast<std::size_t>(start + i));
      x.set_sample(i, one, 0);
    }
    ReIDOut out = net.forward_eval(x, params);
    const Tensor& feat = use_embedding ? out.embedding : out.backbone_pool;
    for (int i = 0; i < bn; ++i) {
      const Scalar* src = feat.sample(i);
      Scalar norm = 0.0;
      for (long d = 0; d < fm.dims; ++d) norm += src[d] * src[d];
      norm = std::sqrt(norm);
      Scalar inv = norm > 0 ? 1.0 / norm : 0.0;
      Scalar* dst = fm.data.data() + (start + i) * fm.dims;
      for (long d = 0; d < fm.dims; ++d) dst[d] = src[d] * inv;
    }
  }
  fm.l2_normalized = true;
  return fm;
}

EvalResult compute_cmc_map(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                           int max_rank) {
  check(max_rank >= 1, "compute_cmc_map: max_rank must be >= 1");
  check(queries.dims == gallery.dims,
        "compute_cmc_map: feature dimension mismatch (" + std::to_string(queries.dims) +
            " vs " + std::to_string(gallery.dims) + ")");
  EvalResult res;
  res.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);

  std::vector<std::pair<Scalar, long>> order;  // (distance, gallery index)
  for (long q = 0; q < queries.rows; ++q) {
    const int q_id = queries.identities[static_cast<std::size_t>(q)];
    const int q_cam = queries.cameras[static_cast<std::size_t>(q)];
    ConstSpan qf = queries.row(q);
    order.clear();
    for (long g = 0; g < gallery.rows; ++g) {
      const int g_id = gallery.identities[static_cast<std::size_t>(g)];
      if (g_id < 0) continue;                        // junk: ignored entirely
      if (g_id == q_id && gallery.cameras[static_cast<std::size_t>(g)] == q_cam)
        continue;                                    // same identity + same camera
      ConstSpan gf = gallery.row(g);
      Scalar d2 = 0.0;
      for (long k = 0; k < queries.dims; ++k) {
        Scalar d = qf[k] - gf[k];
        d2 += d * d;
      }
      order.emplace_back(d2, g);
    }
    // stable under distance ties: gallery index decides
    std::sort(order.begin(), order.end());
    long num_relevant = 0;
    for (const auto& [_, g] : order)
      if (gallery.identities[static_cast<std::size_t>(g)] == q_id) ++num_relevant;
    if (num_relevant == 0) {
      ++res.queries_skipped;
      continue;
    }
    long hits = 0;
    long first_hit_rank = 0;
    Scalar ap = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      long g = order[pos].second;
      if (gallery.identities[static_cast<std::size_t>(g)] == q_id) {
        ++hits;
        long rank = static_cast<long>(pos) + 1;
        if (hits == 1) first_hit_rank = rank;
        ap += static_cast<Scalar>(hits) / static_cast<Scalar>(rank);
        if (hits == num_relevant) break;
      }
    }
    ap /= static_cast<Scalar>(num_relevant);
    res.per_query_ap.push_back(ap);
    ++res.queries_evaluated;
    for (long k = first_hit_rank; k <= max_rank; ++k)
      res.cmc[static_cast<std::size_t>(k - 1)] += 1.0;
  }
  check(res.queries_evaluated > 0, "compute_cmc_map: no query has a valid match");
  for (auto& v : res.cmc) v /= static_cast<Scalar>(res.queries_evaluated);
  res.mAP = std::accumulate(res.per_query_ap.begin(), res.per_query_ap.end(), 0.0) /
            static_cast<Scalar>(res.queries_evaluated);
  return res;
}

double identity_preservation_accuracy(const ModelParams& classifier,
                                      const DatasetManifest& translated) {
  check(classifier.arch == "reid",
        "identity_preservation_accuracy: expected a classifier checkpoint");
  ReIDNet net = ReIDNet::from_params(classifier);
  const auto& cfg = net.config();
  check(!cfg.vocabulary.empty(),
        "identity_preservation_accuracy: classifier has no identity vocabulary");
  std::set<int> vocab(cfg.vocabulary.begin(), cfg.vocabulary.end());
  for (const auto& r : translated.records) {
    check(vocab.count(r.identity) > 0,
          "identity_preservation_accuracy: identity " + std::to_string(r.identity) +
              " not in classifier vocabulary");
  }
  check(!translated.records.empty(), "identity_preservation_accuracy: empty manifest");
  long correct = 0;
  const int batch = 64;
  const long rows = static_cast<long>(translated.records.size());
  for (long start = 0; start < rows; start += batch) {
    int bn = static_cast<int>(std::min<long>(batch, rows - start));
    Tensor x(Shape{bn, translated.channels, translated.height, translated.width});
    for (int i = 0; i < bn; ++i) {
      Tensor one = load_record_image(translated, static_cast<std::size_t>(start + i));
      x.set_sample(i, one, 0);
    }
    ReIDOut out = net.forward_eval(x, classifier);
    for (int i = 0; i < bn; ++i) {
      const Scalar* logits = out.logits.sample(i);
      int best = 0;
      for (int k = 1; k < cfg.num_classes; ++k)
        if (logits[k] > logits[best]) best = k;
      if (cfg.vocabulary[static_cast<std::size_t>(best)] ==
          translated.records[static_cast<std::size_t>(start + i)].identity)
        ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(rows);
}

void save_eval_report(const EvalResult& r, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write report: " + path.string());
  f << "protocol.metric=" << r.protocol.metric << "\n";
  f << "protocol.exclusion=" << r.protocol.exclusion << "\n";
  f << "protocol.junk_rule=" << r.protocol.junk_rule << "\n";
  f << "protocol.tie_break=" << r.protocol.tie_break << "\n";
  f << "queries_evaluated=" << r.queries_evaluated << "\n";
  f << "queries_skipped=" << r.queries_skipped << "\n";
  f << "mAP=" << r.mAP << "\n";
  f << "cmc=";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) {
    if (k) f << ",";
    f << r.cmc[k];
  }
  f << "\n";
  if (!f) throw IoError("report write failed: " + path.string());
}

}  // namespace ipreid
