#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipreid/datasets.hpp"
#include "ipreid/models.hpp"

namespace ipreid {

// Row-major feature rows aligned with a manifest's records.
struct FeatureMatrix {
  long rows = 0;
  long dims = 0;
  std::vector<Scalar> data;
  std::vector<int> identities;
  std::vector<int> cameras;
  bool l2_normalized = false;

  ConstSpan row(long r) const {
    return ConstSpan(data).subspan(r * dims, dims);
  }
};

struct EvalProtocol {
  std::string metric = "euclidean-l2";
  std::string exclusion = "same-identity-same-camera";
  std::string junk_rule = "identity<0-ignored";
  std::string tie_break = "stable-gallery-index";
};

struct EvalResult {
  std::vector<Scalar> cmc;          // rank-k accuracy, k = 1..K
  Scalar mAP = 0.0;
  std::vector<Scalar> per_query_ap; // evaluated queries, in query order
  long queries_evaluated = 0;
  long queries_skipped = 0;         // queries with no valid match
  EvalProtocol protocol;

  nlohmann::json to_json() const;
};

// Eval-mode embeddings (or pooled backbone features, per the model's
// feature_source), rows L2-normalized.
FeatureMatrix extract_features(const ModelParams& params, const DatasetManifest& manifest);

// Single-query protocol: rank gallery by ascending Euclidean distance,
// exclude same-identity+same-camera entries, ignore junk; AP over relevant
// ranks; CMC over first-hit ranks. Ties broken by gallery index.
EvalResult compute_cmc_map(const FeatureMatrix& queries, const FeatureMatrix& gallery,
                           int max_rank);

// Fraction of records whose predicted class maps back to the record's
// identity label under the classifier's vocabulary.
double identity_preservation_accuracy(const ModelParams& classifier,
                                      const DatasetManifest& translated);

// Structured-text report: protocol block, cmc array, mAP, skipped count.
void save_eval_report(const EvalResult& r, const std::filesystem::path& path);

}  // namespace ipreid
