#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "ipreid/evaluation.hpp"
#include "test_util.hpp"

using namespace ipreid;
using namespace ipreid::testutil;

namespace {

// Independent oracle: explicit loops, selection-sort ranking, no shared code
// with compute_cmc_map.
struct OracleResult {
  std::vector<double> cmc;
  double map = 0;
  long evaluated = 0;
  long skipped = 0;
};

OracleResult oracle_cmc_map(const FeatureMatrix& q, const FeatureMatrix& g, int K) {
  OracleResult res;
  res.cmc.assign(static_cast<std::size_t>(K), 0.0);
  double ap_sum = 0;
  for (long qi = 0; qi < q.rows; ++qi) {
    // candidate list after junk and same-id-same-cam exclusion
    std::vector<long> cand;
    for (long gi = 0; gi < g.rows; ++gi) {
      if (g.identities[gi] == -1) continue;
      if (g.identities[gi] == q.identities[qi] && g.cameras[gi] == q.cameras[qi])
        continue;
      cand.push_back(gi);
    }
    std::vector<double> dist(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) {
      double s = 0;
      for (long d = 0; d < q.dims; ++d) {
        double diff = q.data[qi * q.dims + d] - g.data[cand[c] * g.dims + d];
        s += diff * diff;
      }
      dist[c] = std::sqrt(s);
    }
    // selection sort, ties resolved by gallery index (cand is index-ordered)
    std::vector<long> ranked;
    std::vector<bool> used(cand.size(), false);
    for (std::size_t r = 0; r < cand.size(); ++r) {
      long best = -1;
      for (std::size_t c = 0; c < cand.size(); ++c) {
        if (used[c]) continue;
        if (best < 0 || dist[c] < dist[static_cast<std::size_t>(best)] ||
            (dist[c] == dist[static_cast<std::size_t>(best)] &&
             cand[c] < cand[static_cast<std::size_t>(best)]))
          best = static_cast<long>(c);
      }
      used[static_cast<std::size_t>(best)] = true;
      ranked.push_back(cand[static_cast<std::size_t>(best)]);
    }
    long total_good = 0;
    for (long gi : ranked)
      if (g.identities[gi] == q.identities[qi]) ++total_good;
    if (total_good == 0) {
      ++res.skipped;
      continue;
    }
    ++res.evaluated;
    long seen_good = 0;
    double ap = 0;
    long first = -1;
    for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
      if (g.identities[ranked[pos]] == q.identities[qi]) {
        ++seen_good;
        if (first < 0) first = static_cast<long>(pos) + 1;
        ap += static_cast<double>(seen_good) / static_cast<double>(pos + 1);
      }
    }
    ap_sum += ap / static_cast<double>(total_good);
    for (int k = 1; k <= K; ++k)
      if (first <= k) res.cmc[static_cast<std::size_t>(k - 1)] += 1.0;
  }
  for (auto& v : res.cmc) v /= static_cast<double>(res.evaluated);
  res.map = ap_sum / static_cast<double>(res.evaluated);
  return res;
}

FeatureMatrix make_fm(const std::vector<std::vector<Scalar>>& rows,
                      const std::vector<int>& ids, const std::vector<int>& cams) {
  FeatureMatrix fm;
  fm.rows = static_cast<long>(rows.size());
  fm.dims = rows.empty() ? 0 : static_cast<long>(rows[0].size());
  for (const auto& r : rows) fm.data.insert(fm.data.end(), r.begin(), r.end());
  fm.identities = ids;
  fm.cameras = cams;
  return fm;
}

FeatureMatrix random_fm(Rng& rng, long rows, long dims, int max_id, int max_cam,
                        bool with_junk, double dup_prob = 0.0) {
  FeatureMatrix fm;
  fm.rows = rows;
  fm.dims = dims;
  fm.data.resize(rows * dims);
  for (auto& v : fm.data) v = rng.uniform(-1, 1);
  if (dup_prob > 0) {
    // duplicated feature rows force distance ties
    for (long r = 1; r < rows; ++r) {
      if (rng.uniform() < dup_prob) {
        long src = rng.uniform_int(static_cast<int>(r));
        for (long d = 0; d < dims; ++d) fm.data[r * dims + d] = fm.data[src * dims + d];
      }
    }
  }
  for (long r = 0; r < rows; ++r) {
    int id = rng.uniform_int(max_id);
    if (with_junk && rng.uniform() < 0.08) id = -1;
    fm.identities.push_back(id);
    fm.cameras.push_back(1 + rng.uniform_int(max_cam));
  }
  return fm;
}

}  // namespace

TEST_CASE("worked retrieval examples") {
  // query (id 5, cam 1); gallery at distances 0.1 / 0.2 / 0.3
  // place points on a line so Euclidean distances are exact
  FeatureMatrix q = make_fm({{0.0}}, {5}, {1});
  FeatureMatrix g = make_fm({{0.1}, {0.2}, {0.3}}, {5, 3, 5}, {2, 1, 3});
  EvalResult res = compute_cmc_map(q, g, 3);
  CHECK(res.cmc[0] == doctest::Approx(1.0));
  CHECK(res.mAP == doctest::Approx((1.0 / 1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-9));

  // same-identity same-camera entry is excluded from the ranking
  FeatureMatrix g2 = make_fm({{0.05}, {0.1}, {0.2}}, {5, 5, 3}, {1, 2, 1});
  res = compute_cmc_map(q, g2, 3);
  CHECK(res.cmc[0] == doctest::Approx(1.0));
  CHECK(res.queries_evaluated == 1);

  // single query whose nearest neighbour is its only relevant item
  FeatureMatrix g3 = make_fm({{0.01}, {0.9}}, {5, 3}, {2, 1});
  res = compute_cmc_map(q, g3, 5);
  for (auto v : res.cmc) CHECK(v == doctest::Approx(1.0));
  CHECK(res.mAP == doctest::Approx(1.0));
}

TEST_CASE("agreement with the brute-force oracle on random instances") {
  Rng rng(2024);
  for (int inst = 0; inst < 200; ++inst) {
    long nq = 1 + rng.uniform_int(100);
    long ng = 2 + rng.uniform_int(299);
    long dims = 1 + rng.uniform_int(8);
    int ids = 1 + rng.uniform_int(12);
    int cams = 1 + rng.uniform_int(5);
    FeatureMatrix q = random_fm(rng, nq, dims, ids, cams, false);
    FeatureMatrix g = random_fm(rng, ng, dims, ids, cams, true, 0.2);
    int K = 1 + rng.uniform_int(20);

    OracleResult expect = oracle_cmc_map(q, g, K);
    if (expect.evaluated == 0) {
      CHECK_THROWS_AS(compute_cmc_map(q, g, K), std::runtime_error);
      continue;
    }
    EvalResult got = compute_cmc_map(q, g, K);
    CHECK(got.queries_evaluated == expect.evaluated);
    CHECK(got.queries_skipped == expect.skipped);
    CHECK(std::abs(got.mAP - expect.map) < 1e-9);
    for (int k = 0; k < K; ++k)
      CHECK(std::abs(got.cmc[static_cast<std::size_t>(k)] -
                     expect.cmc[static_cast<std::size_t>(k)]) < 1e-9);
  }
}

TEST_CASE("cmc is monotone and within range") {
  Rng rng(77);
  for (int inst = 0; inst < 30; ++inst) {
    FeatureMatrix q = random_fm(rng, 20, 4, 6, 3, false);
    FeatureMatrix g = random_fm(rng, 60, 4, 6, 3, true);
    OracleResult expect = oracle_cmc_map(q, g, 10);
    if (expect.evaluated == 0) continue;
    EvalResult res = compute_cmc_map(q, g, 10);
    CHECK(res.mAP >= 0.0);
    CHECK(res.mAP <= 1.0);
    for (std::size_t k = 0; k < res.cmc.size(); ++k) {
      CHECK(res.cmc[k] >= 0.0);
      CHECK(res.cmc[k] <= 1.0);
      if (k) CHECK(res.cmc[k] >= res.cmc[k - 1]);
    }
  }
}

TEST_CASE("junk gallery entries never change the result") {
  Rng rng(101);
  FeatureMatrix q = random_fm(rng, 15, 5, 5, 3, false);
  FeatureMatrix g = random_fm(rng, 50, 5, 5, 3, false);
  EvalResult base = compute_cmc_map(q, g, 10);

  FeatureMatrix withjunk = g;
  Rng rng2(102);
  for (int extra = 0; extra < 20; ++extra) {
    for (long d = 0; d < g.dims; ++d) withjunk.data.push_back(rng2.uniform(-1, 1));
    withjunk.identities.push_back(-1);
    withjunk.cameras.push_back(1 + rng2.uniform_int(3));
    ++withjunk.rows;
  }
  EvalResult res = compute_cmc_map(q, withjunk, 10);
  CHECK(res.mAP == doctest::Approx(base.mAP).epsilon(1e-12));
  for (std::size_t k = 0; k < res.cmc.size(); ++k)
    CHECK(res.cmc[k] == doctest::Approx(base.cmc[k]).epsilon(1e-12));
}

TEST_CASE("ranking depends only on feature direction after normalization") {
  Rng rng(103);
  FeatureMatrix q = random_fm(rng, 10, 6, 4, 2, false);
  FeatureMatrix g = random_fm(rng, 40, 6, 4, 2, false);
  auto normalize = [](FeatureMatrix& fm) {
    for (long r = 0; r < fm.rows; ++r) {
      double n = 0;
      for (long d = 0; d < fm.dims; ++d) n += fm.data[r * fm.dims + d] * fm.data[r * fm.dims + d];
      n = std::sqrt(n);
      for (long d = 0; d < fm.dims; ++d) fm.data[r * fm.dims + d] /= n;
    }
    fm.l2_normalized = true;
  };
  FeatureMatrix qs = q, gs = g;
  for (auto& v : qs.data) v *= 37.5;
  for (auto& v : gs.data) v *= 0.004;
  normalize(q);
  normalize(g);
  normalize(qs);
  normalize(gs);
  EvalResult a = compute_cmc_map(q, g, 10);
  EvalResult b = compute_cmc_map(qs, gs, 10);
  CHECK(a.mAP == doctest::Approx(b.mAP).epsilon(1e-12));
  for (std::size_t k = 0; k < a.cmc.size(); ++k)
    CHECK(a.cmc[k] == doctest::Approx(b.cmc[k]).epsilon(1e-12));
}

TEST_CASE("dimension and rank validation") {
  FeatureMatrix q = make_fm({{0.0, 1.0}}, {1}, {1});
  FeatureMatrix g = make_fm({{0.0}}, {1}, {2});
  CHECK_THROWS_WITH_AS(compute_cmc_map(q, g, 5), doctest::Contains("dimension"),
                       std::runtime_error);
  FeatureMatrix g2 = make_fm({{0.0, 1.0}}, {1}, {2});
  CHECK_THROWS_AS(compute_cmc_map(q, g2, 0), std::runtime_error);
}

TEST_CASE("feature extraction normalizes rows and follows manifest order") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ipreid_test_eval_feat";
  fs::remove_all(dir);
  fs::create_directories(dir / "imgs");

  DatasetManifest m;
  m.name = "feat";
  m.num_cameras = 2;
  m.num_identities = 0;
  m.height = 16;
  m.width = 8;
  m.channels = 3;
  m.base_dir = dir;
  Rng rng(11);
  for (int i = 0; i < 5; ++i) {
    Tensor img = random_tensor(Shape{1, 3, 16, 8}, rng);
    std::string rel = "imgs/" + std::to_string(i) + ".ppm";
    save_image(img, dir / rel);
    m.records.push_back({rel, 10 + i, 1 + (i % 2), Split::kGallery, false, ""});
  }
  // duplicate of record 0 appended
  m.records.push_back(m.records[0]);

  ReIDConfig rc;
  rc.stage_channels = {4, 6, 8, 8};
  rc.blocks_per_stage = {1, 1, 1, 1};
  rc.embedding_dim = 16;
  rc.num_classes = 3;
  rc.height = 16;
  rc.width = 8;
  rc.channels = 3;
  ReIDNet net(rc);
  ModelParams p = net.init_params(5);

  FeatureMatrix fm = extract_features(p, m);
  CHECK(fm.rows == 6);
  CHECK(fm.dims == 16);
  CHECK(fm.l2_normalized);
  for (long r = 0; r < fm.rows; ++r) {
    double n = 0;
    for (long d = 0; d < fm.dims; ++d) n += fm.data[r * fm.dims + d] * fm.data[r * fm.dims + d];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // duplicate image -> identical rows
  for (long d = 0; d < fm.dims; ++d)
    CHECK(fm.data[0 * fm.dims + d] == doctest::Approx(fm.data[5 * fm.dims + d]));

  // row order matches record order: permute the manifest and compare
  DatasetManifest shuffled = m;
  std::swap(shuffled.records[1], shuffled.records[3]);
  FeatureMatrix fs2 = extract_features(p, shuffled);
  for (long d = 0; d < fm.dims; ++d) {
    CHECK(fs2.data[1 * fm.dims + d] == doctest::Approx(fm.data[3 * fm.dims + d]));
    CHECK(fs2.data[3 * fm.dims + d] == doctest::Approx(fm.data[1 * fm.dims + d]));
  }
  fs::remove_all(dir);
}

TEST_CASE("random classifier scores near chance on identity preservation") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ipreid_test_eval_chance";
  fs::remove_all(dir);
  fs::create_directories(dir / "imgs");

  const int N = 5;
  DatasetManifest m;
  m.name = "chance";
  m.num_cameras = 1;
  m.height = 16;
  m.width = 8;
  m.channels = 3;
  m.base_dir = dir;
  Rng rng(21);
  const int rows = 400;
  for (int i = 0; i < rows; ++i) {
    Tensor img = random_tensor(Shape{1, 3, 16, 8}, rng);
    std::string rel = "imgs/" + std::to_string(i) + ".ppm";
    save_image(img, dir / rel);
    m.records.push_back({rel, i % N, 1, Split::kTrain, false, ""});
  }
  m.num_identities = N;

  ReIDConfig rc;
  rc.stage_channels = {4, 4, 6, 6};
  rc.blocks_per_stage = {1, 1, 1, 1};
  rc.embedding_dim = 8;
  rc.num_classes = N;
  rc.vocabulary = {0, 1, 2, 3, 4};
  rc.height = 16;
  rc.width = 8;
  rc.channels = 3;
  ReIDNet net(rc);
  ModelParams p = net.init_params(123);
  double acc = identity_preservation_accuracy(p, m);
  // binomial 3-sigma band around 1/N
  double sigma = std::sqrt((1.0 / N) * (1 - 1.0 / N) / rows);
  CHECK(acc > 1.0 / N - 3 * sigma - 1e-9);
  CHECK(acc < 1.0 / N + 3 * sigma + 1e-9);
  fs::remove_all(dir);
}
