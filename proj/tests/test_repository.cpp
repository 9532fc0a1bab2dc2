#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sillnet/manifest.hpp"
#include "sillnet/model.hpp"
#include "sillnet/repository.hpp"
#include "sillnet/rng.hpp"
#include "sillnet/tensor.hpp"

using namespace sillnet;

namespace {

std::filesystem::path fixture_dir() { return std::filesystem::path(SILLNET_FIXTURE_DIR); }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

IlluminationRepository random_repo(int count, int c, int h, int w, std::uint64_t seed) {
  IlluminationRepository repo(c, h, w, "test:" + std::to_string(seed), seed);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    Tensor f({c, h, w});
    for (auto& v : f) v = static_cast<float>(rng.normal());
    repo.add(f, static_cast<Provenance>(rng.uniform_int(3)));
  }
  return repo;
}

// Within-cluster sum of squared distances for a given assignment, with
// centers recomputed as the assigned means.
double sse_of_assignment(const std::vector<std::vector<double>>& pts,
                         const std::vector<int>& assign, int k) {
  const std::size_t d = pts[0].size();
  std::vector<std::vector<double>> mean(k, std::vector<double>(d, 0.0));
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++count[assign[i]];
    for (std::size_t j = 0; j < d; ++j) mean[assign[i]][j] += pts[i][j];
  }
  for (int c = 0; c < k; ++c) {
    if (count[c] == 0) return std::numeric_limits<double>::infinity();
    for (auto& v : mean[c]) v /= count[c];
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = pts[i][j] - mean[assign[i]][j];
      sse += diff * diff;
    }
  return sse;
}

// Globally optimal k-clustering by trying every assignment. Only feasible for
// tiny inputs, which is the point: it is an oracle, not an algorithm.
double best_sse_exhaustive(const std::vector<std::vector<double>>& pts, int k) {
  const std::size_t n = pts.size();
  std::vector<int> assign(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    best = std::min(best, sse_of_assignment(pts, assign, k));
    std::size_t i = 0;
    while (i < n && ++assign[i] == k) assign[i++] = 0;
    if (i == n) break;
  }
  return best;
}

std::vector<std::vector<double>> flatten_repo(const IlluminationRepository& repo) {
  std::vector<std::vector<double>> pts;
  for (std::size_t i = 0; i < repo.size(); ++i) {
    const auto& f = repo.feature(i);
    std::vector<double> p(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) p[j] = f[j];
    pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace

// ---------------------------------------------------------------------------
// collection and the copy contract
// ---------------------------------------------------------------------------

TEST_CASE("building a bank copies illumination halves in order, tagged raw") {
  Rng rng(201);
  std::vector<SplitFeature> feats;
  for (int i = 0; i < 4; ++i) {
    SplitFeature f{Tensor({2, 3, 3}), Tensor({2, 3, 3})};
    for (auto& v : f.sem) v = static_cast<float>(rng.normal());
    for (auto& v : f.illu) v = static_cast<float>(rng.normal());
    feats.push_back(std::move(f));
  }
  auto repo = build_repository(feats, "train:unit", 55);
  REQUIRE(repo.size() == 4);
  CHECK(repo.channels() == 2);
  CHECK(repo.height() == 3);
  CHECK(repo.width() == 3);
  CHECK(repo.source() == "train:unit");
  CHECK(repo.seed() == 55);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(bit_equal(repo.feature(i), feats[i].illu));
    CHECK(repo.provenance(i) == Provenance::kRaw);
  }

  // The bank owns copies: mutating the source features must not reach it.
  const Tensor snapshot = repo.feature(0);
  feats[0].illu.fill(123.0f);
  CHECK(bit_equal(repo.feature(0), snapshot));
}

TEST_CASE("adding a feature of the wrong shape is rejected") {
  IlluminationRepository repo(2, 3, 3, "unit", 0);
  CHECK_THROWS_AS(repo.add(Tensor({2, 3, 4}), Provenance::kRaw), std::invalid_argument);
  CHECK_THROWS_AS(repo.add(Tensor({3, 3}), Provenance::kRaw), std::invalid_argument);
  repo.add(Tensor({2, 3, 3}), Provenance::kRaw);
  CHECK(repo.size() == 1);
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

TEST_CASE("fifty random banks survive a save/load round trip bit for bit") {
  const auto path = temp_path("sillnet_roundtrip.silr");
  Rng meta(207);
  for (int trial = 0; trial < 50; ++trial) {
    const int count = meta.uniform_int(7);  // zero-feature banks must work too
    const int c = 1 + meta.uniform_int(4);
    const int h = 1 + meta.uniform_int(5);
    const int w = 1 + meta.uniform_int(5);
    auto repo = random_repo(count, c, h, w, 300 + trial);
    save_repository(repo, path.string());
    auto back = load_repository(path.string());
    REQUIRE(back.size() == repo.size());
    CHECK(back.channels() == c);
    CHECK(back.height() == h);
    CHECK(back.width() == w);
    CHECK(back.source() == repo.source());
    CHECK(back.seed() == repo.seed());
    for (std::size_t i = 0; i < repo.size(); ++i) {
      CHECK(bit_equal(back.feature(i), repo.feature(i)));
      CHECK(back.provenance(i) == repo.provenance(i));
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("saving is deterministic: same bank, same bytes") {
  auto repo = random_repo(3, 2, 2, 2, 99);
  const auto p1 = temp_path("sillnet_det_a.silr");
  const auto p2 = temp_path("sillnet_det_b.silr");
  save_repository(repo, p1.string());
  save_repository(repo, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("the golden bank file parses, re-saves identically, and hashes as frozen") {
  const auto golden = fixture_dir() / "golden_bank.silr";
  REQUIRE(std::filesystem::exists(golden));

  // Frozen at creation time; any byte change in the file or the format shows
  // up here first.
  CHECK(file_blob_sha1(golden.string()) == "2e637e29ca1e0149f2274557c574511958575f90");

  auto repo = load_repository(golden.string());
  REQUIRE(repo.size() == 5);
  CHECK(repo.channels() == 2);
  CHECK(repo.height() == 3);
  CHECK(repo.width() == 3);
  CHECK(repo.source() == "golden-fixture");
  CHECK(repo.seed() == 77);

  // The stored features are a pure function of the recorded recipe.
  for (int i = 0; i < 5; ++i) {
    Rng rng(Rng::derive(77, 1000 + i));
    Tensor want({2, 3, 3});
    for (auto& v : want) v = static_cast<float>(rng.normal());
    CHECK(bit_equal(repo.feature(static_cast<std::size_t>(i)), want));
    CHECK(repo.provenance(static_cast<std::size_t>(i)) ==
          (i < 3 ? Provenance::kRaw : Provenance::kCenter));
  }

  const auto resaved = temp_path("sillnet_golden_resave.silr");
  save_repository(repo, resaved.string());
  CHECK(slurp(resaved) == slurp(golden));
  std::filesystem::remove(resaved);
}

TEST_CASE("malformed bank files fail with the offending offset") {
  const auto golden = fixture_dir() / "golden_bank.silr";
  const std::string good = slurp(golden);
  const auto path = temp_path("sillnet_corrupt.silr");

  SUBCASE("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    spit(path, bad);
    try {
      load_repository(path.string());
      FAIL("expected a format error");
    } catch (const RepositoryFormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    spit(path, bad);
    try {
      load_repository(path.string());
      FAIL("expected a format error");
    } catch (const RepositoryFormatError& e) {
      CHECK(e.offset() == 4);
    }
  }
  SUBCASE("unknown dtype code") {
    std::string bad = good;
    bad[24] = 7;
    spit(path, bad);
    try {
      load_repository(path.string());
      FAIL("expected a format error");
    } catch (const RepositoryFormatError& e) {
      CHECK(e.offset() == 24);
    }
  }
  SUBCASE("truncated header") {
    spit(path, good.substr(0, 10));
    CHECK_THROWS_AS(load_repository(path.string()), RepositoryFormatError);
  }
  SUBCASE("truncated feature data") {
    spit(path, good.substr(0, 25 + 30));  // partway through the first feature
    CHECK_THROWS_AS(load_repository(path.string()), RepositoryFormatError);
  }
  SUBCASE("truncated metadata") {
    spit(path, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_repository(path.string()), RepositoryFormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_repository((fixture_dir() / "no_such.silr").string()),
                    RepositoryFormatError);
  }
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// representative selection
// ---------------------------------------------------------------------------

TEST_CASE("clustering {0,1,10,11} into two groups lands centers at 0.5 and 10.5") {
  IlluminationRepository repo(1, 1, 1, "unit", 0);
  for (float v : {0.0f, 1.0f, 10.0f, 11.0f}) {
    Tensor f({1, 1, 1});
    f[0] = v;
    repo.add(f, Provenance::kRaw);
  }
  KMeansTrace trace;
  auto picked = select_kmeans(repo, 2, 123, &trace);
  REQUIRE(picked.size() == 2);
  std::vector<float> centers = {picked.feature(0)[0], picked.feature(1)[0]};
  std::sort(centers.begin(), centers.end());
  CHECK(centers[0] == doctest::Approx(0.5f).epsilon(1e-5));
  CHECK(centers[1] == doctest::Approx(10.5f).epsilon(1e-5));
  CHECK(picked.provenance(0) == Provenance::kCenter);
  CHECK(picked.provenance(1) == Provenance::kCenter);

  // And the achieved objective is the exhaustive optimum for these points.
  const double want = best_sse_exhaustive(flatten_repo(repo), 2);
  REQUIRE_FALSE(trace.objective.empty());
  CHECK(trace.objective.back() == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("selection is bounded below by the exhaustive optimum and is stable") {
  for (int trial = 0; trial < 8; ++trial) {
    auto repo = random_repo(6, 1, 2, 1, 400 + trial);
    KMeansTrace trace;
    auto picked = select_kmeans(repo, 2, 500 + trial, &trace);
    const double want = best_sse_exhaustive(flatten_repo(repo), 2);
    REQUIRE_FALSE(trace.objective.empty());
    // No clustering can beat the exhaustive optimum; Lloyd may stall above it
    // but the gap on six points stays small.
    CHECK(trace.objective.back() >= want - 1e-9);
    CHECK(trace.objective.back() <= 1.5 * want + 1e-9);

    // Stability: every point's assigned center is (one of) its nearest.
    const auto pts = flatten_repo(repo);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      auto dist2 = [&](std::size_t c) {
        double s = 0.0;
        for (std::size_t j = 0; j < pts[i].size(); ++j) {
          const double d = pts[i][j] - picked.feature(c)[j];
          s += d * d;
        }
        return s;
      };
      const double assigned = dist2(static_cast<std::size_t>(trace.assignment[i]));
      for (std::size_t c = 0; c < picked.size(); ++c) CHECK(assigned <= dist2(c) + 1e-9);
    }
  }
}

TEST_CASE("the clustering objective never increases across iterations") {
  auto repo = random_repo(40, 2, 3, 3, 217);
  KMeansTrace trace;
  select_kmeans(repo, 5, 999, &trace);
  REQUIRE(trace.objective.size() >= 1);
  for (std::size_t i = 1; i < trace.objective.size(); ++i)
    CHECK(trace.objective[i] <= trace.objective[i - 1] + 1e-9);
  REQUIRE(trace.assignment.size() == repo.size());
  for (int a : trace.assignment) {
    CHECK(a >= 0);
    CHECK(a < 5);
  }
}

TEST_CASE("returned centers are the means of their assigned members") {
  auto repo = random_repo(30, 2, 2, 2, 223);
  KMeansTrace trace;
  auto picked = select_kmeans(repo, 4, 71, &trace);
  REQUIRE(picked.size() == 4);
  const std::size_t d = 2 * 2 * 2;
  std::vector<std::vector<double>> mean(4, std::vector<double>(d, 0.0));
  std::vector<int> count(4, 0);
  for (std::size_t i = 0; i < repo.size(); ++i) {
    ++count[trace.assignment[i]];
    for (std::size_t j = 0; j < d; ++j) mean[trace.assignment[i]][j] += repo.feature(i)[j];
  }
  for (int c = 0; c < 4; ++c) {
    REQUIRE(count[c] > 0);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(picked.feature(c)[j] == doctest::Approx(mean[c][j] / count[c]).epsilon(1e-5));
  }
}

TEST_CASE("selecting as many centers as features reproduces the bank") {
  auto repo = random_repo(5, 1, 2, 2, 227);
  auto picked = select_kmeans(repo, 5, 31, nullptr);
  REQUIRE(picked.size() == 5);
  // Each feature is its own cluster; centers coincide with members, possibly
  // reordered.
  for (std::size_t i = 0; i < repo.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < picked.size(); ++j)
      if (max_abs_diff(repo.feature(i), picked.feature(j)) < 1e-6) found = true;
    CHECK(found);
  }
}

TEST_CASE("selection is deterministic in the seed and validates its inputs") {
  auto repo = random_repo(20, 2, 2, 2, 229);
  auto a = select_kmeans(repo, 3, 11, nullptr);
  auto b = select_kmeans(repo, 3, 11, nullptr);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a.feature(i), b.feature(i)));

  CHECK_THROWS_AS(select_kmeans(repo, 0, 1, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(select_kmeans(repo, 21, 1, nullptr), std::invalid_argument);
  IlluminationRepository empty(1, 1, 1, "unit", 0);
  CHECK_THROWS_AS(select_kmeans(empty, 1, 1, nullptr), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// interpolation expansion
// ---------------------------------------------------------------------------

TEST_CASE("expansion emits exactly the requested number of interpolated features") {
  auto repo = random_repo(6, 2, 2, 2, 233);
  auto grown = expand_interpolate(repo, 10, 41);
  REQUIRE(grown.size() == 10);
  CHECK(grown.channels() == repo.channels());
  CHECK(grown.height() == repo.height());
  CHECK(grown.width() == repo.width());
  for (std::size_t i = 0; i < grown.size(); ++i)
    CHECK(grown.provenance(i) == Provenance::kInterpolated);
}

TEST_CASE("every interpolated feature lies on a segment between two originals") {
  auto repo = random_repo(5, 1, 2, 1, 239);
  auto grown = expand_interpolate(repo, 25, 43);
  const std::size_t d = 2;
  for (std::size_t i = 0; i < grown.size(); ++i) {
    // Find some pair (a, b) and gamma in [0,1] with f = gamma a + (1-gamma) b.
    bool explained = false;
    for (std::size_t a = 0; a < repo.size() && !explained; ++a)
      for (std::size_t b = 0; b < repo.size() && !explained; ++b) {
        // Solve for gamma from the first coordinate where a and b differ,
        // then check the rest.
        double gamma = -1.0;
        bool ok = true;
        for (std::size_t j = 0; j < d; ++j) {
          const double av = repo.feature(a)[j], bv = repo.feature(b)[j];
          const double fv = grown.feature(i)[j];
          if (std::abs(av - bv) > 1e-6) {
            const double g = (fv - bv) / (av - bv);
            if (gamma < 0.0)
              gamma = g;
            else if (std::abs(g - gamma) > 1e-4)
              ok = false;
          } else if (std::abs(fv - av) > 1e-4) {
            ok = false;
          }
        }
        if (ok && gamma >= -1e-4 && gamma <= 1.0 + 1e-4) explained = true;
      }
    CHECK(explained);
  }
}

TEST_CASE("expansion is deterministic in the seed and validates its inputs") {
  auto repo = random_repo(4, 1, 2, 2, 241);
  auto a = expand_interpolate(repo, 7, 5);
  auto b = expand_interpolate(repo, 7, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a.feature(i), b.feature(i)));

  auto c = expand_interpolate(repo, 7, 6);
  bool all_same = true;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!bit_equal(a.feature(i), c.feature(i))) all_same = false;
  CHECK_FALSE(all_same);

  CHECK_THROWS_AS(expand_interpolate(repo, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(expand_interpolate(repo, -1, 1), std::invalid_argument);
  IlluminationRepository single(1, 1, 1, "unit", 0);
  single.add(Tensor({1, 1, 1}), Provenance::kRaw);
  CHECK_THROWS_AS(expand_interpolate(single, 3, 1), std::invalid_argument);
}

TEST_CASE("provenance labels round-trip through their string names") {
  CHECK(to_string(Provenance::kRaw) == "raw");
  CHECK(to_string(Provenance::kCenter) == "center");
  CHECK(to_string(Provenance::kInterpolated) == "interpolated");
}
