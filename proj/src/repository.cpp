#include "sillnet/repository.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "sillnet/rng.hpp"

namespace sillnet {

using json = nlohmann::json;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kRaw:
      return "raw";
    case Provenance::kCenter:
      return "center";
    case Provenance::kInterpolated:
      return "interpolated";
  }
  throw std::logic_error("unknown provenance tag");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "raw") return Provenance::kRaw;
  if (s == "center") return Provenance::kCenter;
  if (s == "interpolated") return Provenance::kInterpolated;
  throw std::invalid_argument("unknown provenance tag: " + s);
}

IlluminationRepository build_repository(const std::vector<SplitFeature>& features,
                                        const std::string& source, std::uint64_t seed) {
  if (features.empty()) throw std::invalid_argument("build repository: empty feature stream");
  const auto& first = features.front().illu;
  IlluminationRepository repo(first.dim(0), first.dim(1), first.dim(2), source, seed);
  for (const auto& sf : features) repo.add(sf.illu, Provenance::kRaw);
  return repo;
}

// --- SILR serialization ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'I', 'L', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 0;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Reader that tracks its own offset so parse errors can name the byte where
// the stream went wrong.
struct TrackedReader {
  std::ifstream in;
  std::size_t offset = 0;

  explicit TrackedReader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw RepositoryFormatError("cannot open repository file " + path, 0);
  }
  void read(void* dst, std::size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw RepositoryFormatError(std::string("truncated repository file while reading ") + what,
                                  offset);
    offset += n;
  }
  std::uint32_t read_u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
};

}  // namespace

void save_repository(const IlluminationRepository& repo, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write repository file " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(repo.size()));
  put_u32(out, static_cast<std::uint32_t>(repo.channels()));
  put_u32(out, static_cast<std::uint32_t>(repo.height()));
  put_u32(out, static_cast<std::uint32_t>(repo.width()));
  const std::uint8_t dtype = kDtypeFloat32;
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  static_assert(sizeof(float) == 4, "float32 storage assumed");
  for (std::size_t i = 0; i < repo.size(); ++i) {
    const Tensor& f = repo.feature(i);
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  json meta;
  meta["source"] = repo.source();
  meta["seed"] = repo.seed();
  meta["C"] = repo.channels();
  meta["H"] = repo.height();
  meta["W"] = repo.width();
  json prov = json::array();
  for (std::size_t i = 0; i < repo.size(); ++i) prov.push_back(to_string(repo.provenance(i)));
  meta["provenance"] = std::move(prov);
  const std::string meta_str = meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  if (!out) throw std::runtime_error("short write while saving repository to " + path);
}

IlluminationRepository load_repository(const std::string& path) {
  TrackedReader r(path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw RepositoryFormatError("bad magic; not a SILR repository file", 0);
  const std::size_t version_off = r.offset;
  const std::uint32_t version = r.read_u32("version");
  if (version != kVersion)
    throw RepositoryFormatError("unsupported repository version " + std::to_string(version),
                                version_off);
  const std::uint32_t count = r.read_u32("feature count");
  const std::uint32_t c = r.read_u32("channel count");
  const std::uint32_t h = r.read_u32("height");
  const std::uint32_t w = r.read_u32("width");
  const std::size_t dtype_off = r.offset;
  std::uint8_t dtype;
  r.read(&dtype, 1, "dtype code");
  if (dtype != kDtypeFloat32)
    throw RepositoryFormatError("unsupported dtype code " + std::to_string(dtype), dtype_off);
  if (c == 0 || h == 0 || w == 0)
    throw RepositoryFormatError("zero-sized feature grid in header", 12);

  std::vector<Tensor> features;
  features.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor f({static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
    r.read(f.data(), f.size() * sizeof(float), "feature data");
    features.push_back(std::move(f));
  }

  const std::size_t meta_off = r.offset;
  const std::uint32_t meta_len = r.read_u32("metadata length");
  std::string meta_str(meta_len, '\0');
  r.read(meta_str.data(), meta_len, "metadata block");

  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::parse_error& e) {
    throw RepositoryFormatError(std::string("unparseable metadata JSON: ") + e.what(), meta_off);
  }
  IlluminationRepository repo(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w),
                              meta.value("source", std::string()),
                              meta.value("seed", std::uint64_t{0}));
  const auto prov = meta.value("provenance", json::array());
  if (prov.size() != count)
    throw RepositoryFormatError("provenance list length does not match feature count", meta_off);
  for (std::uint32_t i = 0; i < count; ++i)
    repo.add(std::move(features[i]), provenance_from_string(prov[i].get<std::string>()));

  // Nothing may follow the metadata block.
  char extra;
  r.in.read(&extra, 1);
  if (r.in.gcount() != 0)
    throw RepositoryFormatError("trailing bytes after metadata block", r.offset);
  return repo;
}

// --- k-means selection -------------------------------------------------------

IlluminationRepository select_kmeans(const IlluminationRepository& repo, int k,
                                     std::uint64_t seed, KMeansTrace* trace) {
  const int n = static_cast<int>(repo.size());
  if (k < 1 || k > n)
    throw std::invalid_argument("select_kmeans: k must satisfy 1 <= k <= repository size");
  const std::size_t d = repo.feature(0).size();

  // Work in double so Lloyd's monotonicity survives accumulation rounding.
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = static_cast<double>(repo.feature(i)[j]);

  Rng rng(Rng::derive(seed, 0x6B6D));
  Eigen::MatrixXd centers(k, d);

  // k-means++ seeding: first center uniform, the rest D^2-weighted.
  centers.row(0) = x.row(rng.uniform_int(n));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int t = 1; t < k; ++t) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);  // all remaining points coincide with a center
    }
    centers.row(t) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(t)).rowwise().squaredNorm());
  }

  std::vector<int> assign(n, 0);
  std::vector<double> objective_hist;
  const int max_iters = 100;
  const double tol = 1e-4;
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment: squared distances via ||x||^2 - 2 x.c + ||c||^2; ties go to
    // the lowest center index.
    Eigen::MatrixXd dots = x * centers.transpose();  // [n,k]
    Eigen::VectorXd cnorm = centers.rowwise().squaredNorm();
    Eigen::VectorXd xnorm = x.rowwise().squaredNorm();
    double objective = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dist = xnorm(i) - 2.0 * dots(i, c) + cnorm(c);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      assign[i] = best;
      objective += std::max(0.0, best_d);
    }
    objective_hist.push_back(objective);

    // Update step: means of assigned members; empty clusters grab the point
    // farthest from its current center.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
      } else {
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double dist = (x.row(i) - centers.row(assign[i])).squaredNorm();
          if (dist > far_d) {
            far_d = dist;
            far = i;
          }
        }
        centers.row(c) = x.row(far);
      }
    }

    if (objective_hist.size() >= 2) {
      const double prev = objective_hist[objective_hist.size() - 2];
      if (std::abs(prev - objective) <= tol * std::max(1.0, prev)) break;
    }
  }

  if (trace) {
    trace->objective = objective_hist;
    trace->assignment = assign;
  }

  IlluminationRepository out(repo.channels(), repo.height(), repo.width(), repo.source(), seed);
  for (int c = 0; c < k; ++c) {
    Tensor f({repo.channels(), repo.height(), repo.width()});
    for (std::size_t j = 0; j < d; ++j) f[j] = static_cast<float>(centers(c, j));
    out.add(std::move(f), Provenance::kCenter);
  }
  return out;
}

IlluminationRepository expand_interpolate(const IlluminationRepository& repo, int n_exp,
                                          std::uint64_t seed) {
  if (n_exp < 1) throw std::invalid_argument("expand_interpolate: n_exp must be positive");
  const int n = static_cast<int>(repo.size());
  if (n < 2)
    throw std::invalid_argument("expand_interpolate: need at least 2 features to interpolate");
  Rng rng(Rng::derive(seed, 0x1E77));
  IlluminationRepository out(repo.channels(), repo.height(), repo.width(), repo.source(), seed);
  for (int e = 0; e < n_exp; ++e) {
    const int i = rng.uniform_int(n);
    const int j = rng.uniform_int(n);
    const float gamma = static_cast<float>(rng.uniform());
    const Tensor& a = repo.feature(static_cast<std::size_t>(i));
    const Tensor& b = repo.feature(static_cast<std::size_t>(j));
    Tensor f(a.shape());
    for (std::size_t t = 0; t < f.size(); ++t) f[t] = gamma * a[t] + (1.0f - gamma) * b[t];
    out.add(std::move(f), Provenance::kInterpolated);
  }
  return out;
}

}  // namespace sillnet
