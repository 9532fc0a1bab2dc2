#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sillnet/model.hpp"
#include "sillnet/tensor.hpp"

namespace sillnet {

// Where a stored feature came from: straight out of the encoder, a k-means
// cluster center, or a random interpolation between two stored features.
enum class Provenance { kRaw, kCenter, kInterpolated };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// Thrown by load_repository when the byte stream does not parse; carries the
// file offset where the trouble was found.
class RepositoryFormatError : public std::runtime_error {
 public:
  RepositoryFormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// A bank of illumination feature grids, all [C,H,W] float32, with per-feature
// provenance and enough metadata to know where the bank came from.
class IlluminationRepository {
 public:
  IlluminationRepository() = default;
  IlluminationRepository(int c, int h, int w, std::string source, std::uint64_t seed)
      : c_(c), h_(h), w_(w), source_(std::move(source)), seed_(seed) {
    if (c <= 0 || h <= 0 || w <= 0)
      throw std::invalid_argument("repository: grid dimensions must be positive");
  }

  void add(Tensor feature, Provenance p) {
    if (feature.rank() != 3 || feature.dim(0) != c_ || feature.dim(1) != h_ ||
        feature.dim(2) != w_)
      throw std::invalid_argument("repository: feature grid size does not match the bank");
    features_.push_back(std::move(feature));
    provenance_.push_back(p);
  }

  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  const Tensor& feature(std::size_t i) const { return features_.at(i); }
  Provenance provenance(std::size_t i) const { return provenance_.at(i); }

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  const std::string& source() const { return source_; }
  std::uint64_t seed() const { return seed_; }

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  std::string source_;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> features_;
  std::vector<Provenance> provenance_;
};

// Collects the illumination halves of already-encoded features, in input
// order, all tagged raw.
IlluminationRepository build_repository(const std::vector<SplitFeature>& features,
                                        const std::string& source, std::uint64_t seed);

// Binary bank format: "SILR" magic, u32 version, u32 count, u32 C, u32 H,
// u32 W, u8 dtype code (0 = float32), the features contiguous row-major
// little-endian, then a u32-length-prefixed JSON metadata block.
void save_repository(const IlluminationRepository& repo, const std::string& path);
IlluminationRepository load_repository(const std::string& path);

// Exposed for tests: the per-iteration Lloyd objective (sum of squared
// distances to the assigned center) and the final assignment.
struct KMeansTrace {
  std::vector<double> objective;
  std::vector<int> assignment;
};

// k-means in flattened feature space (k-means++ seeding, Lloyd iterations,
// empty clusters reseeded to the farthest point). Returns a bank of k centers
// tagged as centers.
IlluminationRepository select_kmeans(const IlluminationRepository& repo, int k,
                                     std::uint64_t seed, KMeansTrace* trace = nullptr);

// Draws n_exp random pairs (with replacement) and linearly interpolates each
// with its own uniform coefficient; output features are tagged interpolated.
IlluminationRepository expand_interpolate(const IlluminationRepository& repo, int n_exp,
                                          std::uint64_t seed);

}  // namespace sillnet
