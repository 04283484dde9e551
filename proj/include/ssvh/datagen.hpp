#pragma once

// Synthetic clustered frame sequences and the feature / label file formats.
//
// SSVH-FEAT layout (little-endian):
//   "SSVH-FEAT" | u32 version=1 | u64 n | u64 M | u64 D | u32 dtype=1 (f32)
//   | n*M*D f32, video-major then frame then dimension
// SSVH-LABL layout:
//   "SSVH-LABL" | u64 n | n u32 labels

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssvh/io.hpp"
#include "ssvh/numerics.hpp"

namespace ssvh {

inline constexpr std::string_view kFeatureMagic = "SSVH-FEAT";
inline constexpr std::string_view kLabelMagic = "SSVH-LABL";
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;

struct Dataset {
  std::size_t frames = 0;  // M
  std::size_t dim = 0;     // D
  std::vector<Matrix> videos;
  std::optional<std::vector<std::uint32_t>> labels;

  std::size_t size() const noexcept { return videos.size(); }
};

struct SyntheticSpec {
  std::size_t n_videos = 200;
  std::size_t n_clusters = 4;
  std::size_t frames = 24;
  std::size_t dim = 64;
  double cluster_separation = 10.0;
  double within_noise = 0.5;
  double temporal_drift = 0.2;
  std::uint64_t seed = 42;
};

// Cluster centers sit on a sphere of radius max(separation, 1) with pairwise
// distance >= separation (rejection sampled). Video k belongs to cluster
// k mod n_clusters; frame t = center + t * drift * direction + noise, with a
// unit drift direction per cluster.
inline Dataset generate(const SyntheticSpec& spec) {
  require(spec.n_clusters > 0 && spec.n_videos >= spec.n_clusters, ErrorKind::kUsage,
          "generate: need n_videos >= n_clusters > 0");
  require(spec.frames > 0 && spec.dim > 0, ErrorKind::kUsage, "generate: frames and dim must be positive");
  require(spec.cluster_separation >= 0.0 && spec.within_noise >= 0.0, ErrorKind::kUsage,
          "generate: separation and noise must be non-negative");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_unit = [&] {
    Vector v(spec.dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& x : v) {
        x = gauss(rng);
        norm += x * x;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  };

  const double radius = std::max(spec.cluster_separation, 1.0);
  std::vector<Vector> centers;
  constexpr int kMaxAttempts = 10000;
  for (std::size_t c = 0; c < spec.n_clusters; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Vector cand = random_unit();
      for (double& x : cand) x *= radius;
      placed = true;
      for (const Vector& other : centers) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < spec.dim; ++k) d2 += (cand[k] - other[k]) * (cand[k] - other[k]);
        if (std::sqrt(d2) < spec.cluster_separation) {
          placed = false;
          break;
        }
      }
      if (placed) centers.push_back(std::move(cand));
    }
    require(placed, ErrorKind::kUsage,
            "generate: cannot place " + std::to_string(spec.n_clusters) +
                " centers at separation " + std::to_string(spec.cluster_separation) + " in " +
                std::to_string(spec.dim) + " dimensions");
  }
  std::vector<Vector> directions;
  for (std::size_t c = 0; c < spec.n_clusters; ++c) directions.push_back(random_unit());

  Dataset ds{spec.frames, spec.dim, {}, std::vector<std::uint32_t>()};
  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    const std::size_t c = v % spec.n_clusters;
    Matrix video(spec.frames, spec.dim);
    for (std::size_t t = 0; t < spec.frames; ++t)
      for (std::size_t k = 0; k < spec.dim; ++k) {
        const double noise = spec.within_noise > 0.0 ? spec.within_noise * gauss(rng) : 0.0;
        // Stored at feature-file precision so a written dataset reads back identical.
        video(t, k) = static_cast<double>(static_cast<float>(
            centers[c][k] + double(t) * spec.temporal_drift * directions[c][k] + noise));
      }
    ds.videos.push_back(std::move(video));
    ds.labels->push_back(static_cast<std::uint32_t>(c));
  }
  return ds;
}

inline std::string encode_features(const Dataset& ds) {
  io::ByteWriter w;
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u64(ds.size());
  w.u64(ds.frames);
  w.u64(ds.dim);
  w.u32(kDtypeF32);
  for (const Matrix& v : ds.videos) {
    require(v.rows() == ds.frames && v.cols() == ds.dim, ErrorKind::kShape,
            "write_features: video shape " + shape_str(v) + " inconsistent with dataset");
    for (double x : v.values()) {
      require(std::isfinite(x), ErrorKind::kData, "write_features: non-finite feature");
      w.f32(static_cast<float>(x));
    }
  }
  return w.bytes();
}

inline Dataset decode_features(std::string_view bytes, const std::string& what = "features") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kFeatureMagic);
  const std::uint32_t version = r.u32();
  require(version == kFeatureVersion, ErrorKind::kData,
          what + ": unsupported version " + std::to_string(version));
  const std::uint64_t n = r.u64(), m = r.u64(), d = r.u64();
  const std::uint32_t dtype = r.u32();
  require(dtype == kDtypeF32, ErrorKind::kData, what + ": unsupported dtype tag " + std::to_string(dtype));
  const std::uint64_t count = io::checked_mul(io::checked_mul(n, m, what), d, what);
  r.need(io::checked_mul(count, 4, what));
  Dataset ds{m, d, {}, std::nullopt};
  ds.videos.reserve(n);
  for (std::uint64_t v = 0; v < n; ++v) {
    Matrix video(m, d);
    for (double& x : video.values()) {
      x = static_cast<double>(r.f32());
      require(std::isfinite(x), ErrorKind::kData, what + ": non-finite value in video " + std::to_string(v));
    }
    ds.videos.push_back(std::move(video));
  }
  r.expect_end();
  return ds;
}

inline std::string encode_labels(const std::vector<std::uint32_t>& labels) {
  io::ByteWriter w;
  w.magic(kLabelMagic);
  w.u64(labels.size());
  for (std::uint32_t l : labels) w.u32(l);
  return w.bytes();
}

inline std::vector<std::uint32_t> decode_labels(std::string_view bytes,
                                                const std::string& what = "labels") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kLabelMagic);
  const std::uint64_t n = r.u64();
  r.need(io::checked_mul(n, 4, what));
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = r.u32();
  r.expect_end();
  return labels;
}

inline void write_features(const Dataset& ds, const std::string& path) {
  io::write_file(path, encode_features(ds));
}

inline Dataset read_features(const std::string& path) {
  return decode_features(io::read_file(path), path);
}

inline void write_labels(const std::vector<std::uint32_t>& labels, const std::string& path) {
  io::write_file(path, encode_labels(labels));
}

inline std::vector<std::uint32_t> read_labels(const std::string& path) {
  return decode_labels(io::read_file(path), path);
}

}  // namespace ssvh
