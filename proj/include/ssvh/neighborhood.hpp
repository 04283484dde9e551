#pragma once

// Self-supervised neighbor graph (cosine K1-NN expanded by shared-neighbor
// ranking) and the pairwise neighborhood-preservation loss.
//
// SSVH-NBRG layout (little-endian):
//   "SSVH-NBRG" | u32 version=1 | u64 n | per video: u32 count, count u32
//   neighbor indices in ascending order

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ssvh/io.hpp"
#include "ssvh/numerics.hpp"

namespace ssvh {

inline constexpr std::string_view kGraphMagic = "SSVH-NBRG";
inline constexpr std::uint32_t kGraphVersion = 1;

using KnnTable = std::vector<std::vector<std::uint32_t>>;

struct NeighborGraph {
  std::vector<std::vector<std::uint32_t>> adjacency;  // sorted, symmetric, irreflexive

  std::size_t size() const noexcept { return adjacency.size(); }

  bool similar(std::size_t i, std::size_t j) const {
    const auto& a = adjacency.at(i);
    return std::binary_search(a.begin(), a.end(), static_cast<std::uint32_t>(j));
  }
  int sign(std::size_t i, std::size_t j) const { return similar(i, j) ? 1 : -1; }

  friend bool operator==(const NeighborGraph&, const NeighborGraph&) = default;
};

inline Vector mean_pool(const Matrix& frames) {
  require(frames.rows() > 0, ErrorKind::kUsage, "mean_pool: empty sequence");
  Vector out(frames.cols(), 0.0);
  add_column_sums(frames, out);
  for (double& v : out) v /= static_cast<double>(frames.rows());
  return out;
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kShape, "cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  require(na > 0.0 && nb > 0.0, ErrorKind::kData, "cosine_sim: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Runs body(i) for i in [0, n) over `threads` workers with contiguous chunks.
// Callers write only to slot i, so results do not depend on the thread count.
template <class Body>
void parallel_rows(std::size_t n, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Exact K1 nearest neighbors by cosine similarity, most similar first, ties
// by ascending index.
inline KnnTable build_knn(const std::vector<Vector>& videos, std::size_t k1,
                          std::size_t threads = 1) {
  const std::size_t n = videos.size();
  require(k1 < n, ErrorKind::kUsage,
          "build_knn: K1=" + std::to_string(k1) + " must be smaller than n=" + std::to_string(n));
  Vector norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : videos[i]) s += v * v;
    require(s > 0.0, ErrorKind::kData, "build_knn: video " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(s);
  }
  KnnTable table(n);
  parallel_rows(n, threads, [&](std::size_t i) {
    std::vector<std::pair<double, std::uint32_t>> cand;
    cand.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < videos[i].size(); ++k) dot += videos[i][k] * videos[j][k];
      cand.emplace_back(dot / (norms[i] * norms[j]), static_cast<std::uint32_t>(j));
    }
    auto better = [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k1), cand.end(), better);
    table[i].reserve(k1);
    for (std::size_t r = 0; r < k1; ++r) table[i].push_back(cand[r].second);
  });
  return table;
}

inline NeighborGraph symmetrize(std::vector<std::set<std::uint32_t>> sets) {
  const std::size_t n = sets.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::uint32_t j : std::vector<std::uint32_t>(sets[i].begin(), sets[i].end()))
      if (j != i) sets[j].insert(static_cast<std::uint32_t>(i));
  NeighborGraph g;
  g.adjacency.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sets[i].erase(static_cast<std::uint32_t>(i));
    g.adjacency[i].assign(sets[i].begin(), sets[i].end());
  }
  return g;
}

// For each video i, candidates j sharing at least one K1 neighbor are ranked by
// |P_i ∩ P_j| (ties by ascending j); for each of the top K2, j and every member
// of P_i ∪ P_j become neighbors of i. P_i itself always is. The result is
// symmetrized.
inline NeighborGraph expand_neighbors(const KnnTable& knn, std::size_t k2) {
  const std::size_t n = knn.size();
  require(n == 0 || k2 <= n - 1, ErrorKind::kUsage,
          "expand_neighbors: K2=" + std::to_string(k2) + " exceeds n-1");
  std::vector<std::vector<std::uint32_t>> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    sorted[i] = knn[i];
    std::sort(sorted[i].begin(), sorted[i].end());
    for (std::uint32_t j : sorted[i])
      require(j < n, ErrorKind::kData, "expand_neighbors: neighbor index out of range");
  }
  // Inverted index: who lists m among their K1 neighbors.
  std::vector<std::vector<std::uint32_t>> listed_by(n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::uint32_t m : sorted[j]) listed_by[m].push_back(static_cast<std::uint32_t>(j));

  std::vector<std::set<std::uint32_t>> sets(n);
  std::vector<std::uint32_t> overlap(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    sets[i].insert(sorted[i].begin(), sorted[i].end());
    if (k2 == 0) continue;
    std::vector<std::uint32_t> touched;
    for (std::uint32_t m : sorted[i])
      for (std::uint32_t j : listed_by[m]) {
        if (j == i) continue;
        if (overlap[j]++ == 0) touched.push_back(j);
      }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ranked;  // (overlap, j)
    for (std::uint32_t j : touched) {
      ranked.emplace_back(overlap[j], j);
      overlap[j] = 0;
    }
    const std::size_t take = std::min(k2, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take),
                      ranked.end(), [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    for (std::size_t r = 0; r < take; ++r) {
      const std::uint32_t j = ranked[r].second;
      sets[i].insert(j);
      sets[i].insert(sorted[j].begin(), sorted[j].end());
    }
  }
  return symmetrize(std::move(sets));
}

inline NeighborGraph build_graph(const std::vector<Vector>& videos, std::size_t k1,
                                 std::size_t k2, std::size_t threads = 1) {
  return expand_neighbors(build_knn(videos, k1, threads), k2);
}

// Splits [0, n) into `shards` contiguous parts and builds an independent graph
// on each; indices in the result are global and no edge crosses a shard.
inline NeighborGraph build_sharded_graph(const std::vector<Vector>& videos, std::size_t k1,
                                         std::size_t k2, std::size_t shards,
                                         std::size_t threads = 1) {
  const std::size_t n = videos.size();
  require(shards >= 1 && shards <= n, ErrorKind::kUsage,
          "build_graph: shard count must be in [1, n]");
  NeighborGraph g;
  g.adjacency.resize(n);
  for (std::size_t s = 0; s < shards; ++s) {
    const std::size_t lo = s * n / shards, hi = (s + 1) * n / shards;
    std::vector<Vector> part(videos.begin() + static_cast<std::ptrdiff_t>(lo),
                             videos.begin() + static_cast<std::ptrdiff_t>(hi));
    require(k1 < part.size(), ErrorKind::kUsage,
            "build_graph: shard " + std::to_string(s) + " has " + std::to_string(part.size()) +
                " videos, too few for K1=" + std::to_string(k1));
    NeighborGraph local = build_graph(part, k1, std::min(k2, part.size() - 1), threads);
    for (std::size_t i = 0; i < local.size(); ++i)
      for (std::uint32_t j : local.adjacency[i])
        g.adjacency[lo + i].push_back(static_cast<std::uint32_t>(lo + j));
  }
  return g;
}

inline std::string encode_graph(const NeighborGraph& g) {
  io::ByteWriter w;
  w.magic(kGraphMagic);
  w.u32(kGraphVersion);
  w.u64(g.size());
  for (const auto& adj : g.adjacency) {
    w.u32(static_cast<std::uint32_t>(adj.size()));
    for (std::uint32_t j : adj) w.u32(j);
  }
  return w.bytes();
}

inline NeighborGraph decode_graph(std::string_view bytes, const std::string& what = "graph") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kGraphMagic);
  const std::uint32_t version = r.u32();
  require(version == kGraphVersion, ErrorKind::kData,
          what + ": unsupported version " + std::to_string(version));
  const std::uint64_t n = r.u64();
  r.need(io::checked_mul(n, 4, what));
  NeighborGraph g;
  g.adjacency.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t count = r.u32();
    r.need(io::checked_mul(count, 4, what));
    auto& adj = g.adjacency[i];
    adj.resize(count);
    for (auto& j : adj) {
      j = r.u32();
      require(j < n && j != i, ErrorKind::kData, what + ": invalid neighbor index");
    }
    require(std::is_sorted(adj.begin(), adj.end()) &&
                std::adjacent_find(adj.begin(), adj.end()) == adj.end(),
            ErrorKind::kData, what + ": neighbor list of video " + std::to_string(i) + " not strictly ascending");
  }
  r.expect_end();
  return g;
}

inline void write_graph(const NeighborGraph& g, const std::string& path) {
  io::write_file(path, encode_graph(g));
}

inline NeighborGraph read_graph(const std::string& path) {
  return decode_graph(io::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Neighborhood loss
//
//   ((1/L) h_i.h_j - s)^2 + eta |b_i - h_i|^2 + eta |b_j - h_j|^2
//
// with the codes b held constant.

struct NeighborLoss {
  double loss = 0.0;
  Vector grad_i;
  Vector grad_j;
};

inline NeighborLoss neighbor_loss(std::span<const double> h_i, std::span<const double> h_j, int s,
                                  std::span<const double> b_i, std::span<const double> b_j,
                                  double eta) {
  const std::size_t len = h_i.size();
  require(len > 0 && h_j.size() == len && b_i.size() == len && b_j.size() == len,
          ErrorKind::kShape, "neighbor_loss: length mismatch");
  require(s == 1 || s == -1, ErrorKind::kUsage, "neighbor_loss: similarity must be +1 or -1");
  double dot = 0.0;
  for (std::size_t k = 0; k < len; ++k) dot += h_i[k] * h_j[k];
  const double inv_l = 1.0 / static_cast<double>(len);
  const double resid = dot * inv_l - s;
  NeighborLoss out{resid * resid, Vector(len), Vector(len)};
  double qi = 0.0, qj = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    const double ei = b_i[k] - h_i[k];
    const double ej = b_j[k] - h_j[k];
    qi += ei * ei;
    qj += ej * ej;
    out.grad_i[k] = 2.0 * resid * inv_l * h_j[k] - 2.0 * eta * ei;
    out.grad_j[k] = 2.0 * resid * inv_l * h_i[k] - 2.0 * eta * ej;
  }
  out.loss += eta * qi + eta * qj;
  return out;
}

}  // namespace ssvh
