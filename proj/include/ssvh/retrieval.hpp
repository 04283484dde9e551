#pragma once

// Bit-packed codes, Hamming ranking and AP@K / mAP@K.
//
// Packing: symbol k of a code is bit (k mod 8) of byte k/8, LSB first;
// +1 -> 1, -1 -> 0.
//
// SSVH-CODE layout (little-endian):
//   "SSVH-CODE" | u32 version=1 | u64 n | u32 L | n records of ceil(L/8) bytes

#include <algorithm>
#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssvh/autoencoder.hpp"
#include "ssvh/datagen.hpp"
#include "ssvh/io.hpp"
#include "ssvh/neighborhood.hpp"
#include "ssvh/numerics.hpp"

namespace ssvh {

inline constexpr std::string_view kCodeMagic = "SSVH-CODE";
inline constexpr std::uint32_t kCodeVersion = 1;

// A code as a sequence of -1/+1 symbols.
class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(std::vector<std::int8_t> symbols) : symbols_(std::move(symbols)) {
    for (auto s : symbols_)
      require(s == 1 || s == -1, ErrorKind::kData, "BinaryCode: symbol must be -1 or +1");
  }
  // Signs of real values, sgn(0) = +1.
  static BinaryCode from_signs(std::span<const double> h) {
    std::vector<std::int8_t> s(h.size());
    for (std::size_t k = 0; k < h.size(); ++k) s[k] = h[k] >= 0.0 ? 1 : -1;
    return BinaryCode(std::move(s));
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  std::int8_t operator[](std::size_t k) const { return symbols_[k]; }
  const std::vector<std::int8_t>& symbols() const noexcept { return symbols_; }

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

 private:
  std::vector<std::int8_t> symbols_;
};

inline std::size_t packed_bytes(std::size_t code_len) { return (code_len + 7) / 8; }

inline std::vector<std::uint8_t> pack(const BinaryCode& code) {
  std::vector<std::uint8_t> out(packed_bytes(code.size()), 0);
  for (std::size_t k = 0; k < code.size(); ++k)
    if (code[k] == 1) out[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
  return out;
}

inline BinaryCode unpack(std::span<const std::uint8_t> bytes, std::size_t code_len) {
  require(bytes.size() == packed_bytes(code_len), ErrorKind::kShape,
          "unpack: " + std::to_string(bytes.size()) + " bytes for code length " +
              std::to_string(code_len));
  std::vector<std::int8_t> s(code_len);
  for (std::size_t k = 0; k < code_len; ++k) s[k] = (bytes[k / 8] >> (k % 8)) & 1u ? 1 : -1;
  return BinaryCode(std::move(s));
}

// Popcount of the XOR of two packed codes. Padding bits are always zero.
inline std::size_t hamming_packed(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  require(a.size() == b.size(), ErrorKind::kShape, "hamming_distance: length mismatch");
  std::size_t d = 0;
  std::size_t k = 0;
  for (; k + 8 <= a.size(); k += 8) {
    std::uint64_t x = 0, y = 0;
    std::memcpy(&x, a.data() + k, 8);
    std::memcpy(&y, b.data() + k, 8);
    d += static_cast<std::size_t>(std::popcount(x ^ y));
  }
  for (; k < a.size(); ++k) d += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[k] ^ b[k])));
  return d;
}

inline std::size_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  require(a.size() == b.size(), ErrorKind::kShape,
          "hamming_distance: code lengths " + std::to_string(a.size()) + " and " +
              std::to_string(b.size()));
  return hamming_packed(pack(a), pack(b));
}

class RetrievalDB {
 public:
  RetrievalDB() = default;
  explicit RetrievalDB(std::size_t code_len) : code_len_(code_len), stride_(packed_bytes(code_len)) {
    require(code_len > 0, ErrorKind::kUsage, "RetrievalDB: code length must be positive");
  }

  void add(const BinaryCode& code) {
    require(code.size() == code_len_, ErrorKind::kShape,
            "RetrievalDB: code length " + std::to_string(code.size()) + " != " + std::to_string(code_len_));
    auto p = pack(code);
    bytes_.insert(bytes_.end(), p.begin(), p.end());
  }
  void add_packed(std::span<const std::uint8_t> packed) {
    require(packed.size() == stride_, ErrorKind::kShape, "RetrievalDB: packed record size mismatch");
    if (code_len_ % 8 != 0)
      require((packed.back() >> (code_len_ % 8)) == 0, ErrorKind::kData,
              "RetrievalDB: nonzero padding bits in packed code");
    bytes_.insert(bytes_.end(), packed.begin(), packed.end());
  }

  std::size_t size() const noexcept { return stride_ ? bytes_.size() / stride_ : 0; }
  std::size_t code_len() const noexcept { return code_len_; }
  std::size_t record_bytes() const noexcept { return stride_; }
  std::span<const std::uint8_t> packed(std::size_t i) const {
    return {bytes_.data() + i * stride_, stride_};
  }
  BinaryCode code(std::size_t i) const { return unpack(packed(i), code_len_); }

  const std::optional<std::vector<std::uint32_t>>& labels() const noexcept { return labels_; }
  void set_labels(std::vector<std::uint32_t> labels) {
    require(labels.size() == size(), ErrorKind::kData,
            "RetrievalDB: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(size()) + " codes");
    labels_ = std::move(labels);
  }

  friend bool operator==(const RetrievalDB&, const RetrievalDB&) = default;

 private:
  std::size_t code_len_ = 0;
  std::size_t stride_ = 0;
  std::vector<std::uint8_t> bytes_;
  std::optional<std::vector<std::uint32_t>> labels_;
};

struct RankedEntry {
  std::uint32_t index;
  std::uint32_t distance;
};

using RankedList = std::vector<RankedEntry>;

// Ascending Hamming distance, ties by ascending index. A counting sort over
// the L+1 possible distances keeps the scan linear and the order stable.
inline RankedList rank(std::span<const std::uint8_t> query, const RetrievalDB& db,
                       std::optional<std::size_t> exclude = std::nullopt) {
  require(query.size() == db.record_bytes(), ErrorKind::kShape, "rank: query length mismatch");
  require(!exclude || *exclude < db.size(), ErrorKind::kUsage,
          "rank: exclude index " + (exclude ? std::to_string(*exclude) : std::string()) +
              " out of range");
  const std::size_t n = db.size();
  std::vector<std::uint32_t> dist(n);
  std::vector<std::size_t> bucket(db.code_len() + 2, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    dist[i] = static_cast<std::uint32_t>(hamming_packed(query, db.packed(i)));
    ++bucket[dist[i] + 1];
  }
  for (std::size_t d = 1; d < bucket.size(); ++d) bucket[d] += bucket[d - 1];
  RankedList out(n - (exclude ? 1 : 0));
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    out[bucket[dist[i]]++] = {static_cast<std::uint32_t>(i), dist[i]};
  }
  return out;
}

inline RankedList rank(const BinaryCode& query, const RetrievalDB& db,
                       std::optional<std::size_t> exclude = std::nullopt) {
  require(query.size() == db.code_len(), ErrorKind::kShape, "rank: query length mismatch");
  return rank(pack(query), db, exclude);
}

// (1/min(R,K)) * sum_{i<=K} (R_i / i) * I_i
inline double ap_at_k(std::span<const std::uint8_t> relevance, std::size_t total_relevant,
                      std::size_t k) {
  require(total_relevant >= 1, ErrorKind::kUsage, "ap_at_k: query has no relevant items");
  require(relevance.size() >= k, ErrorKind::kUsage, "ap_at_k: relevance list shorter than K");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(total_relevant, k));
}

inline const std::vector<std::size_t>& default_report_ks() {
  static const std::vector<std::size_t> ks{5, 10, 20, 40, 60, 80, 100};
  return ks;
}

struct MapReport {
  std::vector<std::size_t> ks;
  std::vector<double> map;  // one per K
  std::size_t queries = 0;
  std::size_t skipped = 0;  // queries without any relevant item
};

// Every item queries the rest of the database (self excluded); relevance is
// label equality. K is clamped to the number of candidates.
inline MapReport map_at_k(const RetrievalDB& db, const std::vector<std::size_t>& ks,
                          std::size_t threads = 1) {
  require(db.labels().has_value(), ErrorKind::kUsage, "map_at_k: database has no labels");
  require(!ks.empty(), ErrorKind::kUsage, "map_at_k: empty K list");
  require(db.size() >= 2, ErrorKind::kUsage, "map_at_k: need at least two items");
  for (std::size_t k : ks) require(k >= 1, ErrorKind::kUsage, "map_at_k: K must be positive");
  const auto& labels = *db.labels();
  const std::size_t n = db.size();

  std::vector<std::size_t> class_count;
  for (auto l : labels) {
    if (l >= class_count.size()) class_count.resize(std::size_t(l) + 1, 0);
    ++class_count[l];
  }
  std::vector<std::vector<double>> per_query(n);
  parallel_rows(n, threads, [&](std::size_t q) {
    const std::size_t relevant = class_count[labels[q]] - 1;
    if (relevant == 0) return;
    RankedList ranked = rank(db.packed(q), db, q);
    std::vector<std::uint8_t> rel(ranked.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) rel[i] = labels[ranked[i].index] == labels[q];
    for (std::size_t k : ks) per_query[q].push_back(ap_at_k(rel, relevant, std::min(k, rel.size())));
  });

  MapReport rep{ks, std::vector<double>(ks.size(), 0.0), 0, 0};
  for (std::size_t q = 0; q < n; ++q) {
    if (per_query[q].empty()) {
      ++rep.skipped;
      continue;
    }
    ++rep.queries;
    for (std::size_t k = 0; k < ks.size(); ++k) rep.map[k] += per_query[q][k];
  }
  if (rep.queries > 0)
    for (double& m : rep.map) m /= static_cast<double>(rep.queries);
  return rep;
}

inline double map_at_k(const RetrievalDB& db, std::size_t k, std::size_t threads = 1) {
  return map_at_k(db, std::vector<std::size_t>{k}, threads).map.front();
}

// Encodes every video with infer-mode normalization and packs the codes.
// Rows do not interact in infer mode, so chunking does not change the result.
inline RetrievalDB hash_dataset(const Model& model, const Dataset& ds, std::size_t chunk = 256) {
  require(ds.dim == model.config.input_dim, ErrorKind::kShape,
          "hash_dataset: feature dimension " + std::to_string(ds.dim) + " but model expects " +
              std::to_string(model.config.input_dim));
  require(ds.frames == model.config.frames, ErrorKind::kShape,
          "hash_dataset: " + std::to_string(ds.frames) + " frames per video but model expects " +
              std::to_string(model.config.frames));
  RetrievalDB db(model.config.code_len);
  for (std::size_t lo = 0; lo < ds.size(); lo += chunk) {
    const std::size_t hi = std::min(ds.size(), lo + chunk);
    std::vector<const Matrix*> members;
    for (std::size_t i = lo; i < hi; ++i) members.push_back(&ds.videos[i]);
    EncodeResult enc = encode(model.encoder, to_time_major(members), Mode::kInfer,
                              model.config.binarizer);
    for (std::size_t r = 0; r < enc.code.rows(); ++r) db.add(BinaryCode::from_signs(enc.code.row(r)));
  }
  if (ds.labels) db.set_labels(*ds.labels);
  return db;
}

inline std::string encode_codes(const RetrievalDB& db) {
  io::ByteWriter w;
  w.magic(kCodeMagic);
  w.u32(kCodeVersion);
  w.u64(db.size());
  w.u32(static_cast<std::uint32_t>(db.code_len()));
  for (std::size_t i = 0; i < db.size(); ++i) w.raw(db.packed(i).data(), db.record_bytes());
  return w.bytes();
}

inline RetrievalDB decode_codes(std::string_view bytes, const std::string& what = "codes") {
  io::ByteReader r(bytes, what);
  r.expect_magic(kCodeMagic);
  const std::uint32_t version = r.u32();
  require(version == kCodeVersion, ErrorKind::kData,
          what + ": unsupported version " + std::to_string(version));
  const std::uint64_t n = r.u64();
  const std::uint32_t len = r.u32();
  require(len > 0, ErrorKind::kData, what + ": zero code length");
  RetrievalDB db(len);
  r.need(io::checked_mul(n, db.record_bytes(), what));
  for (std::uint64_t i = 0; i < n; ++i) {
    auto rec = r.raw(db.record_bytes());
    db.add_packed({reinterpret_cast<const std::uint8_t*>(rec.data()), rec.size()});
  }
  r.expect_end();
  return db;
}

inline void write_codes(const RetrievalDB& db, const std::string& path) {
  io::write_file(path, encode_codes(db));
}

inline RetrievalDB read_codes(const std::string& path) {
  return decode_codes(io::read_file(path), path);
}

}  // namespace ssvh
