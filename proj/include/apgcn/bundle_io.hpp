#pragma once

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "apgcn/graph.hpp"
#include "apgcn/rng.hpp"

namespace apgcn {

enum class DataErrc {
  io,
  parse,
  count_mismatch,
  bad_magic,
  crc_mismatch,
  truncated,
  inconsistent_counts,
  invalid_graph,
  invalid_argument,
};

inline const char* to_string(DataErrc c) {
  switch (c) {
    case DataErrc::io: return "io";
    case DataErrc::parse: return "parse";
    case DataErrc::count_mismatch: return "count_mismatch";
    case DataErrc::bad_magic: return "bad_magic";
    case DataErrc::crc_mismatch: return "crc_mismatch";
    case DataErrc::truncated: return "truncated";
    case DataErrc::inconsistent_counts: return "inconsistent_counts";
    case DataErrc::invalid_graph: return "invalid_graph";
    case DataErrc::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

class DataError : public std::runtime_error {
 public:
  DataError(DataErrc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  DataErrc code() const { return code_; }

 private:
  DataErrc code_;
};

// ------------------------------------------------------------------ APGB1
//
//   "APGB1"
//   u64 n_nodes, u64 n_arcs, u64 d, u64 C, u64 flags
//   u64 csr_offsets[n+1]
//   u32 csr_targets[n_arcs]
//   features: flags bit 0 clear -> f32[n*d] row-major
//             flags bit 0 set   -> u64 nnz, then nnz x (u32 row, u32 col, f32 val)
//   i32 labels[n]
//   u32 CRC-32 of every preceding byte
//
// All integers little-endian.

inline constexpr std::string_view kBundleMagic = "APGB1";
inline constexpr std::uint64_t kSparseFeaturesFlag = 1;
inline constexpr double kSparseDensityThreshold = 0.05;

namespace detail {

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::uint64_t n, const char* section) const {
    if (n > b_.size() - pos_) throw DataError(DataErrc::truncated, std::string("bundle: truncated ") + section);
  }
  std::uint32_t u32(const char* section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(b_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* section) {
    need(8, section);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(b_[pos_ + b]) << (8 * b);
    pos_ += 8;
    return v;
  }
  float f32(const char* section) { return std::bit_cast<float>(u32(section)); }
  std::int32_t i32(const char* section) { return static_cast<std::int32_t>(u32(section)); }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> write_bundle(const GraphBundle& g) {
  if (g.d_features() == 0) throw DataError(DataErrc::invalid_argument, "write_bundle: d must be >= 1");
  try {
    validate(g);
  } catch (const InvalidArgument& e) {
    throw DataError(DataErrc::invalid_graph, std::string("write_bundle: ") + e.what());
  }
  const std::size_t n = g.n_nodes;
  const std::size_t d = g.d_features();
  std::size_t nnz = 0;
  for (double v : g.features.flat()) nnz += v != 0.0;
  const bool sparse = static_cast<double>(nnz) < kSparseDensityThreshold * static_cast<double>(n * d);

  detail::ByteWriter w;
  w.raw(kBundleMagic);
  w.u64(n);
  w.u64(g.n_arcs());
  w.u64(d);
  w.u64(g.n_classes);
  w.u64(sparse ? kSparseFeaturesFlag : 0);
  for (auto o : g.csr_offsets) w.u64(o);
  for (auto t : g.csr_targets) w.u32(t);
  if (sparse) {
    w.u64(nnz);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (const double v = g.features(i, j); v != 0.0) {
          w.u32(static_cast<std::uint32_t>(i));
          w.u32(static_cast<std::uint32_t>(j));
          w.f32(static_cast<float>(v));
        }
  } else {
    for (double v : g.features.flat()) w.f32(static_cast<float>(v));
  }
  for (auto y : g.labels) w.i32(y);
  w.u32(detail::crc32_of(w.bytes()));
  return std::move(w.bytes());
}

/// Parses an APGB1 buffer. The checksum is verified before anything else is
/// interpreted, so any corrupted byte reports crc_mismatch.
inline GraphBundle read_bundle(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kHeader = 5 + 5 * 8;
  if (bytes.size() < kHeader + 4) throw DataError(DataErrc::truncated, "bundle: shorter than header");
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader tail(bytes.last(4));
  if (tail.u32("crc") != detail::crc32_of(body)) throw DataError(DataErrc::crc_mismatch, "bundle: CRC mismatch");
  if (std::memcmp(body.data(), kBundleMagic.data(), kBundleMagic.size()) != 0)
    throw DataError(DataErrc::bad_magic, "bundle: bad magic");

  detail::ByteReader r(body);
  r.skip(kBundleMagic.size());
  const auto n = r.u64("header");
  const auto arcs = r.u64("header");
  const auto d = r.u64("header");
  const auto classes = r.u64("header");
  const auto flags = r.u64("header");
  if (n == 0 || d == 0 || n > UINT32_MAX || d > UINT32_MAX || n * d > (std::uint64_t{1} << 40) ||
      (flags & ~kSparseFeaturesFlag) != 0)
    throw DataError(DataErrc::inconsistent_counts, "bundle: invalid header counts or flags");

  GraphBundle g;
  g.n_nodes = n;
  g.n_classes = classes;
  r.need((n + 1) * 8, "csr_offsets");
  g.csr_offsets.resize(n + 1);
  for (auto& o : g.csr_offsets) o = r.u64("csr_offsets");
  if (g.csr_offsets.back() != arcs || arcs % 2 != 0)
    throw DataError(DataErrc::inconsistent_counts, "bundle: offsets disagree with arc count");
  if (arcs > r.remaining()) throw DataError(DataErrc::truncated, "bundle: truncated csr_targets");
  r.need(arcs * 4, "csr_targets");
  g.csr_targets.resize(arcs);
  for (auto& t : g.csr_targets) t = r.u32("csr_targets");
  g.n_edges = arcs / 2;

  g.features = Matrix<double>(n, d);
  if (flags & kSparseFeaturesFlag) {
    const auto nnz = r.u64("features");
    if (nnz > n * d) throw DataError(DataErrc::inconsistent_counts, "bundle: nnz exceeds n*d");
    r.need(nnz * 12, "features");
    for (std::uint64_t k = 0; k < nnz; ++k) {
      const auto i = r.u32("features");
      const auto j = r.u32("features");
      const float v = r.f32("features");
      if (i >= n || j >= d) throw DataError(DataErrc::inconsistent_counts, "bundle: feature triplet out of range");
      g.features(i, j) = static_cast<double>(v);
    }
  } else {
    r.need(n * d * 4, "features");
    for (double& v : g.features.flat()) v = static_cast<double>(r.f32("features"));
  }
  r.need(n * 4, "labels");
  g.labels.resize(n);
  for (auto& y : g.labels) y = r.i32("labels");
  if (r.remaining() != 0) throw DataError(DataErrc::inconsistent_counts, "bundle: trailing bytes after labels");

  try {
    validate(g);
  } catch (const InvalidArgument& e) {
    throw DataError(DataErrc::invalid_graph, std::string("bundle: ") + e.what());
  }
  return g;
}

inline void save_bundle(const GraphBundle& g, const std::filesystem::path& path) {
  const auto bytes = write_bundle(g);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrc::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataErrc::io, "write failed: " + path.string());
}

inline GraphBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrc::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_bundle(bytes);
}

// ------------------------------------------------------------ text ingest

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename N>
N parse_number(std::string_view tok, const std::string& where) {
  N v{};
  tok = trim(tok);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || tok.empty())
    throw DataError(DataErrc::parse, where + ": cannot parse '" + std::string(tok) + "'");
  return v;
}

inline std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrc::io, "cannot open " + path.string());
  return in;
}

inline bool skip_line(std::string_view s) { return s.empty() || s.front() == '#'; }

}  // namespace detail

/// Edges as whitespace-separated "i j" lines, features as CSV rows (one per
/// node), labels as one integer per line. Blank lines and '#' comments are
/// ignored. The result is reduced to its largest connected component and its
/// features are l1-normalised.
inline GraphBundle ingest_text(const std::filesystem::path& edges_path, const std::filesystem::path& features_path,
                               const std::filesystem::path& labels_path) {
  std::vector<std::int32_t> labels;
  {
    auto in = detail::open_text(labels_path);
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
      const auto s = detail::trim(line);
      if (detail::skip_line(s)) continue;
      labels.push_back(detail::parse_number<std::int32_t>(s, labels_path.string() + ":" + std::to_string(ln)));
    }
  }

  std::vector<std::vector<double>> rows;
  {
    auto in = detail::open_text(features_path);
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
      const auto s = detail::trim(line);
      if (detail::skip_line(s)) continue;
      const std::string where = features_path.string() + ":" + std::to_string(ln);
      std::vector<double> row;
      std::size_t start = 0;
      for (;;) {
        const auto comma = s.find(',', start);
        row.push_back(detail::parse_number<double>(s.substr(start, comma - start), where));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (!rows.empty() && row.size() != rows.front().size())
        throw DataError(DataErrc::parse, where + ": expected " + std::to_string(rows.front().size()) +
                                             " columns, found " + std::to_string(row.size()));
      rows.push_back(std::move(row));
    }
  }
  if (rows.size() != labels.size())
    throw DataError(DataErrc::count_mismatch, "ingest: " + std::to_string(rows.size()) + " feature rows but " +
                                                  std::to_string(labels.size()) + " labels");

  EdgeList edges;
  {
    auto in = detail::open_text(edges_path);
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
      const auto s = detail::trim(line);
      if (detail::skip_line(s)) continue;
      const std::string where = edges_path.string() + ":" + std::to_string(ln);
      std::istringstream ss{std::string(s)};
      std::string a, b, extra;
      if (!(ss >> a >> b) || (ss >> extra)) throw DataError(DataErrc::parse, where + ": expected 'i j'");
      const auto u = detail::parse_number<std::size_t>(a, where);
      const auto v = detail::parse_number<std::size_t>(b, where);
      if (u >= labels.size() || v >= labels.size())
        throw DataError(DataErrc::count_mismatch, where + ": node index out of range for " +
                                                      std::to_string(labels.size()) + " nodes");
      edges.emplace_back(u, v);
    }
  }

  try {
    auto g = build_graph(edges, rows, std::move(labels));
    return l1_normalize_features(largest_connected_component(g));
  } catch (const InvalidArgument& e) {
    throw DataError(DataErrc::invalid_graph, std::string("ingest: ") + e.what());
  }
}

// -------------------------------------------------------------------- SBM

struct SbmSpec {
  std::size_t blocks = 2;
  std::size_t nodes_per_block = 50;
  double p_in = 0.1;
  double p_out = 0.01;
  double feature_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (blocks == 0 || nodes_per_block == 0) throw InvalidArgument("SbmSpec: empty model");
    if (!(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0))
      throw InvalidArgument("SbmSpec: probabilities must be in [0, 1]");
    if (!(p_in > p_out)) throw InvalidArgument("SbmSpec: need p_in > p_out");
    if (!(feature_noise >= 0.0)) throw InvalidArgument("SbmSpec: feature_noise must be >= 0");
  }
};

/// Stochastic block model. Node i belongs to block i / nodes_per_block. One
/// uniform draw per pair (i < j, row-major) decides each edge; then one draw
/// per feature entry, row-major. Features are a one-hot block indicator plus
/// uniform noise in [0, feature_noise], l1-normalised. The result may be
/// disconnected.
inline GraphBundle generate_sbm(const SbmSpec& spec) {
  spec.validate();
  const std::size_t n = spec.blocks * spec.nodes_per_block;
  Rng rng(spec.seed);
  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same = i / spec.nodes_per_block == j / spec.nodes_per_block;
      if (rng.uniform() < (same ? spec.p_in : spec.p_out)) edges.emplace_back(i, j);
    }
  Matrix<double> x(n, spec.blocks);
  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i / spec.nodes_per_block;
    labels[i] = static_cast<std::int32_t>(b);
    for (std::size_t c = 0; c < spec.blocks; ++c) x(i, c) = (c == b ? 1.0 : 0.0) + spec.feature_noise * rng.uniform();
  }
  return l1_normalize_features(build_graph(edges, std::move(x), std::move(labels), spec.blocks));
}

}  // namespace apgcn
