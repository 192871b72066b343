#pragma once

// On-disk formats.
//
// Embedding file (little-endian):
//   "CMLE" | u32 version = 1 | u32 N | u32 M | u32 d | f32 user[N*d] | f32 item[M*d]
//
// Processed dataset directory:
//   interactions.tsv  user_idx TAB item_idx
//   users.tsv         idx TAB key
//   items.tsv         idx TAB key
//   stats.tsv         name TAB value
//   folds.tsv         pair_row TAB fold

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cml/dataset.hpp"
#include "cml/errors.hpp"
#include "cml/eval.hpp"
#include "cml/model.hpp"

namespace cml {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kEmbeddingMagic{'C', 'M', 'L', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 20;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

inline void put_matrix(std::string& out, const Matrix& m) {
  for (double x : m.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
}

inline void get_matrix(const std::string& in, std::size_t at, Matrix& m) {
  for (auto& x : m.data) {
    x = static_cast<double>(std::bit_cast<float>(get_u32(in, at)));
    at += 4;
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_embeddings(const ModelParams& p) {
  std::string out(kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  detail::put_u32(out, kEmbeddingVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(p.num_users()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.num_items()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.dim()));
  out.reserve(kEmbeddingHeaderBytes + 4 * p.dim() * (p.num_users() + p.num_items()));
  detail::put_matrix(out, p.user_raw);
  detail::put_matrix(out, p.item_raw);
  return out;
}

inline ModelParams decode_embeddings(const std::string& bytes) {
  if (bytes.size() < kEmbeddingHeaderBytes ||
      std::memcmp(bytes.data(), kEmbeddingMagic.data(), kEmbeddingMagic.size()) != 0) {
    throw DataError("not an embedding file (bad magic)");
  }
  const auto version = detail::get_u32(bytes, 4);
  if (version != kEmbeddingVersion) {
    throw DataError("unsupported embedding file version " + std::to_string(version));
  }
  const std::size_t n = detail::get_u32(bytes, 8);
  const std::size_t m = detail::get_u32(bytes, 12);
  const std::size_t d = detail::get_u32(bytes, 16);
  if (bytes.size() != kEmbeddingHeaderBytes + 4 * d * (n + m)) {
    throw DataError("embedding file length does not match its header");
  }
  ModelParams p{Matrix(n, d), Matrix(m, d)};
  detail::get_matrix(bytes, kEmbeddingHeaderBytes, p.user_raw);
  detail::get_matrix(bytes, kEmbeddingHeaderBytes + 4 * n * d, p.item_raw);
  return p;
}

inline void save_embeddings(const fs::path& path, const ModelParams& p) {
  detail::write_file(path, encode_embeddings(p));
}

inline ModelParams load_embeddings(const fs::path& path) {
  return decode_embeddings(detail::read_file(path));
}

/// Throws DataError naming the first of N, M, d that disagrees.
inline void check_embedding_shape(const ModelParams& p, const InteractionSet& s,
                                  std::optional<std::size_t> dim = std::nullopt) {
  if (p.num_users() != s.num_users) {
    throw DataError("N mismatch: embeddings have " + std::to_string(p.num_users()) +
                    " users, dataset has " + std::to_string(s.num_users));
  }
  if (p.num_items() != s.num_items) {
    throw DataError("M mismatch: embeddings have " + std::to_string(p.num_items()) +
                    " items, dataset has " + std::to_string(s.num_items));
  }
  if (dim && p.dim() != *dim) {
    throw DataError("d mismatch: embeddings have d=" + std::to_string(p.dim()) + ", expected " +
                    std::to_string(*dim));
  }
}

// ---- processed dataset directory ------------------------------------------

struct DatasetStats {
  std::string dataset;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_interactions = 0;
  double density = 0.0;
};

inline DatasetStats stats_of(const InteractionSet& s, std::string tag = {}) {
  return {std::move(tag), s.num_users, s.num_items, s.pairs.size(), s.density()};
}

inline std::string format_stats(const DatasetStats& st) {
  char density[64];
  std::snprintf(density, sizeof density, "%.6g", st.density);
  std::string out;
  if (!st.dataset.empty()) out += "dataset\t" + st.dataset + "\n";
  out += "num_users\t" + std::to_string(st.num_users) + "\n";
  out += "num_items\t" + std::to_string(st.num_items) + "\n";
  out += "num_interactions\t" + std::to_string(st.num_interactions) + "\n";
  out += std::string("density\t") + density + "\n";
  return out;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline std::uint64_t parse_index(const std::string& text, const fs::path& file, std::size_t row) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ParseError(row + 1, file.filename().string() + ": bad index '" + text + "'");
  }
  return v;
}

inline std::vector<std::string> read_key_table(const fs::path& path) {
  const auto rows = read_tsv(path);
  std::vector<std::string> keys(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ParseError(r + 1, path.filename().string() + ": expected idx TAB key");
    const auto idx = parse_index(rows[r][0], path, r);
    if (idx != r) throw ParseError(r + 1, path.filename().string() + ": indices must be 0..n-1 in order");
    keys[r] = rows[r][1];
  }
  return keys;
}

}  // namespace detail

inline void write_processed(const fs::path& dir, const InteractionSet& s, const std::string& tag = {}) {
  fs::create_directories(dir);
  std::string inter, users, items;
  for (const auto& [u, i] : s.pairs) inter += std::to_string(u) + "\t" + std::to_string(i) + "\n";
  for (std::size_t u = 0; u < s.num_users; ++u) users += std::to_string(u) + "\t" + s.user_keys[u] + "\n";
  for (std::size_t i = 0; i < s.num_items; ++i) items += std::to_string(i) + "\t" + s.item_keys[i] + "\n";
  detail::write_file(dir / "interactions.tsv", inter);
  detail::write_file(dir / "users.tsv", users);
  detail::write_file(dir / "items.tsv", items);
  detail::write_file(dir / "stats.tsv", format_stats(stats_of(s, tag)));
}

inline InteractionSet read_processed(const fs::path& dir) {
  auto user_keys = detail::read_key_table(dir / "users.tsv");
  auto item_keys = detail::read_key_table(dir / "items.tsv");
  const auto path = dir / "interactions.tsv";
  const auto rows = detail::read_tsv(path);
  std::vector<Pair> pairs;
  pairs.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw ParseError(r + 1, "interactions.tsv: expected user_idx TAB item_idx");
    pairs.emplace_back(static_cast<Index>(detail::parse_index(rows[r][0], path, r)),
                       static_cast<Index>(detail::parse_index(rows[r][1], path, r)));
  }
  const auto n = user_keys.size();
  const auto m = item_keys.size();
  auto s = make_interaction_set(n, m, std::move(pairs), std::move(user_keys), std::move(item_keys));
  if (s.pairs.size() != rows.size()) throw DataError("interactions.tsv contains duplicate pairs");
  return s;
}

/// Value of `name` in stats.tsv, if present.
inline std::optional<std::string> read_stat(const fs::path& dir, const std::string& name) {
  if (!fs::exists(dir / "stats.tsv")) return std::nullopt;
  for (const auto& row : detail::read_tsv(dir / "stats.tsv")) {
    if (row.size() == 2 && row[0] == name) return row[1];
  }
  return std::nullopt;
}

inline void write_folds(const fs::path& path, const FoldAssignment& folds) {
  std::string out;
  for (std::size_t r = 0; r < folds.fold_of.size(); ++r) {
    out += std::to_string(r) + "\t" + std::to_string(folds.fold_of[r]) + "\n";
  }
  detail::write_file(path, out);
}

inline FoldAssignment read_folds(const fs::path& path, std::size_t num_pairs) {
  const auto rows = detail::read_tsv(path);
  if (rows.size() != num_pairs) {
    throw DataError("folds.tsv has " + std::to_string(rows.size()) + " rows, dataset has " +
                    std::to_string(num_pairs) + " pairs");
  }
  FoldAssignment f{0, std::vector<std::uint8_t>(num_pairs)};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != 2 || detail::parse_index(rows[r][0], path, r) != r) {
      throw ParseError(r + 1, "folds.tsv: expected row TAB fold in row order");
    }
    const auto fold = detail::parse_index(rows[r][1], path, r);
    if (fold > 254) throw ParseError(r + 1, "folds.tsv: fold id too large");
    f.fold_of[r] = static_cast<std::uint8_t>(fold);
    f.k = std::max(f.k, static_cast<int>(fold) + 1);
  }
  return f;
}

// ---- metrics table ----------------------------------------------------------

/// Run label shared by the folds of one experiment.
struct RunLabel {
  std::string strategy;
  std::size_t n_negatives = 0;
  std::size_t batch_size = 0;

  auto operator<=>(const RunLabel&) const = default;
};

/// Metrics TSV with one row per (label, fold) and a "mean±std" row per label.
class MetricsTable {
 public:
  explicit MetricsTable(std::size_t k = 50) : k_(k) {}

  void upsert(const RunLabel& label, const FoldMetrics& m) {
    auto& folds = runs_[label];
    for (auto& f : folds) {
      if (f.fold == m.fold) {
        f = m;
        return;
      }
    }
    folds.push_back(m);
    std::sort(folds.begin(), folds.end(), [](const auto& a, const auto& b) { return a.fold < b.fold; });
  }

  MetricsReport report(const RunLabel& label) const {
    auto it = runs_.find(label);
    return it == runs_.end() ? MetricsReport{} : MetricsReport{it->second};
  }

  std::string format() const {
    std::string out = "strategy\tn_negatives\tbatch_size\tfold\tmap_at_" + std::to_string(k_) +
                      "\tndcg_at_" + std::to_string(k_) + "\tmmr\n";
    char buf[256];
    for (const auto& [label, folds] : runs_) {
      const auto prefix = label.strategy + "\t" + std::to_string(label.n_negatives) + "\t" +
                          std::to_string(label.batch_size) + "\t";
      for (const auto& f : folds) {
        std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f\n", f.fold, f.map, f.ndcg, f.mmr);
        out += prefix + buf;
      }
      const MetricsReport r{folds};
      const auto map = r.map(), ndcg = r.ndcg(), mmr = r.mmr();
      std::snprintf(buf, sizeof buf, "mean±std\t%.6f±%.6f\t%.6f±%.6f\t%.6f±%.6f\n", map.mean, map.std,
                    ndcg.mean, ndcg.std, mmr.mean, mmr.std);
      out += prefix + buf;
    }
    return out;
  }

  /// Parses a file produced by format(); aggregate rows are recomputed, not read.
  static MetricsTable parse(const fs::path& path) {
    const auto rows = detail::read_tsv(path);
    if (rows.empty()) throw DataError("empty metrics file " + path.string());
    const auto& header = rows[0];
    if (header.size() != 7 || header[4].rfind("map_at_", 0) != 0) {
      throw DataError("unrecognized metrics header in " + path.string());
    }
    MetricsTable t(detail::parse_index(header[4].substr(7), path, 0));
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& f = rows[r];
      if (f.size() != 7) throw ParseError(r + 1, "metrics row must have 7 fields");
      if (f[3] == "mean±std") continue;
      RunLabel label{f[0], detail::parse_index(f[1], path, r), detail::parse_index(f[2], path, r)};
      FoldMetrics m;
      m.fold = static_cast<int>(detail::parse_index(f[3], path, r));
      m.map = std::stod(f[4]);
      m.ndcg = std::stod(f[5]);
      m.mmr = std::stod(f[6]);
      t.upsert(label, m);
    }
    return t;
  }

  std::size_t k() const { return k_; }

 private:
  std::size_t k_;
  std::map<RunLabel, std::vector<FoldMetrics>> runs_;
};

}  // namespace cml
