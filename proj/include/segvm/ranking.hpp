#pragma once

// Ranking distances between a music track's and a video query's segment
// embedding sequences, and catalog ranking.

#include "segvm/common.hpp"
#include "segvm/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace segvm {

struct EmbeddingSequence {
  std::string clip_id;
  Modality modality = Modality::music;
  std::string segmenter;
  Matrix embeddings;  // K x D, rows in temporal order

  std::size_t size() const { return static_cast<std::size_t>(embeddings.rows()); }
};

enum class Distance { centroid, single, complete, nw_dtw, sw_dtw, trace, best_trace };

inline constexpr Distance kAllDistances[] = {Distance::centroid, Distance::single, Distance::complete,
                                             Distance::nw_dtw,   Distance::sw_dtw, Distance::trace,
                                             Distance::best_trace};

inline std::string to_string(Distance d) {
  switch (d) {
    case Distance::centroid: return "centroid";
    case Distance::single: return "single";
    case Distance::complete: return "complete";
    case Distance::nw_dtw: return "nw_dtw";
    case Distance::sw_dtw: return "sw_dtw";
    case Distance::trace: return "trace";
    case Distance::best_trace: return "best_trace";
  }
  return "unknown";
}

inline Distance parse_distance(const std::string& name) {
  for (Distance d : kAllDistances)
    if (to_string(d) == name) return d;
  fail(ErrorCode::invalid_argument, "unknown distance '" + name + "'");
}

struct DistanceParams {
  double nw_indel = 0.05;
  double sw_indel = 0.01;
};

namespace detail {

inline void require_nonempty(const Matrix& a, const Matrix& b) {
  require(a.rows() >= 1 && b.rows() >= 1, ErrorCode::invalid_argument, "empty embedding sequence");
  require(a.cols() == b.cols(), ErrorCode::mismatch, "embedding dims differ");
}

/// D(i, j) = |music_i - query_j|^2
inline Matrix pairwise_sq_distances(const Matrix& music, const Matrix& query) {
  Matrix d(music.rows(), query.rows());
  for (Eigen::Index i = 0; i < music.rows(); ++i)
    for (Eigen::Index j = 0; j < query.rows(); ++j) d(i, j) = (music.row(i) - query.row(j)).squaredNorm();
  return d;
}

}  // namespace detail

inline double dist_centroid(const Matrix& music, const Matrix& query) {
  detail::require_nonempty(music, query);
  return (music.colwise().mean() - query.colwise().mean()).squaredNorm();
}

inline double dist_single(const Matrix& music, const Matrix& query) {
  detail::require_nonempty(music, query);
  return detail::pairwise_sq_distances(music, query).minCoeff();
}

inline double dist_complete(const Matrix& music, const Matrix& query) {
  detail::require_nonempty(music, query);
  return detail::pairwise_sq_distances(music, query).maxCoeff();
}

/// Global alignment score (higher is more similar). Border cells cost
/// indel per skipped segment; cells take the best of a skip in either
/// sequence or a match scored by the dot product.
inline double nw_dtw(const Matrix& music, const Matrix& query, double indel = 0.05) {
  detail::require_nonempty(music, query);
  const Eigen::Index km = music.rows(), kq = query.rows();
  const Matrix sim = music * query.transpose();
  Matrix x(km + 1, kq + 1);
  for (Eigen::Index i = 0; i <= km; ++i) x(i, 0) = -indel * static_cast<double>(i);
  for (Eigen::Index j = 0; j <= kq; ++j) x(0, j) = -indel * static_cast<double>(j);
  for (Eigen::Index i = 1; i <= km; ++i)
    for (Eigen::Index j = 1; j <= kq; ++j)
      x(i, j) = std::max({x(i - 1, j) - indel, x(i, j - 1) - indel, x(i - 1, j - 1) + sim(i - 1, j - 1)});
  return x(km, kq);
}

/// Local alignment score: zero borders, cells floored at 0, best cell anywhere.
inline double sw_dtw(const Matrix& music, const Matrix& query, double indel = 0.01) {
  detail::require_nonempty(music, query);
  const Eigen::Index km = music.rows(), kq = query.rows();
  const Matrix sim = music * query.transpose();
  Matrix x = Matrix::Zero(km + 1, kq + 1);
  for (Eigen::Index i = 1; i <= km; ++i)
    for (Eigen::Index j = 1; j <= kq; ++j)
      x(i, j) = std::max({0.0, x(i - 1, j) - indel, x(i, j - 1) - indel, x(i - 1, j - 1) + sim(i - 1, j - 1)});
  return x.maxCoeff();
}

inline double trace(const Matrix& music, const Matrix& query) {
  detail::require_nonempty(music, query);
  const Eigen::Index k = std::min(music.rows(), query.rows());
  return (music.topRows(k) - query.topRows(k)).rowwise().squaredNorm().sum();
}

/// Minimum diagonal sum over every offset of the shorter sequence along the longer one.
inline double best_trace(const Matrix& music, const Matrix& query) {
  detail::require_nonempty(music, query);
  const bool music_shorter = music.rows() <= query.rows();
  const Matrix& shorter = music_shorter ? music : query;
  const Matrix& longer = music_shorter ? query : music;
  const Eigen::Index k = shorter.rows();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index offset = 0; offset + k <= longer.rows(); ++offset)
    best = std::min(best, (shorter - longer.middleRows(offset, k)).rowwise().squaredNorm().sum());
  return best;
}

/// Ranking value: lower is better. Alignment similarities are negated.
inline double delta(Distance d, const Matrix& music, const Matrix& query, const DistanceParams& p = {}) {
  switch (d) {
    case Distance::centroid: return dist_centroid(music, query);
    case Distance::single: return dist_single(music, query);
    case Distance::complete: return dist_complete(music, query);
    case Distance::nw_dtw: return -nw_dtw(music, query, p.nw_indel);
    case Distance::sw_dtw: return -sw_dtw(music, query, p.sw_indel);
    case Distance::trace: return trace(music, query);
    case Distance::best_trace: return best_trace(music, query);
  }
  fail(ErrorCode::invalid_argument, "unknown distance");
}

// ---------------------------------------------------------------------------

struct RankedEntry {
  std::string clip_id;
  double delta = 0.0;
};

struct RankedList {
  std::string query_id;
  std::string distance;
  std::string segmenter;
  std::vector<RankedEntry> results;  // ascending delta, ties by clip_id
  double wall_ms = 0.0;

  /// 1-based rank of `clip_id`.
  std::size_t rank_of(const std::string& clip_id) const {
    for (std::size_t i = 0; i < results.size(); ++i)
      if (results[i].clip_id == clip_id) return i + 1;
    fail(ErrorCode::out_of_range, "target '" + clip_id + "' is not in the ranked list");
  }
};

inline void sort_ranked(std::vector<RankedEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.delta != b.delta) return a.delta < b.delta;
    return a.clip_id < b.clip_id;
  });
}

/// Ranks every catalog track against the query with an arbitrary delta(music, query).
template <typename DeltaFn>
RankedList rank_with(const EmbeddingSequence& query, const std::vector<EmbeddingSequence>& catalog, DeltaFn&& fn,
                     std::string distance_name, int threads = 1) {
  require(!catalog.empty(), ErrorCode::invalid_argument, "empty catalog");
  for (const auto& track : catalog)
    require(track.segmenter == query.segmenter, ErrorCode::mismatch,
            "catalog track '" + track.clip_id + "' was segmented with '" + track.segmenter + "', query with '" +
                query.segmenter + "'");
  const auto start = std::chrono::steady_clock::now();
  RankedList out{query.clip_id, std::move(distance_name), query.segmenter, std::vector<RankedEntry>(catalog.size()),
                 0.0};
  parallel_for(catalog.size(), threads, [&](std::size_t i) {
    out.results[i] = {catalog[i].clip_id, fn(catalog[i], query)};
  });
  sort_ranked(out.results);
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline RankedList rank_catalog(const EmbeddingSequence& query, const std::vector<EmbeddingSequence>& catalog,
                               Distance distance, const DistanceParams& params = {}, int threads = 1) {
  return rank_with(
      query, catalog,
      [&](const EmbeddingSequence& music, const EmbeddingSequence& q) {
        return delta(distance, music.embeddings, q.embeddings, params);
      },
      to_string(distance), threads);
}

/// Ranked output document; `top_n` of 0 keeps every result.
inline nlohmann::json to_json(const RankedList& r, std::size_t top_n = 0, bool with_timing = true) {
  nlohmann::json results = nlohmann::json::array();
  const std::size_t n = top_n == 0 ? r.results.size() : std::min(top_n, r.results.size());
  for (std::size_t i = 0; i < n; ++i)
    results.push_back({{"clip_id", r.results[i].clip_id}, {"delta", r.results[i].delta}, {"rank", i + 1}});
  return {{"query_id", r.query_id},
          {"distance_name", r.distance},
          {"segmenter", r.segmenter},
          {"results", results},
          {"wall_ms", with_timing ? r.wall_ms : 0.0}};
}

}  // namespace segvm
