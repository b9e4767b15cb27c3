#pragma once

// Retrieval evaluation: embedding a test catalog, the vanilla and perturbed
// scenarios, and the R@k / mean rank metrics.

#include "segvm/common.hpp"
#include "segvm/embed_net.hpp"
#include "segvm/parallel.hpp"
#include "segvm/ranking.hpp"
#include "segvm/segmentation.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace segvm {

struct EmbeddedClip {
  EmbeddingSequence music;
  EmbeddingSequence video;

  const std::string& clip_id() const { return music.clip_id; }
};

/// Infer-mode embeddings of every segment of one clip.
inline EmbeddedClip embed_clip(const TwoBranchParams& params, const SegmentedClip& clip, const std::string& segmenter) {
  return {{clip.clip_id, Modality::music, segmenter, forward_infer(params, clip.music_inputs, Modality::music)},
          {clip.clip_id, Modality::video, segmenter, forward_infer(params, clip.video_inputs, Modality::video)}};
}

/// Each clip is embedded on its own, so results do not depend on `threads`.
inline std::vector<EmbeddedClip> embed_catalog(const TwoBranchParams& params, const std::vector<SegmentedClip>& clips,
                                               const std::string& segmenter, int threads = 1) {
  std::vector<EmbeddedClip> out(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) { out[i] = embed_clip(params, clips[i], segmenter); });
  return out;
}

// ---------------------------------------------------------------------------
// Scenarios

enum class Scenario { vanilla, crop_query, stretch_targets, crop_stretch };

inline constexpr Scenario kAllScenarios[] = {Scenario::vanilla, Scenario::crop_query, Scenario::stretch_targets,
                                             Scenario::crop_stretch};

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::vanilla: return "vanilla";
    case Scenario::crop_query: return "crop_query";
    case Scenario::stretch_targets: return "stretch_targets";
    case Scenario::crop_stretch: return "crop_stretch";
  }
  return "unknown";
}

inline Scenario parse_scenario(const std::string& name) {
  for (Scenario s : kAllScenarios)
    if (to_string(s) == name) return s;
  fail(ErrorCode::invalid_argument, "unknown scenario '" + name + "'");
}

inline bool crops_query(Scenario s) { return s == Scenario::crop_query || s == Scenario::crop_stretch; }
inline bool stretches_targets(Scenario s) { return s == Scenario::stretch_targets || s == Scenario::crop_stretch; }

/// Drops the first two segments; queries with K <= 2 are excluded (nullopt).
inline std::optional<EmbeddingSequence> perturb_crop_query(const EmbeddingSequence& seq) {
  if (seq.size() <= 2) return std::nullopt;
  EmbeddingSequence out = seq;
  out.embeddings = seq.embeddings.bottomRows(seq.embeddings.rows() - 2);
  return out;
}

/// Repeats every segment twice in place: [s1, s1, s2, s2, ...].
inline EmbeddingSequence perturb_stretch_targets(const EmbeddingSequence& seq) {
  require(seq.size() >= 1, ErrorCode::invalid_argument, "cannot stretch an empty sequence");
  EmbeddingSequence out = seq;
  out.embeddings.resize(2 * seq.embeddings.rows(), seq.embeddings.cols());
  for (Eigen::Index i = 0; i < seq.embeddings.rows(); ++i) {
    out.embeddings.row(2 * i) = seq.embeddings.row(i);
    out.embeddings.row(2 * i + 1) = seq.embeddings.row(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline bool recall_at_k(const RankedList& ranked, const std::string& target, std::size_t k) {
  return ranked.rank_of(target) <= k;
}

struct RankSummary {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(N)
};

inline RankSummary mean_rank_ci(const std::vector<std::size_t>& ranks) {
  require(!ranks.empty(), ErrorCode::invalid_argument, "no ranks to summarize");
  const double n = static_cast<double>(ranks.size());
  double mean = 0.0;
  for (auto r : ranks) mean += static_cast<double>(r);
  mean /= n;
  if (ranks.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (auto r : ranks) ss += (static_cast<double>(r) - mean) * (static_cast<double>(r) - mean);
  return {mean, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

struct EvalReport {
  std::string scenario;
  std::string distance;
  std::string segmenter;
  std::size_t num_queries = 0;
  std::size_t catalog_size = 0;
  std::size_t excluded = 0;
  double r1 = 0.0, r10 = 0.0, r25 = 0.0;  // percentages
  double mean_rank = 0.0;
  double ci95 = 0.0;
  double wall_s = 0.0;
  std::vector<std::size_t> ranks;  // per evaluated query, in query order
};

inline json to_json(const EvalReport& r, bool with_timing = true) {
  return {{"scenario", r.scenario},
          {"distance", r.distance},
          {"segmenter", r.segmenter},
          {"num_queries", r.num_queries},
          {"catalog_size", r.catalog_size},
          {"excluded", r.excluded},
          {"r_at_1", r.r1},
          {"r_at_10", r.r10},
          {"r_at_25", r.r25},
          {"mean_rank", r.mean_rank},
          {"ci95", r.ci95},
          {"ci_method", "normal approximation: 1.96 * sample std (N-1) / sqrt(N)"},
          {"chance_mean_rank", (static_cast<double>(r.catalog_size) + 1.0) / 2.0},
          {"wall_s", with_timing ? r.wall_s : 0.0}};
}

inline EvalReport summarize(std::string scenario, std::string distance, std::string segmenter,
                            std::vector<std::size_t> ranks, std::size_t catalog_size, std::size_t excluded,
                            double wall_s) {
  EvalReport r{std::move(scenario), std::move(distance), std::move(segmenter), ranks.size(), catalog_size, excluded};
  if (!ranks.empty()) {
    std::size_t hit1 = 0, hit10 = 0, hit25 = 0;
    for (auto rank : ranks) {
      hit1 += rank <= 1;
      hit10 += rank <= 10;
      hit25 += rank <= 25;
    }
    const double n = static_cast<double>(ranks.size());
    r.r1 = 100.0 * static_cast<double>(hit1) / n;
    r.r10 = 100.0 * static_cast<double>(hit10) / n;
    r.r25 = 100.0 * static_cast<double>(hit25) / n;
    const RankSummary s = mean_rank_ci(ranks);
    r.mean_rank = s.mean;
    r.ci95 = s.ci95;
  }
  r.wall_s = wall_s;
  r.ranks = std::move(ranks);
  return r;
}

/// Every clip's video is a query against all N music tracks, perturbed per
/// the scenario; `fn(music, query)` gives delta.
template <typename DeltaFn>
EvalReport evaluate_with(const std::vector<EmbeddedClip>& clips, Scenario scenario, DeltaFn&& fn,
                         const std::string& distance_name, int threads = 1) {
  require(!clips.empty(), ErrorCode::invalid_argument, "empty evaluation catalog");
  const auto start = std::chrono::steady_clock::now();
  std::vector<EmbeddingSequence> targets;
  targets.reserve(clips.size());
  for (const auto& c : clips) targets.push_back(stretches_targets(scenario) ? perturb_stretch_targets(c.music) : c.music);

  std::vector<std::optional<std::size_t>> rank_slots(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t q) {
    std::optional<EmbeddingSequence> query = clips[q].video;
    if (crops_query(scenario)) query = perturb_crop_query(clips[q].video);
    if (!query) return;
    const RankedList ranked = rank_with(*query, targets, fn, distance_name, 1);
    rank_slots[q] = ranked.rank_of(clips[q].clip_id());
  });
  std::vector<std::size_t> ranks;
  std::size_t excluded = 0;
  for (const auto& slot : rank_slots) {
    if (slot) ranks.push_back(*slot);
    else ++excluded;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summarize(to_string(scenario), distance_name, clips.front().music.segmenter, std::move(ranks), clips.size(),
                   excluded, wall);
}

/// Evaluates the first N clips of an embedded test catalog with each distance.
inline std::vector<EvalReport> run_eval(const std::vector<EmbeddedClip>& test_set, Scenario scenario,
                                        const std::vector<Distance>& distances, std::size_t n,
                                        const DistanceParams& params = {}, int threads = 1) {
  require(n >= 1 && n <= test_set.size(), ErrorCode::invalid_argument,
          "N=" + std::to_string(n) + " exceeds the catalog size " + std::to_string(test_set.size()));
  const std::vector<EmbeddedClip> clips(test_set.begin(), test_set.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<EvalReport> reports;
  for (Distance d : distances) {
    reports.push_back(evaluate_with(
        clips, scenario,
        [&](const EmbeddingSequence& music, const EmbeddingSequence& query) {
          return delta(d, music.embeddings, query.embeddings, params);
        },
        to_string(d), threads));
  }
  return reports;
}

/// Checkpoint-level entry point: refuses a test catalog segmented with a
/// different segmenter than the checkpoint was trained with.
inline std::vector<EvalReport> run_eval(const Checkpoint& ckpt, const std::vector<SegmentedClip>& test_set,
                                        const std::string& segmenter, Scenario scenario,
                                        const std::vector<Distance>& distances, std::size_t n,
                                        const DistanceParams& params = {}, int threads = 1) {
  require(ckpt.segmenter == segmenter, ErrorCode::mismatch,
          "checkpoint segmenter '" + ckpt.segmenter + "' differs from test segmenter '" + segmenter + "'");
  require(n >= 1 && n <= test_set.size(), ErrorCode::invalid_argument,
          "N=" + std::to_string(n) + " exceeds the catalog size " + std::to_string(test_set.size()));
  const std::vector<SegmentedClip> subset(test_set.begin(), test_set.begin() + static_cast<std::ptrdiff_t>(n));
  return run_eval(embed_catalog(ckpt.params, subset, segmenter, threads), scenario, distances, n, params, threads);
}

/// Table layout: one row per (segmenter, scenario, distance).
inline std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::string out = "segmenter,scenario,distance,R@1,R@10,R@25,mean_rank,ci95,excluded,wall_s\n";
  char line[512];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%s,%s,%s,%.2f,%.2f,%.2f,%.2f,%.2f,%zu,%.3f\n", r.segmenter.c_str(),
                  r.scenario.c_str(), r.distance.c_str(), r.r1, r.r10, r.r25, r.mean_rank, r.ci95, r.excluded,
                  r.wall_s);
    out += line;
  }
  return out;
}

}  // namespace segvm
