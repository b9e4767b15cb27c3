#pragma once

// Segment boundaries for an AV clip and per-segment mean aggregation.
// Boundaries are always computed on one modality and applied to both.

#include "segvm/common.hpp"
#include "segvm/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace segvm {

enum class SegmenterKind { foote, fixed, whole_clip, external };

struct Boundaries {
  std::string clip_id;
  SegmenterKind kind = SegmenterKind::whole_clip;
  std::string segmenter;                // "foote", "fixed", "whole_clip" or the external name
  std::size_t num_frames = 0;
  std::vector<std::size_t> cut_frames;  // strictly inside (0, num_frames)
  bool warning = false;                 // set when a segmenter fell back to whole-clip

  std::size_t num_segments() const { return cut_frames.size() + 1; }

  /// Half-open [begin, end) frame ranges of every segment, in order.
  std::vector<std::pair<std::size_t, std::size_t>> segments() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (auto cut : cut_frames) {
      out.emplace_back(begin, cut);
      begin = cut;
    }
    out.emplace_back(begin, num_frames);
    return out;
  }
};

inline void validate(const Boundaries& b, std::size_t min_segment_frames = 1) {
  require(b.num_frames >= 1, ErrorCode::invariant, "boundaries for '" + b.clip_id + "' cover no frames");
  std::size_t prev = 0;
  for (auto cut : b.cut_frames) {
    require(cut > prev && cut < b.num_frames, ErrorCode::invariant,
            "boundaries for '" + b.clip_id + "' must be strictly increasing inside (0, num_frames)");
    prev = cut;
  }
  for (auto [begin, end] : b.segments())
    require(end - begin >= std::min(min_segment_frames, b.num_frames), ErrorCode::invariant,
            "boundaries for '" + b.clip_id + "' contain a segment shorter than the minimum length");
}

inline std::string segmenter_name(SegmenterKind kind) {
  switch (kind) {
    case SegmenterKind::foote: return "foote";
    case SegmenterKind::fixed: return "fixed";
    case SegmenterKind::whole_clip: return "whole_clip";
    case SegmenterKind::external: return "external";
  }
  return "unknown";
}

struct FooteParams {
  std::size_t kernel_half_width = 8;
  double gaussian_taper_std = 3.2;  // frames; 0.4 x kernel_half_width
  double peak_threshold = 0.5;
  std::size_t min_segment_frames = 2;
};

inline json to_json(const FooteParams& p) {
  return {{"kernel_half_width", p.kernel_half_width},
          {"gaussian_taper_std", p.gaussian_taper_std},
          {"peak_threshold", p.peak_threshold},
          {"min_segment_frames", p.min_segment_frames}};
}

inline Boundaries whole_clip(const FrameFeatureSequence& seq) {
  return {seq.clip_id, SegmenterKind::whole_clip, "whole_clip", seq.num_frames(), {}, false};
}

// ---------------------------------------------------------------------------
// Foote novelty segmentation

/// Cosine self-similarity of the frames; zero-norm frames are dissimilar to everything.
inline Matrix cosine_ssm(const FrameFeatureSequence& seq) {
  Matrix x = seq.frames.cast<double>();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n > 0) x.row(i) /= n;
  }
  return x * x.transpose();
}

/// Novelty at every frame boundary t in [0, num_frames]. The checkerboard
/// kernel is truncated symmetrically near the clip edges and normalized by
/// its same-side weight, so a constant signal scores 0 and a switch between
/// two orthogonal blocks scores 1. Positions closer than `min_width` frames
/// to either edge score 0.
inline std::vector<double> foote_novelty(const Matrix& ssm, std::size_t half_width, double taper_std,
                                         std::size_t min_width = 1) {
  const auto n = static_cast<std::size_t>(ssm.rows());
  std::vector<double> novelty(n + 1, 0.0);
  const double var2 = 2.0 * taper_std * taper_std;
  for (std::size_t t = 1; t < n; ++t) {
    const std::size_t width = std::min({half_width, t, n - t});
    if (width < std::max<std::size_t>(min_width, 1)) continue;
    double same = 0.0, cross = 0.0, weight = 0.0;
    for (std::size_t a = 0; a < 2 * width; ++a) {
      const double u = static_cast<double>(a) - static_cast<double>(width) + 0.5;
      for (std::size_t b = 0; b < 2 * width; ++b) {
        const double v = static_cast<double>(b) - static_cast<double>(width) + 0.5;
        const double w = taper_std > 0 ? std::exp(-(u * u + v * v) / var2) : 1.0;
        const double s = ssm(t - width + a, t - width + b);
        if ((u < 0) == (v < 0)) {
          same += w * s;
          weight += w;
        } else {
          cross += w * s;
        }
      }
    }
    // same-side and cross quadrants carry equal total weight
    novelty[t] = (same - cross) / weight;
  }
  return novelty;
}

inline Boundaries segment_foote(const FrameFeatureSequence& seq, const FooteParams& params = {}) {
  require(params.kernel_half_width >= 1, ErrorCode::invalid_argument, "kernel_half_width must be >= 1");
  require(params.min_segment_frames >= 1, ErrorCode::invalid_argument, "min_segment_frames must be >= 1");
  validate(seq);
  const std::size_t n = seq.num_frames();
  Boundaries out{seq.clip_id, SegmenterKind::foote, "foote", n, {}, false};
  if (n < 2 * params.kernel_half_width) {
    out.warning = true;
    return out;
  }

  const auto novelty = foote_novelty(cosine_ssm(seq), params.kernel_half_width, params.gaussian_taper_std,
                                     params.min_segment_frames);
  const std::size_t lo = params.min_segment_frames;
  const std::size_t hi = n >= params.min_segment_frames ? n - params.min_segment_frames : 0;
  if (lo > hi) return out;

  double mean = 0.0;
  for (std::size_t t = lo; t <= hi; ++t) mean += novelty[t];
  mean /= static_cast<double>(hi - lo + 1);
  double var = 0.0;
  for (std::size_t t = lo; t <= hi; ++t) var += (novelty[t] - mean) * (novelty[t] - mean);
  const double stddev = std::sqrt(var / static_cast<double>(hi - lo + 1));
  // absolute floor keeps round-off ripples on flat curves from becoming peaks
  constexpr double kMinNovelty = 1e-6;
  const double threshold = std::max(params.peak_threshold * (mean + stddev), kMinNovelty);

  std::vector<std::size_t> peaks;
  for (std::size_t t = lo; t <= hi; ++t) {
    const bool rising = novelty[t] > novelty[t - 1];
    const bool not_falling_after = t + 1 > n || novelty[t] >= novelty[t + 1];
    if (rising && not_falling_after && novelty[t] > threshold) peaks.push_back(t);
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [&](std::size_t a, std::size_t b) { return novelty[a] > novelty[b]; });
  std::vector<std::size_t> kept;
  for (auto p : peaks) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](std::size_t q) {
      return (p > q ? p - q : q - p) >= params.min_segment_frames;
    });
    if (clear) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end());
  out.cut_frames = std::move(kept);
  return out;
}

// ---------------------------------------------------------------------------

inline Boundaries segment_fixed(const FrameFeatureSequence& seq, std::size_t length_frames,
                                std::size_t min_segment_frames = 2) {
  require(length_frames >= 1 && length_frames >= min_segment_frames, ErrorCode::invalid_argument,
          "fixed segment length must be >= min_segment_frames");
  const std::size_t n = seq.num_frames();
  Boundaries out{seq.clip_id, SegmenterKind::fixed, "fixed", n, {}, false};
  for (std::size_t cut = length_frames; cut < n; cut += length_frames) out.cut_frames.push_back(cut);
  if (!out.cut_frames.empty() && n - out.cut_frames.back() < min_segment_frames) out.cut_frames.pop_back();
  return out;
}

/// Seconds to frame index, rounding to the nearest frame with ties going down.
inline std::size_t seconds_to_frame(double seconds, double frame_rate_hz) {
  return static_cast<std::size_t>(std::ceil(seconds * frame_rate_hz - 0.5));
}

inline Boundaries boundaries_from_annotation(const BoundaryAnnotation& annotation, const FrameFeatureSequence& seq,
                                             std::size_t min_segment_frames = 2) {
  require(annotation.clip_id == seq.clip_id, ErrorCode::mismatch,
          "annotation clip_id '" + annotation.clip_id + "' does not match clip '" + seq.clip_id + "'");
  const std::size_t n = seq.num_frames();
  const double duration = seq.duration_s();
  Boundaries out{seq.clip_id, SegmenterKind::external, annotation.segmenter.empty() ? "external" : annotation.segmenter,
                 n, {}, false};
  double prev = -1.0;
  std::size_t last = 0;
  for (double t : annotation.boundaries_s) {
    require(std::isfinite(t) && t >= 0 && t <= duration, ErrorCode::out_of_range,
            "boundary " + std::to_string(t) + " s outside clip '" + seq.clip_id + "' of " + std::to_string(duration) +
                " s");
    require(t >= prev, ErrorCode::invariant, "boundary times for '" + seq.clip_id + "' are not ascending");
    prev = t;
    const std::size_t frame = seconds_to_frame(t, seq.frame_rate_hz);
    if (frame - last < min_segment_frames || frame >= n) continue;
    out.cut_frames.push_back(frame);
    last = frame;
  }
  while (!out.cut_frames.empty() && n - out.cut_frames.back() < min_segment_frames) out.cut_frames.pop_back();
  return out;
}

inline Boundaries import_boundaries(const fs::path& annotation, const FrameFeatureSequence& seq,
                                    std::size_t min_segment_frames = 2) {
  return boundaries_from_annotation(load_annotation(annotation), seq, min_segment_frames);
}

inline BoundaryAnnotation to_annotation(const Boundaries& b, double frame_rate_hz = 1.0) {
  BoundaryAnnotation a{b.clip_id, b.segmenter, {}};
  for (auto f : b.cut_frames) a.boundaries_s.push_back(static_cast<double>(f) / frame_rate_hz);
  return a;
}

// ---------------------------------------------------------------------------
// Aggregation

struct SegmentedClip {
  std::string clip_id;
  Boundaries boundaries;
  Matrix music_inputs;  // K x music dim
  Matrix video_inputs;  // K x video dim

  std::size_t num_segments() const { return static_cast<std::size_t>(music_inputs.rows()); }
};

inline Matrix segment_means(const FeatureMatrix& frames, const Boundaries& b) {
  const auto segs = b.segments();
  Matrix out(static_cast<Eigen::Index>(segs.size()), frames.cols());
  for (std::size_t k = 0; k < segs.size(); ++k) {
    const auto [begin, end] = segs[k];
    out.row(static_cast<Eigen::Index>(k)) =
        frames.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))
            .cast<double>()
            .colwise()
            .sum() /
        static_cast<double>(end - begin);
  }
  return out;
}

/// Mean features per segment for both modalities. Sequences may differ by
/// one frame; the longer one is truncated.
inline SegmentedClip aggregate(const FrameFeatureSequence& music, const FrameFeatureSequence& video,
                               const Boundaries& boundaries) {
  const std::size_t nm = music.num_frames(), nv = video.num_frames();
  require((nm > nv ? nm - nv : nv - nm) <= 1, ErrorCode::mismatch,
          "clip '" + music.clip_id + "': music and video lengths differ by more than one frame");
  const std::size_t n = std::min(nm, nv);
  require(boundaries.cut_frames.empty() || boundaries.cut_frames.back() < n, ErrorCode::out_of_range,
          "clip '" + music.clip_id + "': boundary outside the feature sequences");
  Boundaries b = boundaries;
  b.num_frames = n;
  validate(b);
  SegmentedClip out{music.clip_id, b, {}, {}};
  out.music_inputs = segment_means(music.frames.topRows(static_cast<Eigen::Index>(n)), b);
  out.video_inputs = segment_means(video.frames.topRows(static_cast<Eigen::Index>(n)), b);
  return out;
}

// ---------------------------------------------------------------------------
// Segmenter selection

struct SegmenterConfig {
  SegmenterKind kind = SegmenterKind::foote;
  std::string external_name;  // annotation key when kind == external
  Modality source = Modality::music;
  FooteParams foote;
  std::size_t fixed_length_frames = 20;
  std::size_t min_segment_frames = 2;

  /// Name recorded in checkpoints and reports.
  std::string name() const { return kind == SegmenterKind::external ? external_name : segmenter_name(kind); }
};

inline json to_json(const SegmenterConfig& c) {
  return {{"name", c.name()},
          {"kind", segmenter_name(c.kind)},
          {"source", to_string(c.source)},
          {"foote", to_json(c.foote)},
          {"fixed_length_frames", c.fixed_length_frames},
          {"min_segment_frames", c.min_segment_frames}};
}

/// Parses "foote", "fixed", "whole_clip" or "external:<name>".
inline SegmenterConfig parse_segmenter(const std::string& spec) {
  SegmenterConfig c;
  if (spec == "foote") {
    c.kind = SegmenterKind::foote;
  } else if (spec == "fixed") {
    c.kind = SegmenterKind::fixed;
  } else if (spec == "whole_clip") {
    c.kind = SegmenterKind::whole_clip;
  } else if (spec.rfind("external:", 0) == 0 && spec.size() > 9) {
    c.kind = SegmenterKind::external;
    c.external_name = spec.substr(9);
  } else {
    fail(ErrorCode::invalid_argument, "unknown segmenter '" + spec + "'");
  }
  return c;
}

inline Boundaries segment_clip(const SegmenterConfig& config, const FrameFeatureSequence& music,
                               const FrameFeatureSequence& video, const ManifestEntry* entry = nullptr) {
  const FrameFeatureSequence& source = config.source == Modality::music ? music : video;
  Boundaries b;
  switch (config.kind) {
    case SegmenterKind::foote: {
      FooteParams p = config.foote;
      p.min_segment_frames = config.min_segment_frames;
      b = segment_foote(source, p);
      break;
    }
    case SegmenterKind::fixed:
      b = segment_fixed(source, config.fixed_length_frames, config.min_segment_frames);
      break;
    case SegmenterKind::whole_clip:
      b = whole_clip(source);
      break;
    case SegmenterKind::external: {
      require(entry != nullptr, ErrorCode::invalid_argument, "external segmenter needs a manifest entry");
      const auto it = entry->boundaries.find(config.external_name);
      require(it != entry->boundaries.end(), ErrorCode::io,
              "clip '" + music.clip_id + "': no '" + config.external_name + "' boundary annotation");
      b = import_boundaries(it->second, source, config.min_segment_frames);
      break;
    }
  }
  b.segmenter = config.name();
  return b;
}

}  // namespace segvm
