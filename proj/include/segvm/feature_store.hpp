#pragma once

// Clip feature sequences on disk (FVEC), catalog manifests, boundary
// annotations and the synthetic paired-clip generator.

#include "segvm/common.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace segvm {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Frame features are stored in single precision, the on-disk width, so a
/// save/load round trip is exact for every finite input.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FrameFeatureSequence {
  std::string clip_id;
  Modality modality = Modality::music;
  float frame_rate_hz = 1.0f;
  FeatureMatrix frames;  // num_frames x dim

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }
  double duration_s() const { return static_cast<double>(num_frames()) / frame_rate_hz; }
};

inline void validate(const FrameFeatureSequence& seq) {
  require(seq.frames.cols() >= 1, ErrorCode::invariant, "feature sequence '" + seq.clip_id + "': dim must be >= 1");
  require(seq.frames.rows() >= 1, ErrorCode::invariant,
          "feature sequence '" + seq.clip_id + "': num_frames must be >= 1");
  require(std::isfinite(seq.frame_rate_hz) && seq.frame_rate_hz > 0, ErrorCode::invariant,
          "feature sequence '" + seq.clip_id + "': frame_rate_hz must be > 0");
  require(seq.frames.allFinite(), ErrorCode::non_finite,
          "feature sequence '" + seq.clip_id + "': non-finite values");
}

// ---------------------------------------------------------------------------
// FVEC binary format

namespace fvec {

inline constexpr std::array<char, 4> kMagic{'S', 'V', 'M', 'F'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 24;

}  // namespace fvec

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const char* p) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::io, "read failure on '" + path.string() + "'");
  return data;
}

inline void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  require(static_cast<bool>(out), ErrorCode::io, "write failure on '" + path.string() + "'");
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::io, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

}  // namespace detail

inline std::string encode_features(const FrameFeatureSequence& seq) {
  validate(seq);
  std::string out;
  out.reserve(fvec::kHeaderBytes + seq.frames.size() * sizeof(float));
  out.append(fvec::kMagic.data(), fvec::kMagic.size());
  detail::put_le<std::uint32_t>(out, fvec::kVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.modality));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(seq.num_frames()));
  detail::put_le<float>(out, seq.frame_rate_hz);
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i) detail::put_le<float>(out, seq.frames.data()[i]);
  return out;
}

inline FrameFeatureSequence decode_features(const std::string& bytes, std::string clip_id = {}) {
  require(bytes.size() >= 4 && std::equal(fvec::kMagic.begin(), fvec::kMagic.end(), bytes.begin()),
          ErrorCode::bad_magic, "bad magic: not an FVEC file");
  require(bytes.size() >= fvec::kHeaderBytes, ErrorCode::truncated, "truncated payload: incomplete header");
  const char* p = bytes.data();
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  require(version == fvec::kVersion, ErrorCode::version_mismatch,
          "version mismatch: expected " + std::to_string(fvec::kVersion) + ", got " + std::to_string(version));
  const auto modality = detail::get_le<std::uint32_t>(p + 8);
  require(modality <= 1, ErrorCode::invariant, "unknown modality " + std::to_string(modality));
  const auto dim = detail::get_le<std::uint32_t>(p + 12);
  const auto frames = detail::get_le<std::uint32_t>(p + 16);
  const auto rate = detail::get_le<float>(p + 20);
  require(dim >= 1 && frames >= 1, ErrorCode::invariant, "FVEC header declares an empty matrix");
  const std::uint64_t expected = std::uint64_t{dim} * frames * sizeof(float);
  require(bytes.size() - fvec::kHeaderBytes >= expected, ErrorCode::truncated,
          "truncated payload: header declares " + std::to_string(frames) + " frames of dim " + std::to_string(dim));
  require(bytes.size() - fvec::kHeaderBytes == expected, ErrorCode::invariant, "trailing bytes after FVEC payload");

  FrameFeatureSequence seq;
  seq.clip_id = std::move(clip_id);
  seq.modality = static_cast<Modality>(modality);
  seq.frame_rate_hz = rate;
  seq.frames.resize(frames, dim);
  const char* payload = p + fvec::kHeaderBytes;
  for (std::uint64_t i = 0; i < std::uint64_t{dim} * frames; ++i)
    seq.frames.data()[i] = detail::get_le<float>(payload + i * sizeof(float));
  validate(seq);
  return seq;
}

inline void save_features(const FrameFeatureSequence& seq, const fs::path& path) {
  detail::write_file(path, encode_features(seq));
}

inline FrameFeatureSequence load_features(const fs::path& path, std::string clip_id = {}) {
  return decode_features(detail::read_file(path), std::move(clip_id));
}

// ---------------------------------------------------------------------------
// Manifest and boundary annotations

struct ManifestEntry {
  std::string clip_id;
  fs::path music;
  fs::path video;
  std::map<std::string, fs::path> boundaries;  // segmenter name -> annotation file
};

struct ClipManifest {
  std::vector<ManifestEntry> entries;
};

/// Relative paths are written relative to the manifest's directory.
inline void save_manifest(const ClipManifest& manifest, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
  json doc = json::array();
  for (const auto& e : manifest.entries) {
    json b = json::object();
    for (const auto& [name, p] : e.boundaries) b[name] = rel(p);
    doc.push_back({{"clip_id", e.clip_id}, {"music", rel(e.music)}, {"video", rel(e.video)}, {"boundaries", b}});
  }
  detail::write_json(path, doc);
}

inline ClipManifest load_manifest(const fs::path& path) {
  const json doc = detail::read_json(path);
  require(doc.is_array(), ErrorCode::invariant, "manifest '" + path.string() + "' must be a JSON array");
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp : (base / fp).lexically_normal();
  };
  ClipManifest manifest;
  std::set<std::string> seen;
  for (const auto& item : doc) {
    require(item.is_object() && item.contains("clip_id") && item.contains("music") && item.contains("video"),
            ErrorCode::invariant, "manifest entry missing clip_id/music/video");
    ManifestEntry e;
    e.clip_id = item.at("clip_id").get<std::string>();
    require(seen.insert(e.clip_id).second, ErrorCode::invariant, "duplicate clip_id '" + e.clip_id + "'");
    e.music = resolve(item.at("music").get<std::string>());
    e.video = resolve(item.at("video").get<std::string>());
    if (item.contains("boundaries")) {
      for (const auto& [name, p] : item.at("boundaries").items()) e.boundaries[name] = resolve(p.get<std::string>());
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

struct LoadedClip {
  FrameFeatureSequence music;
  FrameFeatureSequence video;
};

inline LoadedClip load_clip(const ManifestEntry& entry) {
  LoadedClip clip{load_features(entry.music, entry.clip_id), load_features(entry.video, entry.clip_id)};
  require(clip.music.modality == Modality::music, ErrorCode::invariant,
          "clip '" + entry.clip_id + "': music file has video modality");
  require(clip.video.modality == Modality::video, ErrorCode::invariant,
          "clip '" + entry.clip_id + "': video file has music modality");
  return clip;
}

/// Checks every manifest invariant; returns one message per problem found.
inline std::vector<std::string> validate_manifest(const ClipManifest& manifest) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.clip_id).second) problems.push_back(e.clip_id + ": duplicate clip_id");
    try {
      const LoadedClip clip = load_clip(e);
      const auto a = static_cast<long>(clip.music.num_frames());
      const auto b = static_cast<long>(clip.video.num_frames());
      if (std::abs(a - b) > 1)
        problems.push_back(e.clip_id + ": music/video durations differ by more than one frame (" + std::to_string(a) +
                           " vs " + std::to_string(b) + ")");
    } catch (const Error& err) {
      problems.push_back(e.clip_id + ": " + err.what());
    }
    for (const auto& [name, p] : e.boundaries)
      if (!fs::exists(p)) problems.push_back(e.clip_id + ": missing boundary annotation '" + name + "'");
  }
  return problems;
}

struct BoundaryAnnotation {
  std::string clip_id;
  std::string segmenter;
  std::vector<double> boundaries_s;
};

inline void save_annotation(const BoundaryAnnotation& a, const fs::path& path) {
  detail::write_json(path, {{"clip_id", a.clip_id}, {"segmenter", a.segmenter}, {"boundaries_s", a.boundaries_s}});
}

inline BoundaryAnnotation load_annotation(const fs::path& path) {
  const json doc = detail::read_json(path);
  require(doc.is_object() && doc.contains("clip_id") && doc.contains("boundaries_s"), ErrorCode::invariant,
          "annotation '" + path.string() + "' missing clip_id/boundaries_s");
  BoundaryAnnotation a;
  a.clip_id = doc.at("clip_id").get<std::string>();
  a.segmenter = doc.value("segmenter", std::string{});
  a.boundaries_s = doc.at("boundaries_s").get<std::vector<double>>();
  return a;
}

// ---------------------------------------------------------------------------
// Synthetic paired-clip generator
//
// Each segment carries a latent vector z; music frames are A_m z + noise and
// video frames A_v z + independent noise, with both modalities cut at the
// same frames. With codebook_size > 0 latents are drawn from a shared pool of
// segment "types" (plus jitter), so different clips reuse the same content in
// different orders and averaging over a clip discards the ordering.

struct SyntheticSpec {
  std::size_t num_clips = 100;
  std::size_t segments_min = 3;
  std::size_t segments_max = 8;
  double segment_duration_min_s = 5.0;
  double segment_duration_max_s = 20.0;
  std::size_t audio_dim = 128;
  std::size_t video_dim = 1024;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  std::size_t latent_dim = 16;
  std::size_t codebook_size = 0;  // 0: fresh latent per segment
  double latent_jitter = 0.0;
  bool identity_maps = false;  // A_m = A_v = I; needs audio_dim == video_dim == latent_dim
};

inline void validate(const SyntheticSpec& s) {
  require(s.num_clips >= 1, ErrorCode::invalid_argument, "num_clips must be >= 1");
  require(s.segments_min >= 1 && s.segments_min <= s.segments_max, ErrorCode::invalid_argument,
          "segments range must be nonempty and >= 1");
  require(s.segment_duration_min_s > 0 && s.segment_duration_min_s <= s.segment_duration_max_s,
          ErrorCode::invalid_argument, "segment duration range must be nonempty and positive");
  require(std::lround(s.segment_duration_min_s) >= 1, ErrorCode::invalid_argument,
          "segments must last at least one frame");
  require(s.audio_dim >= 1 && s.video_dim >= 1 && s.latent_dim >= 1, ErrorCode::invalid_argument,
          "dims must be >= 1");
  require(s.noise_std >= 0 && s.latent_jitter >= 0, ErrorCode::invalid_argument, "noise must be >= 0");
  require(!s.identity_maps || (s.audio_dim == s.latent_dim && s.video_dim == s.latent_dim),
          ErrorCode::invalid_argument, "identity maps need audio_dim == video_dim == latent_dim");
}

inline json to_json(const SyntheticSpec& s) {
  return {{"num_clips", s.num_clips},
          {"segments_min", s.segments_min},
          {"segments_max", s.segments_max},
          {"segment_duration_min_s", s.segment_duration_min_s},
          {"segment_duration_max_s", s.segment_duration_max_s},
          {"audio_dim", s.audio_dim},
          {"video_dim", s.video_dim},
          {"noise_std", s.noise_std},
          {"seed", s.seed},
          {"latent_dim", s.latent_dim},
          {"codebook_size", s.codebook_size},
          {"latent_jitter", s.latent_jitter},
          {"identity_maps", s.identity_maps}};
}

struct SyntheticClip {
  std::string clip_id;
  FrameFeatureSequence music;
  FrameFeatureSequence video;
  std::vector<std::size_t> cut_frames;  // ground-truth boundaries
};

struct SyntheticCatalog {
  SyntheticSpec spec;
  std::vector<SyntheticClip> clips;
};

inline std::string synthetic_clip_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05zu", index);
  return buf;
}

inline SyntheticCatalog generate_synthetic_catalog(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto random_map = [&](std::size_t rows) {
    Matrix a(rows, spec.latent_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = gauss(rng) * scale;
    return a;
  };
  const Matrix map_music = spec.identity_maps ? Matrix::Identity(spec.audio_dim, spec.latent_dim) : random_map(spec.audio_dim);
  const Matrix map_video = spec.identity_maps ? Matrix::Identity(spec.video_dim, spec.latent_dim) : random_map(spec.video_dim);

  Matrix codebook(spec.codebook_size, spec.latent_dim);
  for (Eigen::Index i = 0; i < codebook.size(); ++i) codebook.data()[i] = gauss(rng);

  std::uniform_int_distribution<std::size_t> seg_count(spec.segments_min, spec.segments_max);
  std::uniform_int_distribution<long> seg_frames(std::lround(spec.segment_duration_min_s),
                                                 std::lround(spec.segment_duration_max_s));
  std::uniform_int_distribution<std::size_t> pick_code(0, spec.codebook_size > 0 ? spec.codebook_size - 1 : 0);

  SyntheticCatalog catalog{spec, {}};
  catalog.clips.reserve(spec.num_clips);
  for (std::size_t c = 0; c < spec.num_clips; ++c) {
    const std::size_t k = seg_count(rng);
    std::vector<long> lengths(k);
    for (auto& len : lengths) len = seg_frames(rng);
    long total = 0;
    for (long len : lengths) total += len;

    SyntheticClip clip;
    clip.clip_id = synthetic_clip_id(c);
    clip.music = {clip.clip_id, Modality::music, 1.0f, FeatureMatrix(total, spec.audio_dim)};
    clip.video = {clip.clip_id, Modality::video, 1.0f, FeatureMatrix(total, spec.video_dim)};

    long frame = 0;
    std::size_t previous_code = spec.codebook_size;
    for (std::size_t s = 0; s < k; ++s) {
      Vector z(spec.latent_dim);
      if (spec.codebook_size > 0) {
        // neighbouring segments never share an entry; they would be one segment
        std::size_t code = pick_code(rng);
        while (spec.codebook_size > 1 && code == previous_code) code = pick_code(rng);
        previous_code = code;
        z = codebook.row(static_cast<Eigen::Index>(code)).transpose();
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += spec.latent_jitter * gauss(rng);
      } else {
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
      }
      const Vector mu_m = map_music * z;
      const Vector mu_v = map_video * z;
      for (long t = 0; t < lengths[s]; ++t, ++frame) {
        for (std::size_t d = 0; d < spec.audio_dim; ++d)
          clip.music.frames(frame, d) = static_cast<float>(mu_m[d] + spec.noise_std * gauss(rng));
        for (std::size_t d = 0; d < spec.video_dim; ++d)
          clip.video.frames(frame, d) = static_cast<float>(mu_v[d] + spec.noise_std * gauss(rng));
      }
      if (s + 1 < k) clip.cut_frames.push_back(static_cast<std::size_t>(frame));
    }
    catalog.clips.push_back(std::move(clip));
  }
  return catalog;
}

inline constexpr const char* kTruthSegmenter = "truth";

/// Writes FVEC files, ground-truth annotations (segmenter "truth") and a
/// manifest under `dir`; returns the manifest.
inline ClipManifest write_synthetic_catalog(const SyntheticCatalog& catalog, const fs::path& dir) {
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "boundaries" / kTruthSegmenter);
  ClipManifest manifest;
  for (const auto& clip : catalog.clips) {
    ManifestEntry e;
    e.clip_id = clip.clip_id;
    e.music = dir / "features" / (clip.clip_id + ".music.fvec");
    e.video = dir / "features" / (clip.clip_id + ".video.fvec");
    save_features(clip.music, e.music);
    save_features(clip.video, e.video);
    BoundaryAnnotation truth{clip.clip_id, kTruthSegmenter, {}};
    for (auto f : clip.cut_frames) truth.boundaries_s.push_back(static_cast<double>(f) / clip.music.frame_rate_hz);
    e.boundaries[kTruthSegmenter] = dir / "boundaries" / kTruthSegmenter / (clip.clip_id + ".json");
    save_annotation(truth, e.boundaries[kTruthSegmenter]);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace segvm
