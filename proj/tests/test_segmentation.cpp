#include "segvm/segmentation.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include <random>

namespace segvm {
namespace {

using testing::TempDir;

/// Concatenated blocks; block i repeats unit vector e_i for lengths[i] frames.
FrameFeatureSequence block_signal(const std::vector<std::size_t>& lengths, std::size_t dim) {
  std::size_t total = 0;
  for (auto l : lengths) total += l;
  FrameFeatureSequence seq{"blocks", Modality::music, 1.0f, FeatureMatrix::Zero(total, dim)};
  std::size_t t = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t i = 0; i < lengths[b]; ++i, ++t) seq.frames(t, b % dim) = 1.0f;
  return seq;
}

TEST(Foote, TwoOrthogonalBlocksGiveOneCut) {
  const auto b = segment_foote(block_signal({10, 10}, 4));
  ASSERT_EQ(b.cut_frames.size(), 1u);
  EXPECT_NEAR(static_cast<double>(b.cut_frames[0]), 10.0, 2.0);
  EXPECT_FALSE(b.warning);
  validate(b, 2);
}

TEST(Foote, ThreeBlocks) {
  const auto b = segment_foote(block_signal({15, 15, 15}, 4));
  ASSERT_EQ(b.cut_frames.size(), 2u);
  EXPECT_NEAR(static_cast<double>(b.cut_frames[0]), 15.0, 2.0);
  EXPECT_NEAR(static_cast<double>(b.cut_frames[1]), 30.0, 2.0);
}

TEST(Foote, ConstantSequenceHasNoCuts) {
  FrameFeatureSequence seq{"c", Modality::music, 1.0f, FeatureMatrix::Constant(60, 8, 0.3f)};
  EXPECT_TRUE(segment_foote(seq).cut_frames.empty());
  seq.frames.setZero();
  EXPECT_TRUE(segment_foote(seq).cut_frames.empty());
}

TEST(Foote, ShortSequenceFallsBackToWholeClip) {
  const auto b = segment_foote(block_signal({5, 5}, 2));  // 10 < 2 * 8
  EXPECT_TRUE(b.cut_frames.empty());
  EXPECT_TRUE(b.warning);
}

TEST(Foote, NoveltyIsNormalized) {
  const auto seq = block_signal({12, 12}, 3);
  const auto novelty = foote_novelty(cosine_ssm(seq), 8, 3.2);
  EXPECT_NEAR(novelty[12], 1.0, 1e-12);
  EXPECT_NEAR(novelty[4], 0.0, 1e-12);
}

TEST(Foote, InvariantToOrthogonalRotation) {
  std::mt19937_64 rng(3);
  SyntheticSpec spec;
  spec.num_clips = 5;
  spec.audio_dim = 12;
  spec.video_dim = 12;
  spec.latent_dim = 6;
  spec.noise_std = 0.2;
  spec.seed = 11;
  const auto catalog = generate_synthetic_catalog(spec);
  const Matrix q = Eigen::HouseholderQR<Matrix>(oracle::random_unit_rows(12, 12, rng)).householderQ();
  for (const auto& clip : catalog.clips) {
    FrameFeatureSequence rotated = clip.music;
    rotated.frames = (clip.music.frames.cast<double>() * q).cast<float>();
    EXPECT_EQ(segment_foote(clip.music).cut_frames, segment_foote(rotated).cut_frames);
  }
}

TEST(Foote, RecoversNoiselessSyntheticBoundaries) {
  SyntheticSpec spec;
  spec.num_clips = 50;
  spec.audio_dim = 16;
  spec.video_dim = 16;
  spec.latent_dim = 16;
  spec.noise_std = 0.0;
  spec.seed = 5;
  std::size_t truth = 0, found = 0;
  for (const auto& clip : generate_synthetic_catalog(spec).clips) {
    const auto b = segment_foote(clip.music);
    for (auto cut : clip.cut_frames) {
      ++truth;
      found += std::any_of(b.cut_frames.begin(), b.cut_frames.end(),
                           [&](std::size_t c) { return (c > cut ? c - cut : cut - c) <= 2; });
    }
  }
  EXPECT_GE(static_cast<double>(found) / static_cast<double>(truth), 0.9);
}

// ---------------------------------------------------------------------------

TEST(FixedSegmenter, Examples) {
  FrameFeatureSequence s10{"c", Modality::music, 1.0f, FeatureMatrix::Ones(10, 2)};
  EXPECT_EQ(segment_fixed(s10, 5).cut_frames, (std::vector<std::size_t>{5}));
  FrameFeatureSequence s11{"c", Modality::music, 1.0f, FeatureMatrix::Ones(11, 2)};
  const auto b11 = segment_fixed(s11, 5, 2);
  EXPECT_EQ(b11.cut_frames, (std::vector<std::size_t>{5}));
  EXPECT_EQ(b11.segments().back(), (std::pair<std::size_t, std::size_t>{5, 11}));
  FrameFeatureSequence s4{"c", Modality::music, 1.0f, FeatureMatrix::Ones(4, 2)};
  EXPECT_TRUE(segment_fixed(s4, 5).cut_frames.empty());
  EXPECT_THROW(segment_fixed(s10, 1, 2), Error);
}

TEST(WholeClip, SingleSegmentMeanIsClipMean) {
  std::mt19937_64 rng(1);
  FrameFeatureSequence m{"c", Modality::music, 1.0f, oracle::random_unit_rows(17, 5, rng).cast<float>()};
  FrameFeatureSequence v{"c", Modality::video, 1.0f, oracle::random_unit_rows(17, 9, rng).cast<float>()};
  const auto b = whole_clip(m);
  EXPECT_EQ(b.num_segments(), 1u);
  const auto seg = aggregate(m, v, b);
  const auto expect = oracle::row_mean(v.frames.cast<double>(), 0, 17);
  for (std::size_t d = 0; d < expect.size(); ++d) EXPECT_NEAR(seg.video_inputs(0, d), expect[d], 1e-12);
}

// ---------------------------------------------------------------------------

TEST(ImportBoundaries, Examples) {
  TempDir dir;
  FrameFeatureSequence seq{"clip", Modality::music, 1.0f, FeatureMatrix::Ones(60, 2)};
  save_annotation({"clip", "olda", {20.0, 40.0}}, dir.path() / "a.json");
  const auto b = import_boundaries(dir.path() / "a.json", seq);
  EXPECT_EQ(b.cut_frames, (std::vector<std::size_t>{20, 40}));
  EXPECT_EQ(b.segmenter, "olda");

  save_annotation({"clip", "olda", {20.4, 20.6}}, dir.path() / "b.json");
  EXPECT_EQ(import_boundaries(dir.path() / "b.json", seq, 2).cut_frames, (std::vector<std::size_t>{20}));

  save_annotation({"clip", "olda", {70.0}}, dir.path() / "c.json");
  EXPECT_THROW(import_boundaries(dir.path() / "c.json", seq), Error);

  save_annotation({"other", "olda", {10.0}}, dir.path() / "d.json");
  EXPECT_THROW(import_boundaries(dir.path() / "d.json", seq), Error);

  save_annotation({"clip", "olda", {30.0, 10.0}}, dir.path() / "e.json");
  EXPECT_THROW(import_boundaries(dir.path() / "e.json", seq), Error);
}

TEST(ImportBoundaries, RoundsHalfDown) {
  EXPECT_EQ(seconds_to_frame(20.5, 1.0), 20u);
  EXPECT_EQ(seconds_to_frame(20.51, 1.0), 21u);
  EXPECT_EQ(seconds_to_frame(20.49, 1.0), 20u);
  EXPECT_EQ(seconds_to_frame(2.25, 2.0), 4u);
}

TEST(ImportBoundaries, DropsCutsTooCloseToClipEnds) {
  FrameFeatureSequence seq{"clip", Modality::music, 1.0f, FeatureMatrix::Ones(30, 2)};
  const auto b = boundaries_from_annotation({"clip", "x", {0.0, 1.0, 10.0, 29.0}}, seq, 2);
  EXPECT_EQ(b.cut_frames, (std::vector<std::size_t>{10}));
}

// ---------------------------------------------------------------------------

TEST(Aggregate, TwoFrameMean) {
  FrameFeatureSequence m{"c", Modality::music, 1.0f, FeatureMatrix(2, 2)};
  m.frames << 0, 0, 2, 2;
  FrameFeatureSequence v = m;
  v.modality = Modality::video;
  const auto seg = aggregate(m, v, whole_clip(m));
  EXPECT_DOUBLE_EQ(seg.music_inputs(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(seg.music_inputs(0, 1), 1.0);
}

TEST(Aggregate, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    std::normal_distribution<float> g;
    FrameFeatureSequence m{"c", Modality::music, 1.0f, FeatureMatrix(100, 128)};
    FrameFeatureSequence v{"c", Modality::video, 1.0f, FeatureMatrix(100, 32)};
    for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < v.frames.size(); ++i) v.frames.data()[i] = g(rng);
    std::vector<std::size_t> cuts;
    std::uniform_int_distribution<std::size_t> pick(1, 99);
    for (int c = 0; c < 6; ++c) cuts.push_back(pick(rng));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    const Boundaries b{"c", SegmenterKind::external, "rand", 100, cuts, false};
    const auto seg = aggregate(m, v, b);
    ASSERT_EQ(seg.num_segments(), cuts.size() + 1);

    // segments partition the clip
    std::size_t covered = 0, expected_begin = 0;
    const auto segs = b.segments();
    for (auto [begin, end] : segs) {
      EXPECT_EQ(begin, expected_begin);
      covered += end - begin;
      expected_begin = end;
    }
    EXPECT_EQ(covered, 100u);

    const Matrix md = m.frames.cast<double>();
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const auto mean = oracle::row_mean(md, segs[k].first, segs[k].second);
      for (std::size_t d = 0; d < mean.size(); ++d)
        EXPECT_NEAR(seg.music_inputs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)), mean[d], 1e-12);
    }
  }
}

TEST(Aggregate, ToleratesOneFrameLengthDifference) {
  FrameFeatureSequence m{"c", Modality::music, 1.0f, FeatureMatrix::Ones(20, 2)};
  FrameFeatureSequence v{"c", Modality::video, 1.0f, FeatureMatrix::Ones(21, 3)};
  const auto seg = aggregate(m, v, segment_fixed(m, 10));
  EXPECT_EQ(seg.boundaries.num_frames, 20u);
  EXPECT_EQ(seg.num_segments(), 2u);
  FrameFeatureSequence v2{"c", Modality::video, 1.0f, FeatureMatrix::Ones(23, 3)};
  EXPECT_THROW(aggregate(m, v2, segment_fixed(m, 10)), Error);
}

TEST(Aggregate, RejectsBoundaryOutsideSequences) {
  FrameFeatureSequence m{"c", Modality::music, 1.0f, FeatureMatrix::Ones(20, 2)};
  FrameFeatureSequence v{"c", Modality::video, 1.0f, FeatureMatrix::Ones(20, 3)};
  const Boundaries b{"c", SegmenterKind::external, "x", 30, {25}, false};
  EXPECT_THROW(aggregate(m, v, b), Error);
}

TEST(SegmenterConfig, ParsesNames) {
  EXPECT_EQ(parse_segmenter("foote").kind, SegmenterKind::foote);
  EXPECT_EQ(parse_segmenter("whole_clip").name(), "whole_clip");
  const auto ext = parse_segmenter("external:olda");
  EXPECT_EQ(ext.kind, SegmenterKind::external);
  EXPECT_EQ(ext.name(), "olda");
  EXPECT_THROW(parse_segmenter("sf"), Error);
}

TEST(SegmenterConfig, ExternalWithoutAnnotationFails) {
  FrameFeatureSequence m{"c", Modality::music, 1.0f, FeatureMatrix::Ones(20, 2)};
  FrameFeatureSequence v{"c", Modality::video, 1.0f, FeatureMatrix::Ones(20, 3)};
  ManifestEntry entry{"c", "m", "v", {}};
  EXPECT_THROW(segment_clip(parse_segmenter("external:olda"), m, v, &entry), Error);
}

}  // namespace
}  // namespace segvm
