#include "segvm/trainer.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"

#include <random>
#include <set>

namespace segvm {
namespace {

NetworkSpec small_spec(std::size_t music_dim = 6, std::size_t video_dim = 7) {
  NetworkSpec s;
  s.music = {music_dim, {16, 8}};
  s.video = {video_dim, {8}};
  return s;
}

/// Paired segment inputs: video is a fixed linear map of music plus noise,
/// so there is a cross-modal relation to learn.
std::vector<SegmentedClip> paired_catalog(std::size_t clips, std::uint64_t seed, std::size_t music_dim = 6,
                                          std::size_t video_dim = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix map(static_cast<Eigen::Index>(music_dim), static_cast<Eigen::Index>(video_dim));
  for (Eigen::Index i = 0; i < map.size(); ++i) map.data()[i] = g(rng);
  std::uniform_int_distribution<int> segs(1, 4);
  std::vector<SegmentedClip> out;
  for (std::size_t c = 0; c < clips; ++c) {
    SegmentedClip clip;
    clip.clip_id = "clip_" + std::to_string(c);
    const int k = segs(rng);
    clip.music_inputs.resize(k, static_cast<Eigen::Index>(music_dim));
    for (Eigen::Index i = 0; i < clip.music_inputs.size(); ++i) clip.music_inputs.data()[i] = g(rng);
    clip.video_inputs = clip.music_inputs * map;
    for (Eigen::Index i = 0; i < clip.video_inputs.size(); ++i) clip.video_inputs.data()[i] += 0.1 * g(rng);
    out.push_back(std::move(clip));
  }
  return out;
}

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

TEST(Mining, BatchOfThreeHasSixTripletsPerDirection) {
  const auto catalog = paired_catalog(5, 1);
  std::mt19937_64 rng(0);
  const auto batch = mine_batch(catalog, 3, rng);
  EXPECT_EQ(batch.size(), 3u);
  EXPECT_EQ(batch.triplet_count(), 6u);
  EXPECT_EQ(batch.music.rows(), 3);
}

TEST(Mining, ClipsAreDistinctAndSegmentsValid) {
  const auto catalog = paired_catalog(40, 2);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = mine_batch(catalog, 25, rng);
    EXPECT_EQ(std::set<std::size_t>(batch.clip_indices.begin(), batch.clip_indices.end()).size(), 25u);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& clip = catalog[batch.clip_indices[s]];
      ASSERT_LT(batch.segment_indices[s], clip.num_segments());
      EXPECT_TRUE(batch.music.row(static_cast<Eigen::Index>(s)) ==
                  clip.music_inputs.row(static_cast<Eigen::Index>(batch.segment_indices[s])));
      EXPECT_TRUE(batch.video.row(static_cast<Eigen::Index>(s)) ==
                  clip.video_inputs.row(static_cast<Eigen::Index>(batch.segment_indices[s])));
    }
  }
}

TEST(Mining, RejectsTooSmallBatchOrCatalog) {
  const auto catalog = paired_catalog(5, 3);
  std::mt19937_64 rng(0);
  EXPECT_THROW(mine_batch(catalog, 1, rng), Error);
  EXPECT_THROW(mine_batch(catalog, 6, rng), Error);
}

TEST(Mining, SameClipNegativesAddExtraRows) {
  const auto catalog = paired_catalog(6, 4);
  std::mt19937_64 rng(5);
  const auto batch = mine_batch(catalog, 4, rng, true);
  std::size_t extras = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) extras += catalog[batch.clip_indices[s]].num_segments() - 1;
  EXPECT_EQ(batch.extra_owner.size(), extras);
  EXPECT_EQ(batch.triplet_count(), 12u + extras);
  EXPECT_EQ(static_cast<std::size_t>(batch.music.rows()), 4u + extras);
}

// ---------------------------------------------------------------------------

TEST(TripletLoss, WorkedExamples) {
  EXPECT_DOUBLE_EQ(triplet_loss(row({1, 0}), row({1, 0}), row({0, 1}), 0.1), 0.0);
  EXPECT_NEAR(triplet_loss(row({1, 0}), row({0, 1}), row({1, 0}), 0.1), 2.1, 1e-12);
  EXPECT_NEAR(triplet_loss(row({0.6, 0.8}), row({0, 1}), row({0, 1}), 0.1), 0.1, 1e-12);
}

TEST(TripletLoss, SymmetricBatchGivesEqualDirections) {
  std::mt19937_64 rng(6);
  const Matrix e = oracle::random_unit_rows(6, 5, rng);
  TrainConfig config;
  const auto l = embedding_loss(e, e, 6, {}, config, false);
  EXPECT_NEAR(l.loss_vm, l.loss_mv, 1e-15);
}

TEST(TripletLoss, CollapsedEmbeddingsWithZeroMarginGiveZero) {
  Matrix e = Matrix::Zero(4, 3);
  e.col(0).setOnes();
  TrainConfig config;
  config.margin = 0.0;
  EXPECT_EQ(embedding_loss(e, e, 4, {}, config, false).loss, 0.0);
}

TEST(TripletLoss, MatchesNaiveEnumeration) {
  std::mt19937_64 rng(7);
  TrainConfig config;
  for (std::size_t b = 2; b <= 8; ++b) {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix m = oracle::random_unit_rows(b, 4, rng);
      const Matrix v = oracle::random_unit_rows(b, 4, rng);
      config.margin = 0.05 * (trial % 5 + 1);
      config.lambda_vm = 1.0 + 0.25 * (trial % 3);
      const double expected = oracle::naive_bidirectional_loss(m, v, config.margin, config.lambda_vm, config.lambda_mv);
      EXPECT_NEAR(embedding_loss(m, v, b, {}, config, false).loss, expected, 1e-10) << "b=" << b;
    }
  }
}

TEST(TripletLoss, EmbeddingGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  TrainConfig config;
  config.margin = 0.5;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix m = oracle::random_unit_rows(6, 3, rng);
    Matrix v = oracle::random_unit_rows(6, 3, rng);
    const std::vector<std::size_t> owner{0, 2};  // rows 4 and 5 are same-clip negatives
    const auto l = embedding_loss(m, v, 4, owner, config, true);
    auto f = [&] { return embedding_loss(m, v, 4, owner, config, false).loss; };
    EXPECT_LT(oracle::max_relative_error(l.grad_music, oracle::central_difference(m, f, 1e-6)), 1e-5);
    EXPECT_LT(oracle::max_relative_error(l.grad_video, oracle::central_difference(v, f, 1e-6)), 1e-5);
  }
}

TEST(TripletLoss, ParameterGradientsMatchFiniteDifferences) {
  const auto catalog = paired_catalog(8, 9);
  TrainConfig config;
  config.margin = 1.0;  // keep most hinges active and away from the kink
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    const auto batch = mine_batch(catalog, 5, rng, seed == 2);
    auto params = init_params(small_spec(), seed);
    TwoBranchParams scratch = params;
    const auto analytic = batch_loss(batch, scratch, config, seed);
    auto f = [&] {
      TwoBranchParams copy = params;
      return batch_loss(batch, copy, config, seed).loss;
    };
    std::vector<Matrix*> tensors;
    for_each_trainable(params.music, [&](Matrix& m) { tensors.push_back(&m); });
    for_each_trainable(params.video, [&](Matrix& m) { tensors.push_back(&m); });
    std::vector<const Matrix*> grads;
    for_each_trainable(analytic.grads.music, [&](const Matrix& m) { grads.push_back(&m); });
    for_each_trainable(analytic.grads.video, [&](const Matrix& m) { grads.push_back(&m); });
    ASSERT_EQ(tensors.size(), grads.size());
    for (std::size_t t = 0; t < tensors.size(); ++t)
      EXPECT_LT(oracle::max_relative_error(*grads[t], oracle::central_difference(*tensors[t], f, 1e-5)), 1e-4)
          << "tensor " << t << " seed " << seed;
  }
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = init_params(small_spec(), 1);
  const auto before = params;
  AdamOptimizer adam(params, 1e-3);
  TwoBranchGrads zero{zero_grads_like(params.music), zero_grads_like(params.video)};
  for (int i = 0; i < 3; ++i) adam.step(params, zero);
  EXPECT_TRUE(params.music.weights[0] == before.music.weights[0]);
  EXPECT_TRUE(params.video.gamma == before.video.gamma);
}

TEST(Adam, FirstStepMovesEachEntryByLearningRate) {
  auto params = init_params(small_spec(), 1);
  const auto before = params;
  AdamOptimizer adam(params, 1e-3);
  TwoBranchGrads grads{zero_grads_like(params.music), zero_grads_like(params.video)};
  grads.music.weights[0].setConstant(-2.0);
  adam.step(params, grads);
  const Matrix delta = params.music.weights[0] - before.music.weights[0];
  EXPECT_NEAR(delta.minCoeff(), 1e-3, 1e-9);
  EXPECT_NEAR(delta.maxCoeff(), 1e-3, 1e-9);
}

// ---------------------------------------------------------------------------

TrainConfig small_run() {
  TrainConfig c;
  c.batch_size = 16;
  c.learning_rate = 1e-3;
  c.dropout = 0.0;
  c.max_epochs = 30;
  c.seed = 11;
  return c;
}

TEST(Training, LowersValidationLoss) {
  const auto train_set = paired_catalog(64, 20);
  const std::vector<SegmentedClip> val_set(train_set.begin(), train_set.begin() + 32);
  const auto result = train(small_run(), init_params(small_spec(), 3), train_set, val_set);
  ASSERT_GE(result.log.size(), 2u);
  EXPECT_TRUE(std::isnan(result.log[0].train_loss));
  EXPECT_LT(result.best_val_loss, 0.5 * result.log[0].val_loss);
  EXPECT_DOUBLE_EQ(result.best_val_loss, validation_loss(val_set, result.best_params, small_run()));
}

TEST(Training, SameSeedReproducesTheLog) {
  const auto data = paired_catalog(40, 21);
  const std::vector<SegmentedClip> val(data.begin() + 30, data.end());
  const std::vector<SegmentedClip> tr(data.begin(), data.begin() + 30);
  auto config = small_run();
  config.max_epochs = 4;
  config.dropout = 0.5;
  const auto a = train(config, init_params(small_spec(), 4), tr, val);
  const auto b = train(config, init_params(small_spec(), 4), tr, val);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
    if (i > 0) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
  }
  EXPECT_EQ(encode_checkpoint({a.best_params, "x"}), encode_checkpoint({b.best_params, "x"}));
}

TEST(Training, EarlyStoppingRespectsPatience) {
  const auto data = paired_catalog(20, 22);
  auto config = small_run();
  config.min_delta = 10.0;  // no epoch can improve by this much
  config.patience = 3;
  config.max_epochs = 50;
  const auto result = train(config, init_params(small_spec(), 5), data, data);
  EXPECT_EQ(result.log.size(), 1u + 3u);
  EXPECT_EQ(result.best_epoch, 0u);
}

TEST(Training, SameClipNegativesRun) {
  const auto data = paired_catalog(30, 23);
  auto config = small_run();
  config.same_clip_negatives = true;
  config.max_epochs = 3;
  const auto result = train(config, init_params(small_spec(), 6), data, data);
  EXPECT_EQ(result.log.size(), 4u);
  for (const auto& r : result.log) EXPECT_TRUE(std::isfinite(r.val_loss));
}

TEST(Training, OneStepChangesTheCheckpoint) {
  const auto data = paired_catalog(10, 24);
  auto config = small_run();
  config.max_epochs = 1;
  config.patience = 100;
  config.min_delta = -1.0;  // accept any epoch as best
  const auto initial = init_params(small_spec(), 7);
  const auto result = train(config, initial, data, data);
  EXPECT_EQ(result.best_epoch, 1u);
  EXPECT_NE(encode_checkpoint({result.best_params, "x"}), encode_checkpoint({initial, "x"}));
}

TEST(TrainConfigJson, RoundTripAndUnknownKeys) {
  TrainConfig c;
  c.batch_size = 7;
  c.margin = 0.3;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.batch_size, 7u);
  EXPECT_EQ(back.margin, 0.3);
  EXPECT_THROW(train_config_from_json(json{{"bogus", 1}}), Error);
}

}  // namespace
}  // namespace segvm
