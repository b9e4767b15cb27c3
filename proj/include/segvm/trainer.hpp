#pragma once

// Segment-level training with the bidirectional triplet loss.

#include "segvm/common.hpp"
#include "segvm/embed_net.hpp"
#include "segvm/segmentation.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace segvm {

struct TrainConfig {
  std::size_t batch_size = 1000;
  double margin = 0.1;
  double lambda_vm = 1.0;  // video anchor, music positive/negatives
  double lambda_mv = 1.0;  // music anchor, video positive/negatives
  double learning_rate = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double dropout = 0.5;
  std::size_t patience = 10;
  double min_delta = 1e-5;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;
  bool same_clip_negatives = false;
};

inline void validate(const TrainConfig& c) {
  require(c.batch_size >= 2, ErrorCode::invalid_argument, "batch size must be >= 2");
  require(c.margin > 0, ErrorCode::invalid_argument, "margin must be > 0");
  require(c.learning_rate > 0, ErrorCode::invalid_argument, "learning rate must be > 0");
  require(c.lambda_vm >= 0 && c.lambda_mv >= 0, ErrorCode::invalid_argument, "loss weights must be >= 0");
}

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},     {"margin", c.margin},
          {"lambda_vm", c.lambda_vm},       {"lambda_mv", c.lambda_mv},
          {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},     {"adam_epsilon", c.adam_epsilon},
          {"dropout", c.dropout},           {"patience", c.patience},
          {"min_delta", c.min_delta},       {"max_epochs", c.max_epochs},
          {"seed", c.seed},                 {"same_clip_negatives", c.same_clip_negatives}};
}

/// Overrides fields present in `j`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "margin") c.margin = value.get<double>();
    else if (key == "lambda_vm") c.lambda_vm = value.get<double>();
    else if (key == "lambda_mv") c.lambda_mv = value.get<double>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
    else if (key == "adam_epsilon") c.adam_epsilon = value.get<double>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "patience") c.patience = value.get<std::size_t>();
    else if (key == "min_delta") c.min_delta = value.get<double>();
    else if (key == "max_epochs") c.max_epochs = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "same_clip_negatives") c.same_clip_negatives = value.get<bool>();
    else fail(ErrorCode::invalid_argument, "unknown training option '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Batch mining

/// b anchor/positive pairs, one segment from each of b distinct clips. Rows
/// [0, b) of `music`/`video` are the pairs; rows past b are optional
/// same-clip negatives, each owned by the pair index in `extra_owner`.
struct TripletBatch {
  std::vector<std::size_t> clip_indices;
  std::vector<std::size_t> segment_indices;
  Matrix music;
  Matrix video;
  std::vector<std::size_t> extra_owner;

  std::size_t size() const { return clip_indices.size(); }
  /// Triplets per loss direction.
  std::size_t triplet_count() const { return size() * (size() - 1) + extra_owner.size(); }
};

inline TripletBatch make_batch(const std::vector<SegmentedClip>& catalog, const std::vector<std::size_t>& clips,
                               std::mt19937_64& rng, bool same_clip_negatives = false) {
  require(clips.size() >= 2, ErrorCode::invalid_argument, "a batch needs at least two clips to provide negatives");
  const auto& first = catalog.at(clips.front());
  TripletBatch batch;
  std::vector<std::pair<std::size_t, std::size_t>> extras;  // (owner slot, segment)
  for (std::size_t slot = 0; slot < clips.size(); ++slot) {
    const auto& clip = catalog.at(clips[slot]);
    require(clip.num_segments() >= 1, ErrorCode::invariant, "clip '" + clip.clip_id + "' has no segments");
    std::uniform_int_distribution<std::size_t> pick(0, clip.num_segments() - 1);
    const std::size_t k = pick(rng);
    batch.clip_indices.push_back(clips[slot]);
    batch.segment_indices.push_back(k);
    if (same_clip_negatives)
      for (std::size_t other = 0; other < clip.num_segments(); ++other)
        if (other != k) extras.emplace_back(slot, other);
  }
  const auto rows = static_cast<Eigen::Index>(clips.size() + extras.size());
  batch.music.resize(rows, first.music_inputs.cols());
  batch.video.resize(rows, first.video_inputs.cols());
  for (std::size_t slot = 0; slot < clips.size(); ++slot) {
    const auto& clip = catalog[clips[slot]];
    const auto k = static_cast<Eigen::Index>(batch.segment_indices[slot]);
    batch.music.row(static_cast<Eigen::Index>(slot)) = clip.music_inputs.row(k);
    batch.video.row(static_cast<Eigen::Index>(slot)) = clip.video_inputs.row(k);
  }
  for (std::size_t e = 0; e < extras.size(); ++e) {
    const auto& clip = catalog[clips[extras[e].first]];
    const auto row = static_cast<Eigen::Index>(clips.size() + e);
    batch.music.row(row) = clip.music_inputs.row(static_cast<Eigen::Index>(extras[e].second));
    batch.video.row(row) = clip.video_inputs.row(static_cast<Eigen::Index>(extras[e].second));
    batch.extra_owner.push_back(extras[e].first);
  }
  return batch;
}

/// Samples b distinct clips and one uniform segment per clip.
inline TripletBatch mine_batch(const std::vector<SegmentedClip>& catalog, std::size_t b, std::mt19937_64& rng,
                               bool same_clip_negatives = false) {
  require(b >= 2, ErrorCode::invalid_argument, "batch size must be >= 2 (no negatives available)");
  require(catalog.size() >= b, ErrorCode::invalid_argument,
          "catalog of " + std::to_string(catalog.size()) + " clips is smaller than batch size " + std::to_string(b));
  std::vector<std::size_t> order(catalog.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(b);
  return make_batch(catalog, order, rng, same_clip_negatives);
}

// ---------------------------------------------------------------------------
// Loss

inline double squared_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  return (a - b).squaredNorm();
}

inline double triplet_loss(const Eigen::Ref<const RowVector>& anchor, const Eigen::Ref<const RowVector>& positive,
                           const Eigen::Ref<const RowVector>& negative, double margin) {
  return std::max(squared_distance(anchor, positive) - squared_distance(anchor, negative) + margin, 0.0);
}

struct DirectionalLoss {
  double loss = 0.0;
  Matrix grad_anchor;     // rows match the anchor embeddings
  Matrix grad_candidate;  // rows match the positive/negative embeddings
};

/// Mean triplet loss with anchors `anchors[0..b)`, positive `candidates[i]`
/// and negatives: every other pair row plus extra rows owned by i.
inline DirectionalLoss directional_triplet_loss(const Matrix& anchors, const Matrix& candidates, std::size_t b,
                                                const std::vector<std::size_t>& extra_owner, double margin,
                                                bool with_grads) {
  const Matrix gram = anchors.topRows(static_cast<Eigen::Index>(b)) * candidates.transpose();
  const Vector anchor_sq = anchors.topRows(static_cast<Eigen::Index>(b)).rowwise().squaredNorm();
  const Vector cand_sq = candidates.rowwise().squaredNorm();
  auto dist = [&](std::size_t i, std::size_t j) {
    return anchor_sq[i] + cand_sq[j] - 2.0 * gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  std::vector<std::vector<std::size_t>> negatives(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) negatives[i].push_back(j);
  for (std::size_t e = 0; e < extra_owner.size(); ++e) negatives[extra_owner[e]].push_back(b + e);
  const double count = static_cast<double>(b * (b - 1) + extra_owner.size());

  DirectionalLoss out;
  // per (anchor, candidate) multiplicity of each squared distance in the loss
  Matrix weight = with_grads ? Matrix::Zero(static_cast<Eigen::Index>(b), candidates.rows()) : Matrix();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = dist(i, i);
    double active = 0.0;
    for (std::size_t j : negatives[i]) {
      const double t = pos - dist(i, j) + margin;
      if (t > 0) {
        total += t;
        if (with_grads) {
          weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -= 1.0;
          active += 1.0;
        }
      }
    }
    if (with_grads) weight(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += active;
  }
  out.loss = total / count;
  if (!with_grads) return out;

  // loss = (1/count) sum_ij w_ij |a_i - c_j|^2, so
  //   dL/da_i = (2/count) sum_j w_ij (a_i - c_j),  dL/dc_j = (2/count) sum_i w_ij (c_j - a_i)
  weight /= count;
  const Vector row_sum = weight.rowwise().sum();
  const Vector col_sum = weight.colwise().sum().transpose();
  const Matrix a = anchors.topRows(static_cast<Eigen::Index>(b));
  out.grad_anchor = Matrix::Zero(anchors.rows(), anchors.cols());
  out.grad_anchor.topRows(static_cast<Eigen::Index>(b)) =
      2.0 * ((a.array().colwise() * row_sum.array()).matrix() - weight * candidates);
  out.grad_candidate = 2.0 * ((candidates.array().colwise() * col_sum.array()).matrix() - weight.transpose() * a);
  return out;
}

/// lambda_vm * L_VM + lambda_mv * L_MV from already computed embeddings.
/// Gradients are w.r.t. the embeddings.
struct EmbeddingLoss {
  double loss = 0.0, loss_vm = 0.0, loss_mv = 0.0;
  Matrix grad_music, grad_video;
};

inline EmbeddingLoss embedding_loss(const Matrix& music_e, const Matrix& video_e, std::size_t b,
                                    const std::vector<std::size_t>& extra_owner, const TrainConfig& config,
                                    bool with_grads) {
  const auto vm = directional_triplet_loss(video_e, music_e, b, extra_owner, config.margin, with_grads);
  const auto mv = directional_triplet_loss(music_e, video_e, b, extra_owner, config.margin, with_grads);
  EmbeddingLoss out;
  out.loss_vm = vm.loss;
  out.loss_mv = mv.loss;
  out.loss = config.lambda_vm * vm.loss + config.lambda_mv * mv.loss;
  if (with_grads) {
    out.grad_video = config.lambda_vm * vm.grad_anchor + config.lambda_mv * mv.grad_candidate;
    out.grad_music = config.lambda_vm * vm.grad_candidate + config.lambda_mv * mv.grad_anchor;
  }
  return out;
}

struct BatchLoss {
  double loss = 0.0;
  double loss_vm = 0.0;
  double loss_mv = 0.0;
  TwoBranchGrads grads;
};

/// Train-mode forward of both branches, loss and parameter gradients.
inline BatchLoss batch_loss(const TripletBatch& batch, TwoBranchParams& params, const TrainConfig& config,
                            std::uint64_t dropout_seed) {
  BranchCache music_cache, video_cache;
  const Matrix music_e = forward_train(params, batch.music, Modality::music, dropout_seed, music_cache);
  const Matrix video_e =
      forward_train(params, batch.video, Modality::video, dropout_seed ^ 0x9e3779b97f4a7c15ULL, video_cache);
  const auto l = embedding_loss(music_e, video_e, batch.size(), batch.extra_owner, config, true);
  BatchLoss out;
  out.loss = l.loss;
  out.loss_vm = l.loss_vm;
  out.loss_mv = l.loss_mv;
  out.grads.music = backward(params.music, music_cache, l.grad_music);
  out.grads.video = backward(params.video, video_cache, l.grad_video);
  return out;
}

/// Loss of a batch with infer-mode embeddings (no dropout, running statistics).
inline double batch_loss_infer(const TripletBatch& batch, const TwoBranchParams& params, const TrainConfig& config) {
  const Matrix music_e = forward_infer(params, batch.music, Modality::music);
  const Matrix video_e = forward_infer(params, batch.video, Modality::video);
  return embedding_loss(music_e, video_e, batch.size(), batch.extra_owner, config, false).loss;
}

// ---------------------------------------------------------------------------
// Optimizer

class AdamOptimizer {
 public:
  AdamOptimizer(const TwoBranchParams& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    auto zeros = [](std::vector<Matrix>& out) { return [&out](const Matrix& m) { out.push_back(Matrix::Zero(m.rows(), m.cols())); }; };
    for_each_trainable(params.music, zeros(first_));
    for_each_trainable(params.video, zeros(first_));
    second_ = first_;
  }

  void step(TwoBranchParams& params, const TwoBranchGrads& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t slot = 0;
    auto update = [&](Matrix& p, const Matrix& g) {
      Matrix& m = first_[slot];
      Matrix& v = second_[slot];
      ++slot;
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for_each_trainable_pair(params.music, grads.music, update);
    for_each_trainable_pair(params.video, grads.video, update);
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> first_, second_;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();  // NaN for epoch 0
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double wall_s = 0.0;
};

inline json to_json(const EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"val_loss", r.val_loss}, {"lr", r.learning_rate}, {"wall_s", r.wall_s}};
  j["train_loss"] = std::isnan(r.train_loss) ? json(nullptr) : json(r.train_loss);
  return j;
}

struct TrainResult {
  TwoBranchParams best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> log;
};

/// Mean validation loss over fixed batches (one segment per clip, mining
/// seed derived from the run seed).
inline double validation_loss(const std::vector<SegmentedClip>& val, const TwoBranchParams& params,
                              const TrainConfig& config) {
  require(val.size() >= 2, ErrorCode::invalid_argument, "validation catalog needs at least two clips");
  std::mt19937_64 rng(config.seed ^ 0x5eedba11ULL);
  double weighted = 0.0, triplets = 0.0;
  for (std::size_t begin = 0; begin < val.size(); begin += config.batch_size) {
    std::vector<std::size_t> clips;
    for (std::size_t i = begin; i < std::min(val.size(), begin + config.batch_size); ++i) clips.push_back(i);
    if (clips.size() < 2) break;
    const TripletBatch batch = make_batch(val, clips, rng, false);
    const double count = static_cast<double>(batch.triplet_count());
    weighted += count * batch_loss_infer(batch, params, config);
    triplets += count;
  }
  return weighted / triplets;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const TrainConfig& config, TwoBranchParams params, const std::vector<SegmentedClip>& train_set,
                         const std::vector<SegmentedClip>& val_set, const EpochCallback& on_epoch = {}) {
  validate(config);
  require(train_set.size() >= 2, ErrorCode::invalid_argument, "training catalog needs at least two clips");
  params.spec.dropout = config.dropout;
  std::mt19937_64 rng(config.seed);
  AdamOptimizer adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  TrainResult result;
  result.best_params = params;
  result.best_val_loss = validation_loss(val_set, params, config);
  EpochRecord initial{0, std::numeric_limits<double>::quiet_NaN(), result.best_val_loss, config.learning_rate, elapsed()};
  result.log.push_back(initial);
  if (on_epoch) on_epoch(initial);

  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0, triplets = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++step) {
      const std::vector<std::size_t> clips(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(order.size(), begin + config.batch_size)));
      if (clips.size() < 2) break;
      const TripletBatch batch = make_batch(train_set, clips, rng, config.same_clip_negatives);
      const std::uint64_t dropout_seed = rng();
      const BatchLoss loss = batch_loss(batch, params, config, dropout_seed);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", step " << step << " (L_VM=" << loss.loss_vm
            << ", L_MV=" << loss.loss_mv << ")";
        fail(ErrorCode::non_finite, msg.str());
      }
      adam.step(params, loss.grads);
      const double count = static_cast<double>(batch.triplet_count());
      weighted += count * loss.loss;
      triplets += count;
    }
    EpochRecord record{epoch, weighted / triplets, validation_loss(val_set, params, config), config.learning_rate,
                       elapsed()};
    require(std::isfinite(record.val_loss), ErrorCode::non_finite,
            "non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.push_back(record);
    if (on_epoch) on_epoch(record);
    if (record.val_loss < result.best_val_loss - config.min_delta) {
      result.best_val_loss = record.val_loss;
      result.best_params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace segvm
