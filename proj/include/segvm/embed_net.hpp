#pragma once

// Two-branch fully-connected embedding network. Each branch is
//   [dense -> ReLU -> dropout] x (L-1) -> dense -> batch-norm -> L2-normalize
// and maps its modality into a shared unit-norm embedding space.

#include "segvm/common.hpp"
#include "segvm/feature_store.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace segvm {

struct BranchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_widths;

  std::size_t output_dim() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
};

struct NetworkSpec {
  BranchSpec music{128, {2048, 1024, 512}};
  BranchSpec video{1024, {2048, 512}};
  double dropout = 0.5;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
};

inline void validate(const NetworkSpec& spec) {
  for (const BranchSpec* b : {&spec.music, &spec.video}) {
    require(b->input_dim >= 1 && !b->layer_widths.empty(), ErrorCode::invalid_argument,
            "branch needs an input dim and at least one layer");
    for (auto w : b->layer_widths) require(w >= 1, ErrorCode::invalid_argument, "layer widths must be >= 1");
  }
  require(spec.music.output_dim() == spec.video.output_dim(), ErrorCode::invalid_argument,
          "both branches must end in the same embedding dim");
  require(spec.dropout >= 0 && spec.dropout < 1, ErrorCode::invalid_argument, "dropout must be in [0, 1)");
}

inline json to_json(const BranchSpec& b) { return {{"input_dim", b.input_dim}, {"layer_widths", b.layer_widths}}; }

inline json to_json(const NetworkSpec& s) {
  return {{"music", to_json(s.music)},
          {"video", to_json(s.video)},
          {"dropout", s.dropout},
          {"bn_momentum", s.bn_momentum},
          {"bn_epsilon", s.bn_epsilon}};
}

inline NetworkSpec network_spec_from_json(const json& j) {
  NetworkSpec s;
  auto branch = [](const json& b) {
    return BranchSpec{b.at("input_dim").get<std::size_t>(), b.at("layer_widths").get<std::vector<std::size_t>>()};
  };
  s.music = branch(j.at("music"));
  s.video = branch(j.at("video"));
  s.dropout = j.at("dropout").get<double>();
  s.bn_momentum = j.at("bn_momentum").get<double>();
  s.bn_epsilon = j.at("bn_epsilon").get<double>();
  return s;
}

/// Trainable tensors of one branch. Biases and batch-norm vectors are 1 x n.
struct BranchParams {
  std::vector<Matrix> weights;  // in x out
  std::vector<Matrix> biases;
  Matrix gamma, beta;
  Matrix running_mean, running_var;  // not trainable

  std::size_t input_dim() const { return static_cast<std::size_t>(weights.front().rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weights.back().cols()); }
};

/// Gradients mirror the trainable members of BranchParams.
struct BranchGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  Matrix gamma, beta;
};

template <typename Branch, typename Fn>
void for_each_trainable(Branch& b, Fn&& fn) {
  for (std::size_t l = 0; l < b.weights.size(); ++l) {
    fn(b.weights[l]);
    fn(b.biases[l]);
  }
  fn(b.gamma);
  fn(b.beta);
}

/// Walks two structurally identical branches in lockstep.
template <typename A, typename B, typename Fn>
void for_each_trainable_pair(A& a, B& b, Fn&& fn) {
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    fn(a.weights[l], b.weights[l]);
    fn(a.biases[l], b.biases[l]);
  }
  fn(a.gamma, b.gamma);
  fn(a.beta, b.beta);
}

struct TwoBranchParams {
  NetworkSpec spec;
  BranchParams music;
  BranchParams video;

  BranchParams& branch(Modality m) { return m == Modality::music ? music : video; }
  const BranchParams& branch(Modality m) const { return m == Modality::music ? music : video; }
};

struct TwoBranchGrads {
  BranchGrads music;
  BranchGrads video;

  BranchGrads& branch(Modality m) { return m == Modality::music ? music : video; }
};

inline BranchGrads zero_grads_like(const BranchParams& p) {
  BranchGrads g;
  for (const auto& w : p.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : p.biases) g.biases.push_back(Matrix::Zero(b.rows(), b.cols()));
  g.gamma = Matrix::Zero(p.gamma.rows(), p.gamma.cols());
  g.beta = Matrix::Zero(p.beta.rows(), p.beta.cols());
  return g;
}

inline std::size_t trainable_count(const BranchSpec& b) {
  std::size_t count = 0, in = b.input_dim;
  for (auto out : b.layer_widths) {
    count += in * out + out;
    in = out;
  }
  return count + 2 * b.output_dim();
}

inline std::size_t trainable_count(const NetworkSpec& s) { return trainable_count(s.music) + trainable_count(s.video); }

inline std::size_t trainable_count(const TwoBranchParams& p) {
  std::size_t count = 0;
  auto add = [&](const Matrix& m) { count += static_cast<std::size_t>(m.size()); };
  for_each_trainable(p.music, add);
  for_each_trainable(p.video, add);
  return count;
}

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases, identity batch-norm.
inline TwoBranchParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  auto make_branch = [&](const BranchSpec& b) {
    BranchParams p;
    std::size_t in = b.input_dim;
    for (auto out : b.layer_widths) {
      std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / static_cast<double>(in)),
                                                  std::sqrt(6.0 / static_cast<double>(in)));
      Matrix w(in, out);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
      p.weights.push_back(std::move(w));
      p.biases.push_back(Matrix::Zero(1, out));
      in = out;
    }
    const auto d = static_cast<Eigen::Index>(b.output_dim());
    p.gamma = Matrix::Ones(1, d);
    p.beta = Matrix::Zero(1, d);
    p.running_mean = Matrix::Zero(1, d);
    p.running_var = Matrix::Ones(1, d);
    return p;
  };
  TwoBranchParams params{spec, make_branch(spec.music), make_branch(spec.video)};
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { train, infer };

inline constexpr double kL2Epsilon = 1e-12;
inline constexpr double kDegenerateNorm = 1e-12;

/// Activations kept by a train-mode forward for the backward pass.
struct BranchCache {
  std::vector<Matrix> layer_inputs;  // input of every dense layer (after dropout)
  std::vector<Matrix> hidden_pre;    // pre-ReLU activations of hidden layers
  std::vector<Matrix> dropout_masks; // scaled keep-masks of hidden layers
  Matrix normalized;                 // batch-norm x-hat
  Eigen::RowVectorXd inv_std;
  Vector row_norms;                  // sqrt(|y|^2 + eps) per row
  Matrix embeddings;
};

namespace detail {

inline Matrix l2_normalize_rows(const Matrix& y, Vector& norms) {
  norms.resize(y.rows());
  Matrix e(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double sq = y.row(i).squaredNorm();
    require(std::sqrt(sq) >= kDegenerateNorm, ErrorCode::degenerate,
            "degenerate embedding: pre-normalization norm below 1e-12");
    norms[i] = std::sqrt(sq + kL2Epsilon);
    e.row(i) = y.row(i) / norms[i];
  }
  return e;
}

}  // namespace detail

inline Matrix forward_infer(const BranchParams& p, const Matrix& inputs, double bn_epsilon = 1e-5) {
  require(static_cast<std::size_t>(inputs.cols()) == p.input_dim(), ErrorCode::mismatch,
          "input dim " + std::to_string(inputs.cols()) + " does not match branch input " +
              std::to_string(p.input_dim()));
  require(inputs.rows() >= 1, ErrorCode::invalid_argument, "forward needs at least one row");
  Matrix a = inputs;
  const std::size_t layers = p.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = a * p.weights[l];
    z.rowwise() += p.biases[l].row(0);
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  const Eigen::RowVectorXd scale =
      p.gamma.row(0).array() / (p.running_var.row(0).array() + bn_epsilon).sqrt();
  Matrix y = (a.rowwise() - p.running_mean.row(0)).array().rowwise() * scale.array();
  y.rowwise() += p.beta.row(0);
  Vector norms;
  return detail::l2_normalize_rows(y, norms);
}

inline Matrix forward_infer(const TwoBranchParams& params, const Matrix& inputs, Modality branch) {
  return forward_infer(params.branch(branch), inputs, params.spec.bn_epsilon);
}

/// Train-mode forward: batch statistics (running statistics updated with
/// `momentum`), inverted dropout drawn from `dropout_seed`.
inline Matrix forward_train(BranchParams& p, const Matrix& inputs, double dropout, double momentum,
                            double bn_epsilon, std::uint64_t dropout_seed, BranchCache& cache) {
  require(static_cast<std::size_t>(inputs.cols()) == p.input_dim(), ErrorCode::mismatch,
          "input dim " + std::to_string(inputs.cols()) + " does not match branch input " +
              std::to_string(p.input_dim()));
  require(inputs.rows() >= 2, ErrorCode::invalid_argument, "train-mode forward needs at least two rows");
  const auto n = static_cast<double>(inputs.rows());
  std::mt19937_64 rng(dropout_seed);
  std::bernoulli_distribution keep(1.0 - dropout);
  const double keep_scale = 1.0 / (1.0 - dropout);

  cache = BranchCache{};
  Matrix a = inputs;
  const std::size_t layers = p.weights.size();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Matrix z = a * p.weights[l];
    z.rowwise() += p.biases[l].row(0);
    Matrix mask(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = dropout > 0 ? (keep(rng) ? keep_scale : 0.0) : 1.0;
    Matrix h = z.cwiseMax(0.0).cwiseProduct(mask);
    cache.layer_inputs.push_back(std::move(a));
    cache.hidden_pre.push_back(std::move(z));
    cache.dropout_masks.push_back(std::move(mask));
    a = std::move(h);
  }
  Matrix z = a * p.weights.back();
  z.rowwise() += p.biases.back().row(0);
  cache.layer_inputs.push_back(std::move(a));

  const Eigen::RowVectorXd mean = z.colwise().mean();
  Matrix centered = z.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
  cache.inv_std = (var.array() + bn_epsilon).rsqrt();
  cache.normalized = centered.array().rowwise() * cache.inv_std.array();
  Matrix y = cache.normalized.array().rowwise() * p.gamma.row(0).array();
  y.rowwise() += p.beta.row(0);

  p.running_mean = momentum * p.running_mean + (1.0 - momentum) * Matrix(mean);
  p.running_var = momentum * p.running_var + (1.0 - momentum) * Matrix(var * (n / (n - 1.0)));

  cache.embeddings = detail::l2_normalize_rows(y, cache.row_norms);
  return cache.embeddings;
}

inline Matrix forward_train(TwoBranchParams& params, const Matrix& inputs, Modality branch,
                            std::uint64_t dropout_seed, BranchCache& cache) {
  return forward_train(params.branch(branch), inputs, params.spec.dropout, params.spec.bn_momentum,
                       params.spec.bn_epsilon, dropout_seed, cache);
}

/// Gradient of y -> y / sqrt(|y|^2 + eps) applied to an upstream row gradient.
/// The result is orthogonal to the normalized vector.
inline Matrix l2_normalize_backward(const Matrix& embeddings, const Vector& row_norms, const Matrix& upstream) {
  const Vector along = (embeddings.cwiseProduct(upstream)).rowwise().sum();
  Matrix g = upstream - (embeddings.array().colwise() * along.array()).matrix();
  return g.array().colwise() / row_norms.array();
}

inline BranchGrads backward(const BranchParams& p, const BranchCache& cache, const Matrix& upstream) {
  require(upstream.rows() == cache.embeddings.rows() && upstream.cols() == cache.embeddings.cols(),
          ErrorCode::mismatch, "upstream gradient shape does not match cached embeddings");
  require(cache.layer_inputs.size() == p.weights.size(), ErrorCode::mismatch,
          "cache does not come from a train-mode forward of this branch");
  const auto n = static_cast<double>(upstream.rows());
  BranchGrads g = zero_grads_like(p);

  const Matrix grad_y = l2_normalize_backward(cache.embeddings, cache.row_norms, upstream);
  g.gamma = (grad_y.cwiseProduct(cache.normalized)).colwise().sum();
  g.beta = grad_y.colwise().sum();

  const Matrix grad_xhat = grad_y.array().rowwise() * p.gamma.row(0).array();
  const Eigen::RowVectorXd sum_g = grad_xhat.colwise().sum();
  const Eigen::RowVectorXd sum_gx = grad_xhat.cwiseProduct(cache.normalized).colwise().sum();
  Matrix grad_z = (n * grad_xhat.array()).rowwise() - sum_g.array();
  grad_z -= (cache.normalized.array().rowwise() * sum_gx.array()).matrix();
  grad_z = (grad_z.array().rowwise() * (cache.inv_std.array() / n)).matrix();

  for (std::size_t l = p.weights.size(); l-- > 0;) {
    g.weights[l].noalias() = cache.layer_inputs[l].transpose() * grad_z;
    g.biases[l] = grad_z.colwise().sum();
    if (l == 0) break;
    Matrix grad_a = grad_z * p.weights[l].transpose();
    const Matrix& pre = cache.hidden_pre[l - 1];
    grad_z = grad_a.cwiseProduct(cache.dropout_masks[l - 1]);
    grad_z = (pre.array() > 0.0).select(grad_z, 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace checkpoint {
inline constexpr std::array<char, 4> kMagic{'S', 'V', 'M', 'C'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace checkpoint

struct Checkpoint {
  TwoBranchParams params;
  std::string segmenter;
  json hyperparameters = json::object();
  std::size_t epoch = 0;
  json run_config = json::object();
};

namespace detail {

template <typename Fn>
void for_each_stored_tensor(TwoBranchParams& p, Fn&& fn) {
  for (Modality m : {Modality::music, Modality::video}) {
    BranchParams& b = p.branch(m);
    const std::string prefix = to_string(m);
    for (std::size_t l = 0; l < b.weights.size(); ++l) {
      fn(prefix + ".dense" + std::to_string(l) + ".weight", b.weights[l]);
      fn(prefix + ".dense" + std::to_string(l) + ".bias", b.biases[l]);
    }
    fn(prefix + ".bn.gamma", b.gamma);
    fn(prefix + ".bn.beta", b.beta);
    fn(prefix + ".bn.running_mean", b.running_mean);
    fn(prefix + ".bn.running_var", b.running_var);
  }
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  TwoBranchParams params = ckpt.params;
  json tensors = json::array();
  detail::for_each_stored_tensor(params, [&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  const json meta = {{"segmenter", ckpt.segmenter},
                     {"epoch", ckpt.epoch},
                     {"hyperparameters", ckpt.hyperparameters},
                     {"network", to_json(params.spec)},
                     {"run_config", ckpt.run_config},
                     {"tensors", tensors}};
  const std::string meta_text = meta.dump();
  std::string out(checkpoint::kMagic.begin(), checkpoint::kMagic.end());
  detail::put_le<std::uint32_t>(out, checkpoint::kVersion);
  detail::put_le<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  detail::for_each_stored_tensor(params, [&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_le<double>(out, m.data()[i]);
  });
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 4 && std::equal(checkpoint::kMagic.begin(), checkpoint::kMagic.end(), bytes.begin()),
          ErrorCode::bad_magic, "bad magic: not a checkpoint file");
  require(bytes.size() >= 16, ErrorCode::truncated, "corrupt checkpoint: truncated header");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  require(version == checkpoint::kVersion, ErrorCode::version_mismatch,
          "checkpoint version mismatch: got " + std::to_string(version));
  const auto meta_len = detail::get_le<std::uint64_t>(bytes.data() + 8);
  require(bytes.size() - 16 >= meta_len, ErrorCode::truncated, "corrupt checkpoint: truncated metadata");
  json meta;
  try {
    meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::invariant, std::string("corrupt checkpoint: bad metadata: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.segmenter = meta.at("segmenter").get<std::string>();
    ckpt.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.hyperparameters = meta.at("hyperparameters");
    ckpt.run_config = meta.at("run_config");
    ckpt.params = init_params(network_spec_from_json(meta.at("network")), 0);
  } catch (const json::exception& e) {
    fail(ErrorCode::invariant, std::string("corrupt checkpoint: ") + e.what());
  }
  const json& tensors = meta.at("tensors");
  std::size_t index = 0, offset = 16 + meta_len;
  detail::for_each_stored_tensor(ckpt.params, [&](const std::string& name, Matrix& m) {
    require(index < tensors.size() && tensors[index].at("name") == name &&
                tensors[index].at("rows").get<Eigen::Index>() == m.rows() &&
                tensors[index].at("cols").get<Eigen::Index>() == m.cols(),
            ErrorCode::invariant, "corrupt checkpoint: unexpected tensor layout at '" + name + "'");
    ++index;
    const std::size_t need = static_cast<std::size_t>(m.size()) * sizeof(double);
    require(bytes.size() >= offset + need, ErrorCode::truncated, "corrupt checkpoint: truncated tensor '" + name + "'");
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = detail::get_le<double>(bytes.data() + offset + static_cast<std::size_t>(i) * sizeof(double));
    offset += need;
  });
  require(index == tensors.size() && offset == bytes.size(), ErrorCode::invariant,
          "corrupt checkpoint: trailing data");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

/// Loads a checkpoint; refuses one trained with a different segmenter
/// unless `force` is set.
inline Checkpoint load_checkpoint(const fs::path& path, const std::optional<std::string>& expected_segmenter = {},
                                  bool force = false) {
  Checkpoint ckpt = decode_checkpoint(detail::read_file(path));
  if (expected_segmenter && !force)
    require(ckpt.segmenter == *expected_segmenter, ErrorCode::mismatch,
            "checkpoint was trained with segmenter '" + ckpt.segmenter + "', requested '" + *expected_segmenter + "'");
  return ckpt;
}

}  // namespace segvm
