#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace segvm {

/// Row-major dense matrix; one row per frame / segment / sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Modality : std::uint32_t { music = 0, video = 1 };

inline const char* to_string(Modality m) { return m == Modality::music ? "music" : "video"; }

enum class ErrorCode {
  invalid_argument,
  invariant,
  io,
  bad_magic,
  version_mismatch,
  truncated,
  non_finite,
  out_of_range,
  mismatch,
  degenerate,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

/// Worker count: explicit value if positive, otherwise SEGVM_THREADS, otherwise 1.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SEGVM_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace segvm
