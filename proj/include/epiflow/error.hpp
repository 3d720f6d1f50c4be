#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace epiflow {

enum class ErrorCode {
  kInvalidInput,
  kBehindCamera,
  kDegenerateTriangulation,
  kNegativeDepth,
  kNoEpipolarGeometry,
  kInvalidConfig,
  kParse,
  kIo,
  kReconstructionFailed,
  kUndefinedMetric,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kBehindCamera: return "point behind camera";
    case ErrorCode::kDegenerateTriangulation: return "degenerate triangulation";
    case ErrorCode::kNegativeDepth: return "negative depth";
    case ErrorCode::kNoEpipolarGeometry: return "no epipolar geometry";
    case ErrorCode::kInvalidConfig: return "invalid configuration";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kReconstructionFailed: return "reconstruction failed";
    case ErrorCode::kUndefinedMetric: return "undefined metric";
  }
  return "unknown error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Value-or-status return used on per-pixel hot paths where throwing would be
// too expensive. value() throws on failure.
template <class T>
class Result {
 public:
  Result(T value) : value_(std::move(value)) {}  // NOLINT
  static Result failure(ErrorCode code) {
    Result r;
    r.ok_ = false;
    r.code_ = code;
    return r;
  }

  bool ok() const noexcept { return ok_; }
  explicit operator bool() const noexcept { return ok_; }
  ErrorCode code() const noexcept { return code_; }

  const T& value() const& {
    if (!ok_) throw Error(code_, "operation failed");
    return value_;
  }
  T value_or(T fallback) const { return ok_ ? value_ : fallback; }
  const T& operator*() const noexcept { return value_; }
  const T* operator->() const noexcept { return &value_; }

 private:
  Result() = default;
  T value_{};
  bool ok_ = true;
  ErrorCode code_ = ErrorCode::kInvalidInput;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace epiflow
