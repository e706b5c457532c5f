#pragma once

#include <stdexcept>
#include <string>

namespace kmet {

// Error taxonomy shared across the library. The CLI maps input/io errors to
// exit code 1 and numerical failures to exit code 2.
enum class ErrorCode {
  invalid_input,
  dimension_mismatch,
  insufficient_samples,
  domain_error,
  non_differentiable_point,
  not_psd,
  eig_no_convergence,
  kink_proximity,
  io_open_failed,
  io_magic_mismatch,
  io_bad_header,
  io_truncated,
  io_non_finite,
  io_ragged_csv,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool is_numerical() const noexcept {
    return code_ == ErrorCode::eig_no_convergence || code_ == ErrorCode::not_psd ||
           code_ == ErrorCode::non_differentiable_point || code_ == ErrorCode::kink_proximity;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace kmet
