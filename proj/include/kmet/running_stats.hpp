#pragma once

#include <cmath>
#include <cstddef>

namespace kmet {

// Welford accumulator for mean / sample variance / standard error.
class RunningMeanVar {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }

  double var_sample() const noexcept {
    return n_ >= 2 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
  }

  double std_sample() const noexcept { return std::sqrt(var_sample()); }

  double std_error() const noexcept {
    return n_ >= 1 ? std_sample() / std::sqrt(static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace kmet
