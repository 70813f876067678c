#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace headprobe {

inline constexpr std::string_view kToolkitVersion = "0.3.0";

/// Malformed input: bad magic, wrong shapes, unparseable records.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Activation stream ended before the declared payload was read.
class TruncationError : public FormatError {
 public:
  TruncationError(std::size_t expected_bytes, std::size_t actual_bytes);
  std::size_t expected_bytes() const { return expected_; }
  std::size_t actual_bytes() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Declared axis sizes whose product does not fit in memory addressing.
class SizeOverflowError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// NaN/Inf in data, or a non-finite loss during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contract violation by the caller (bad config, empty group, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// splitmix64 finalizer; stable across platforms.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over the bytes of `text`.
std::uint64_t hash_label(std::string_view text);

/// Derives a child seed from a base seed and a stable label.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items are
/// claimed dynamically, so fn must write only to slot i of its output.
/// The first exception thrown by any item is rethrown after all threads join.
void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace headprobe
