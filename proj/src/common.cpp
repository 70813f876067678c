#include "headprobe/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace headprobe {

TruncationError::TruncationError(std::size_t expected_bytes, std::size_t actual_bytes)
    : FormatError("truncated activation payload: expected " + std::to_string(expected_bytes) +
                  " bytes, got " + std::to_string(actual_bytes)),
      expected_(expected_bytes),
      actual_(actual_bytes) {}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_label(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  return mix64(base ^ mix64(hash_label(label)));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(mix64(base) ^ a) ^ (b * 0x9e3779b97f4a7c15ULL));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
  return derive_seed(derive_seed(base, label), index);
}

void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace headprobe
