#include "lift3d/core.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

namespace lift3d {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::InvalidTemplate: return "InvalidTemplate";
    case ErrorKind::DegenerateExtent: return "DegenerateExtent";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::TooManyJoints: return "TooManyJoints";
    case ErrorKind::DegenerateFrame: return "DegenerateFrame";
    case ErrorKind::DegenerateSequence: return "DegenerateSequence";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Io: return "IoError";
  }
  return "Unknown";
}

bool is_input_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::TooManyJoints:
    case ErrorKind::Format:
    case ErrorKind::Config:
    case ErrorKind::InvalidTemplate:
    case ErrorKind::ShapeMismatch:
      return true;
    default:
      return false;
  }
}

int Presence::count() const {
  return static_cast<int>(std::accumulate(flags.begin(), flags.end(), std::size_t{0}));
}

Rng make_stream(std::uint64_t root_seed, std::string_view name) {
  // FNV-1a over the stream name keeps sub-streams stable across runs and platforms.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::max(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace lift3d
