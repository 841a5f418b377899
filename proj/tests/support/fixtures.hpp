#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "rvsl/config.hpp"
#include "rvsl/rng.hpp"
#include "rvsl/tensor.hpp"

namespace fixture {

inline rvsl::Tensor uniform(rvsl::Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  rvsl::Rng rng(seed);
  rvsl::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// A corpus small enough to train on in a unit test.
inline rvsl::RunConfig tiny_run() {
  rvsl::RunConfig c;
  c.data.image_size = 16;
  c.data.syn_identities = 8;
  c.data.syn_views = 4;
  c.data.real_identities = 6;
  c.data.real_views = 4;
  c.data.real_eval_identities = 3;
  c.net.image_size = 16;
  c.net.base_channels = 4;
  c.net.discriminator_channels = 4;
  c.net.embedding_dim = 8;
  c.net.total_blocks = 3;
  c.train.epochs = 1;
  c.train.p = 2;
  c.train.k = 2;
  c.train.iterations_per_epoch = 2;
  c.train.warmup_epochs = 1;
  c.train.decay_interval = 1;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& stem) {
    rvsl::Rng rng(std::hash<std::string>{}(stem) ^ static_cast<std::uint64_t>(::getpid()));
    path = std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixture
