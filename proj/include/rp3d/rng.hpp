#pragma once

#include <cstdint>
#include <vector>

namespace rp3d {

// Self-contained PRNG so that streams are pinned by this code alone and
// every run with the same seed is bitwise reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Inclusive on both ends.
  int uniform_int(int lo, int hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Derive an independent stream (for per-sample or per-step RNG).
  std::uint64_t fork_seed();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(0, i);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rp3d
