#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ivnac {

// Error taxonomy. The CLI maps these onto exit codes:
// contract/usage -> 1, I/O -> 2, numerical failure -> 3.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG: std::mt19937_64 stream with hand-rolled transforms so
// the byte streams we produce do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift64* — small, fast, and fully specified here.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  // standard normal via Box-Muller (pairs cached)
  double normal();

  // Poisson sample; Knuth product method for small means, normal
  // approximation (rounded, clamped at 0) above 60.
  std::uint64_t poisson(double mean);

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // derive an independent stream (e.g. per sample or per epoch)
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return splitmix(seed ^ splitmix(stream + 0x9E3779B97F4A7C15ULL));
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ivnac
