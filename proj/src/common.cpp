#include "ivnac/common.hpp"

#include <cmath>

#include "ivnac/tensor.hpp"

namespace ivnac {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
         "," + std::to_string(w) + ")";
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::poisson(double mean) {
  if (mean < 0) throw ContractError("poisson: negative mean");
  if (mean == 0) return 0;
  if (mean <= 60.0) {
    // Knuth product method
    const double limit = std::exp(-mean);
    double prod = uniform();
    std::uint64_t k = 0;
    while (prod > limit) {
      prod *= uniform();
      k++;
    }
    return k;
  }
  // normal approximation, adequate for the count levels simulated here
  const double v = mean + std::sqrt(mean) * normal();
  return v <= 0 ? 0 : std::uint64_t(std::llround(v));
}

}  // namespace ivnac
