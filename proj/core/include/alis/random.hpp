#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace alis {

/// Seeded random stream with portable output.
///
/// Uniform and normal variates are generated from the raw mt19937_64 bits
/// directly (Box-Muller for normals) so that a given seed produces the same
/// byte-identical stream on every platform and standard library. Independent
/// streams are derived from a root seed with split(); splitting is a pure
/// function of (root seed, stream id), not of the consumption state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Uniform in [0, 1).
  double uniform();
  /// Standard normal. Negated while antithetic mode is on.
  double normal();

  Eigen::VectorXd normal_vec(int n);
  Eigen::MatrixXd normal_mat(int rows, int cols);

  /// Derive an independent stream; stream ids must be distinct per use site.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

  void set_antithetic(bool on) { antithetic_ = on; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
  bool antithetic_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace alis
