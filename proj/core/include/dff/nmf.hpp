#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dff/tensor.hpp"

namespace dff {

enum class NmfInit { SeededUniform, Nndsvd };

struct NmfConfig {
  int k = 3;
  int max_iters = 400;
  /// Stop once (loss_prev - loss) / loss_prev drops below this.
  double rel_tol = 1e-4;
  NmfInit init = NmfInit::SeededUniform;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

/// A ~= H * W with H (rows x k) and W (k x c), both non-negative.
///
/// `loss_trace[0]` is the loss of the initial factors; entry t is the loss
/// after t multiplicative-update iterations, so the trace has
/// `iterations_run + 1` entries.
struct Factorization {
  Matrix h;
  Matrix w;
  std::vector<double> loss_trace;
  int iterations_run = 0;

  int rank() const noexcept { return static_cast<int>(w.rows()); }
  friend bool operator==(const Factorization& a, const Factorization& b);
};

struct PcaResult {
  /// c x k, orthonormal columns (the leading right singular vectors of A).
  Eigen::MatrixXd projection;
  /// ||A - A V V^T||_F^2
  double approximation_error = 0.0;
};

/// Denominator stabilizer of the multiplicative updates.
inline constexpr float kMuEpsilon = 1e-12f;

/// ||A - H W||_F^2, products and sums carried out in double precision.
double frobenius_loss(const Matrix& a, const Matrix& h, const Matrix& w);
inline double frobenius_loss(const FeatureMatrix& a, const Matrix& h, const Matrix& w) {
  return frobenius_loss(a.matrix(), h, w);
}

/// One round of multiplicative updates for the Frobenius objective:
///   H <- H .* (A W^T) ./ (H W W^T + eps)
///   W <- W .* (H^T A) ./ (H^T H W + eps)   (using the updated H)
/// Zero entries stay zero.
std::pair<Matrix, Matrix> multiplicative_update_step(const Matrix& a, const Matrix& h, const Matrix& w);

/// In-place variant used by the solver loop.
void multiplicative_update_inplace(const Matrix& a, Matrix& h, Matrix& w);

/// Initial (H0, W0). SeededUniform draws from (0, sqrt(mean(A)/k)];
/// Nndsvd builds the factors from the positive parts of the leading singular
/// vectors, with zero entries lifted to mean(A)/100 so no factor entry
/// starts locked at zero.
std::pair<Matrix, Matrix> init_factors(const NmfConfig& cfg, const FeatureMatrix& a);

/// Scale of the SeededUniform draw.
double seeded_uniform_scale(const FeatureMatrix& a, int k);

Factorization nmf_factorize(const FeatureMatrix& a, const NmfConfig& cfg);

PcaResult pca_baseline(const FeatureMatrix& a, int k);

}  // namespace dff
