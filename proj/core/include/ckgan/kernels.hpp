#pragma once

#include <array>
#include <string>
#include <vector>

#include "ckgan/tape.hpp"

namespace ckgan {

enum class KernelFamily { Gaussian, Laplacian, RBFMixture, Exponential, Matern32, Matern52 };

constexpr int kNumKernels = 6;

const char* kernel_family_name(KernelFamily f);

/// One characteristic kernel with its scale parameters.
///   gaussian    k(x,y) = exp(-||x-y||_2^2 / (2 sigma^2))
///   laplacian   k(x,y) = exp(-||x-y||_1 / sigma)
///   rbf mixture k(x,y) = sum_q exp(-||x-y||_2^2 / (2 sigma_q^2))
///   exponential k(x,y) = exp(-||x-y||_2 / sigma)
///   matern 3/2  k(x,y) = alpha (1 + sqrt3 r) exp(-sqrt3 r),      r = ||x-y||_2 / l
///   matern 5/2  k(x,y) = alpha (1 + sqrt5 r + 5/3 r^2) exp(-sqrt5 r)
struct KernelKind {
  KernelFamily family = KernelFamily::Gaussian;
  double sigma = 10.0;
  double alpha = 1.0;
  double length = 10.0;
  std::vector<double> sigmas;  // RBF mixture components

  static KernelKind gaussian(double sigma = 10.0);
  static KernelKind laplacian(double sigma = 100.0);
  static KernelKind rbf_mixture(std::vector<double> sigmas = {1, 2, 4, 8, 16});
  static KernelKind exponential(double sigma = 10.0);
  static KernelKind matern32(double alpha = 1.0, double length = 10.0);
  static KernelKind matern52(double alpha = 1.0, double length = 10.0);

  void validate() const;  // throws std::invalid_argument on non-positive scales
  /// Upper bound of the kernel value (attained at x == y).
  double bound() const;
};

enum class SelectionMode { Soft, DirectLinear, OneHot };

/// The six kernels in fixed order plus trainable selection logits.
struct KernelMix {
  std::array<KernelKind, kNumKernels> components;
  SelectionMode mode = SelectionMode::Soft;

  /// Components at their default parameters, in the canonical order
  /// (gaussian, laplacian, rbf mixture, exponential, matern 3/2, matern 5/2).
  static KernelMix standard(SelectionMode mode = SelectionMode::Soft);
};

/// Selection weights as tape nodes: soft -> softmax(logits); direct-linear ->
/// relu(logits) renormalized (uniform fallback when all logits <= 0); one-hot
/// -> indicator of the argmax with ties broken toward the lowest index.
Val mix_weights_node(Tape& tape, SelectionMode mode, Val logits);

/// Selection weights as plain values.
Tensor mix_weights(SelectionMode mode, const Tensor& logits);

// ---- row-paired forms: k(X[i], Y[i]) for each row i ----
Val row_kernel(Tape& tape, const KernelKind& kind, Val x, Val y);           // -> [B]
Val row_kernel_mix(Tape& tape, const KernelMix& mix, Val x, Val y, Val logits);

// ---- single-pair forms: x, y are rank-1 vectors ----
Val kernel_eval(Tape& tape, const KernelKind& kind, Val x, Val y);          // -> scalar
Val kernel_eval_mix(Tape& tape, const KernelMix& mix, Val x, Val y, Val logits);

// ---- Gram matrices: G[i][j] = k(X[i], Y[j]) ----
Val gram(Tape& tape, const KernelKind& kind, Val X, Val Y);                 // -> [n x p]
Val gram_mix(Tape& tape, const KernelMix& mix, Val X, Val Y, Val logits);

}  // namespace ckgan
