#pragma once

#include <array>
#include <cstdint>

#include "ckgan/data.hpp"
#include "ckgan/tensor.hpp"

namespace ckgan {

/// One evaluation record of a training run.
struct MetricsReport {
  long iteration = 0;
  int modes_captured = 0;
  double hq_percent = 0.0;
  double kl = 0.0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  std::array<double, 6> xi{};
  double wall_seconds = 0.0;
};

/// Number of Gaussian mode centers with at least one sample within one
/// standard deviation (Euclidean). For the smile dataset only the two eye
/// modes are counted.
int modes_captured(const Tensor& samples, const ModeCenters& centers);

/// Percentage of samples within three standard deviations of their nearest
/// mode. The smile variant classifies against {left eye, right eye, mouth
/// arc}; arc distance is point-to-curve with threshold 3 x jitter std.
double high_quality_percent(const Tensor& samples, const ModeCenters& centers);
double high_quality_percent_smile(const Tensor& samples, const MixtureSpec& spec);

/// KL(generated || reference) over nearest-mode class frequencies with
/// additive smoothing 1e-10. The smile variant uses the 3-class rule.
double kl_modes(const Tensor& generated, const ModeCenters& centers, const Tensor& reference);
double kl_modes_smile(const Tensor& generated, const MixtureSpec& spec, const Tensor& reference);

/// Dataset-dispatching forms used by the trainer and CLI.
int modes_captured(DatasetKind kind, const Tensor& samples);
double high_quality_percent(DatasetKind kind, const Tensor& samples);
double kl_modes(DatasetKind kind, const Tensor& generated, const Tensor& reference);

/// Frechet distance between 2D Gaussian fits of the two point sets:
/// ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), closed form for 2x2.
double frechet_2d(const Tensor& generated, const Tensor& reference);

}  // namespace ckgan
