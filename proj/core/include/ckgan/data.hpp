#pragma once

#include <string>
#include <vector>

#include "ckgan/rng.hpp"
#include "ckgan/tensor.hpp"

namespace ckgan {

enum class DatasetKind { Ring, Grid, Smile };

DatasetKind dataset_from_name(const std::string& name);
const char* dataset_name(DatasetKind k);

struct GaussianComponent {
  double cx, cy;
  double std;
  double weight;
};

/// Half-ellipse mouth of the smile dataset: points (a cos phi, -b sin phi)
/// + center, phi uniform on [0, pi], plus isotropic jitter.
struct ArcComponent {
  double cx = 0.0, cy = -0.3;
  double semi_major = 0.6;
  double semi_minor = 0.5;
  double jitter_std = 0.01;
  double weight = 0.5;
};

struct MixtureSpec {
  std::vector<GaussianComponent> gaussians;
  bool has_arc = false;
  ArcComponent arc;

  void validate() const;  // weights must sum to 1
};

MixtureSpec dataset_spec(DatasetKind kind);

/// Gaussian mode centers with their standard deviations. For the smile
/// dataset these are the two eye components only.
struct ModeCenters {
  std::vector<double> xs, ys, stds;
  std::size_t count() const { return xs.size(); }
};
ModeCenters mode_centers(DatasetKind kind);

/// Draws n i.i.d. points as an [n x 2] tensor.
Tensor sample_dataset(DatasetKind kind, std::size_t n, Rng& rng);
Tensor sample_mixture(const MixtureSpec& spec, std::size_t n, Rng& rng);

/// Uniform noise on [-1, 1]^{n x dim}.
Tensor make_noise(std::size_t n, std::size_t dim, Rng& rng);

/// Distance from a point to the ideal (jitter-free) mouth arc.
double arc_distance(const ArcComponent& arc, double px, double py);

}  // namespace ckgan
