#include "ckgan/data.hpp"

#include <cmath>
#include <stdexcept>

namespace ckgan {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

DatasetKind dataset_from_name(const std::string& name) {
  if (name == "ring") return DatasetKind::Ring;
  if (name == "grid") return DatasetKind::Grid;
  if (name == "smile") return DatasetKind::Smile;
  throw std::invalid_argument("unknown dataset '" + name + "' (expected ring, grid, smile)");
}

const char* dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Ring: return "ring";
    case DatasetKind::Grid: return "grid";
    case DatasetKind::Smile: return "smile";
  }
  return "?";
}

void MixtureSpec::validate() const {
  double total = has_arc ? arc.weight : 0.0;
  for (const auto& g : gaussians) {
    if (!(g.std > 0.0)) throw std::invalid_argument("mixture component std must be positive");
    total += g.weight;
  }
  if (std::fabs(total - 1.0) > 1e-12)
    throw std::invalid_argument("mixture weights must sum to 1");
}

MixtureSpec dataset_spec(DatasetKind kind) {
  MixtureSpec spec;
  switch (kind) {
    case DatasetKind::Ring: {
      // eight modes on the unit circle, first at (1, 0)
      for (int i = 0; i < 8; ++i) {
        double a = 2.0 * kPi * i / 8.0;
        spec.gaussians.push_back({std::cos(a), std::sin(a), 1e-4, 1.0 / 8.0});
      }
      break;
    }
    case DatasetKind::Grid: {
      // 5 x 5 grid on {-4,-2,0,2,4}^2
      for (int ix = 0; ix < 5; ++ix)
        for (int iy = 0; iy < 5; ++iy)
          spec.gaussians.push_back(
              {-4.0 + 2.0 * ix, -4.0 + 2.0 * iy, 0.005, 1.0 / 25.0});
      break;
    }
    case DatasetKind::Smile: {
      double eye_std = std::sqrt(0.001);
      spec.gaussians.push_back({-0.4, 0.3, eye_std, 0.25});
      spec.gaussians.push_back({0.4, 0.3, eye_std, 0.25});
      spec.has_arc = true;
      spec.arc = ArcComponent{};
      break;
    }
  }
  spec.validate();
  return spec;
}

ModeCenters mode_centers(DatasetKind kind) {
  MixtureSpec spec = dataset_spec(kind);
  ModeCenters mc;
  for (const auto& g : spec.gaussians) {
    mc.xs.push_back(g.cx);
    mc.ys.push_back(g.cy);
    mc.stds.push_back(g.std);
  }
  return mc;
}

Tensor sample_mixture(const MixtureSpec& spec, std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample: n must be at least 1");
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform01();
    double acc = 0.0;
    int chosen = -1;
    for (std::size_t c = 0; c < spec.gaussians.size(); ++c) {
      acc += spec.gaussians[c].weight;
      if (u < acc) {
        chosen = static_cast<int>(c);
        break;
      }
    }
    double nx, ny;
    rng.normal2(nx, ny);
    if (chosen >= 0) {
      const auto& g = spec.gaussians[chosen];
      out(i, 0) = g.cx + g.std * nx;
      out(i, 1) = g.cy + g.std * ny;
    } else if (spec.has_arc) {
      double phi = rng.uniform(0.0, kPi);
      out(i, 0) = spec.arc.cx + spec.arc.semi_major * std::cos(phi) + spec.arc.jitter_std * nx;
      out(i, 1) = spec.arc.cy - spec.arc.semi_minor * std::sin(phi) + spec.arc.jitter_std * ny;
    } else {
      // u landed in the roundoff sliver past the last cumulative weight
      const auto& g = spec.gaussians.back();
      out(i, 0) = g.cx + g.std * nx;
      out(i, 1) = g.cy + g.std * ny;
    }
  }
  return out;
}

Tensor sample_dataset(DatasetKind kind, std::size_t n, Rng& rng) {
  MixtureSpec spec = dataset_spec(kind);
  return sample_mixture(spec, n, rng);
}

Tensor make_noise(std::size_t n, std::size_t dim, Rng& rng) {
  if (n == 0 || dim == 0) throw std::invalid_argument("make_noise: n and dim must be positive");
  Tensor out({n, dim});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(-1.0, 1.0);
  return out;
}

double arc_distance(const ArcComponent& arc, double px, double py) {
  // dense scan over the parameter followed by local golden-section refinement
  double rx = px - arc.cx, ry = py - arc.cy;
  auto d2_at = [&](double phi) {
    double ax = arc.semi_major * std::cos(phi) - rx;
    double ay = -arc.semi_minor * std::sin(phi) - ry;
    return ax * ax + ay * ay;
  };
  const int kGrid = 512;
  double best_phi = 0.0, best = d2_at(0.0);
  for (int i = 1; i <= kGrid; ++i) {
    double phi = kPi * i / kGrid;
    double d2 = d2_at(phi);
    if (d2 < best) {
      best = d2;
      best_phi = phi;
    }
  }
  double lo = std::max(0.0, best_phi - kPi / kGrid);
  double hi = std::min(kPi, best_phi + kPi / kGrid);
  const double invphi = 0.6180339887498949;
  double a = lo, b2 = hi;
  double c = b2 - invphi * (b2 - a), d = a + invphi * (b2 - a);
  for (int it = 0; it < 60; ++it) {
    if (d2_at(c) < d2_at(d)) b2 = d; else a = c;
    c = b2 - invphi * (b2 - a);
    d = a + invphi * (b2 - a);
  }
  return std::sqrt(d2_at(0.5 * (a + b2)));
}

}  // namespace ckgan
