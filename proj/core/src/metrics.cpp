#include "ckgan/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ckgan {

namespace {

void check_points(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 2 || t.dim(0) == 0)
    throw std::invalid_argument(std::string(what) + " must be a non-empty [n x 2] tensor");
}

double sq(double v) { return v * v; }

// nearest Gaussian center index by Euclidean distance
std::size_t nearest_center(const ModeCenters& c, double px, double py, double* dist_out) {
  std::size_t best = 0;
  double best_d2 = sq(px - c.xs[0]) + sq(py - c.ys[0]);
  for (std::size_t k = 1; k < c.count(); ++k) {
    double d2 = sq(px - c.xs[k]) + sq(py - c.ys[k]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = k;
    }
  }
  if (dist_out) *dist_out = std::sqrt(best_d2);
  return best;
}

// smile classes: 0 left eye, 1 right eye, 2 mouth arc
std::size_t smile_class(const MixtureSpec& spec, double px, double py, double* dist_out,
                        double* threshold_out) {
  double d0 = std::sqrt(sq(px - spec.gaussians[0].cx) + sq(py - spec.gaussians[0].cy));
  double d1 = std::sqrt(sq(px - spec.gaussians[1].cx) + sq(py - spec.gaussians[1].cy));
  double d2 = arc_distance(spec.arc, px, py);
  std::size_t cls = 0;
  double d = d0, thr = 3.0 * spec.gaussians[0].std;
  if (d1 < d) {
    cls = 1;
    d = d1;
    thr = 3.0 * spec.gaussians[1].std;
  }
  if (d2 < d) {
    cls = 2;
    d = d2;
    thr = 3.0 * spec.arc.jitter_std;
  }
  if (dist_out) *dist_out = d;
  if (threshold_out) *threshold_out = thr;
  return cls;
}

double kl_from_counts(const std::vector<double>& gen_counts, double gen_n,
                      const std::vector<double>& ref_counts, double ref_n) {
  const double eps = 1e-10;
  std::size_t k = gen_counts.size();
  double norm = 1.0 + k * eps;
  double kl = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double p = (gen_counts[i] / gen_n + eps) / norm;
    double q = (ref_counts[i] / ref_n + eps) / norm;
    kl += p * std::log(p / q);
  }
  return kl;
}

}  // namespace

int modes_captured(const Tensor& samples, const ModeCenters& centers) {
  check_points(samples, "samples");
  std::vector<char> hit(centers.count(), 0);
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    double px = samples(i, 0), py = samples(i, 1);
    for (std::size_t k = 0; k < centers.count(); ++k) {
      if (hit[k]) continue;
      double d2 = sq(px - centers.xs[k]) + sq(py - centers.ys[k]);
      if (d2 <= sq(centers.stds[k])) hit[k] = 1;
    }
  }
  int n = 0;
  for (char h : hit) n += h;
  return n;
}

double high_quality_percent(const Tensor& samples, const ModeCenters& centers) {
  check_points(samples, "samples");
  std::size_t good = 0;
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    double d;
    std::size_t k = nearest_center(centers, samples(i, 0), samples(i, 1), &d);
    if (d <= 3.0 * centers.stds[k]) ++good;
  }
  return 100.0 * static_cast<double>(good) / static_cast<double>(samples.dim(0));
}

double high_quality_percent_smile(const Tensor& samples, const MixtureSpec& spec) {
  check_points(samples, "samples");
  std::size_t good = 0;
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    double d, thr;
    smile_class(spec, samples(i, 0), samples(i, 1), &d, &thr);
    if (d <= thr) ++good;
  }
  return 100.0 * static_cast<double>(good) / static_cast<double>(samples.dim(0));
}

double kl_modes(const Tensor& generated, const ModeCenters& centers, const Tensor& reference) {
  check_points(generated, "generated");
  check_points(reference, "reference");
  std::vector<double> gc(centers.count(), 0.0), rc(centers.count(), 0.0);
  for (std::size_t i = 0; i < generated.dim(0); ++i)
    gc[nearest_center(centers, generated(i, 0), generated(i, 1), nullptr)] += 1.0;
  for (std::size_t i = 0; i < reference.dim(0); ++i)
    rc[nearest_center(centers, reference(i, 0), reference(i, 1), nullptr)] += 1.0;
  return kl_from_counts(gc, static_cast<double>(generated.dim(0)), rc,
                        static_cast<double>(reference.dim(0)));
}

double kl_modes_smile(const Tensor& generated, const MixtureSpec& spec, const Tensor& reference) {
  check_points(generated, "generated");
  check_points(reference, "reference");
  std::vector<double> gc(3, 0.0), rc(3, 0.0);
  for (std::size_t i = 0; i < generated.dim(0); ++i)
    gc[smile_class(spec, generated(i, 0), generated(i, 1), nullptr, nullptr)] += 1.0;
  for (std::size_t i = 0; i < reference.dim(0); ++i)
    rc[smile_class(spec, reference(i, 0), reference(i, 1), nullptr, nullptr)] += 1.0;
  return kl_from_counts(gc, static_cast<double>(generated.dim(0)), rc,
                        static_cast<double>(reference.dim(0)));
}

int modes_captured(DatasetKind kind, const Tensor& samples) {
  return modes_captured(samples, mode_centers(kind));
}

double high_quality_percent(DatasetKind kind, const Tensor& samples) {
  if (kind == DatasetKind::Smile)
    return high_quality_percent_smile(samples, dataset_spec(kind));
  return high_quality_percent(samples, mode_centers(kind));
}

double kl_modes(DatasetKind kind, const Tensor& generated, const Tensor& reference) {
  if (kind == DatasetKind::Smile)
    return kl_modes_smile(generated, dataset_spec(kind), reference);
  return kl_modes(generated, mode_centers(kind), reference);
}

double frechet_2d(const Tensor& generated, const Tensor& reference) {
  check_points(generated, "generated");
  check_points(reference, "reference");
  if (generated.dim(0) < 2 || reference.dim(0) < 2)
    throw std::invalid_argument("frechet_2d needs at least 2 points per set");

  auto fit = [](const Tensor& pts, double mu[2], double cov[3]) {
    std::size_t n = pts.dim(0);
    mu[0] = mu[1] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mu[0] += pts(i, 0);
      mu[1] += pts(i, 1);
    }
    mu[0] /= n;
    mu[1] /= n;
    cov[0] = cov[1] = cov[2] = 0.0;  // xx, xy, yy
    for (std::size_t i = 0; i < n; ++i) {
      double dx = pts(i, 0) - mu[0], dy = pts(i, 1) - mu[1];
      cov[0] += dx * dx;
      cov[1] += dx * dy;
      cov[2] += dy * dy;
    }
    cov[0] = cov[0] / n + 1e-9;
    cov[1] = cov[1] / n;
    cov[2] = cov[2] / n + 1e-9;
  };

  double m1[2], m2[2], s1[3], s2[3];
  fit(generated, m1, s1);
  fit(reference, m2, s2);

  double mean_term = sq(m1[0] - m2[0]) + sq(m1[1] - m2[1]);
  // For a 2x2 matrix M: tr(sqrt(M)) = sqrt(tr(M) + 2 sqrt(det M)).
  // With M = S1 S2: tr(M) and det(M) = det(S1) det(S2) are available directly.
  double tr_m = s1[0] * s2[0] + 2.0 * s1[1] * s2[1] + s1[2] * s2[2];
  double det1 = s1[0] * s1[2] - s1[1] * s1[1];
  double det2 = s2[0] * s2[2] - s2[1] * s2[1];
  double det_m = std::max(det1 * det2, 0.0);
  double tr_sqrt = std::sqrt(std::max(tr_m + 2.0 * std::sqrt(det_m), 0.0));
  double cov_term = s1[0] + s1[2] + s2[0] + s2[2] - 2.0 * tr_sqrt;
  return std::max(mean_term + cov_term, 0.0);
}

}  // namespace ckgan
