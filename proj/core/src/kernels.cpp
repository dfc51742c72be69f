#include "ckgan/kernels.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace ckgan {

namespace {
constexpr double kSqrt3 = 1.7320508075688772935;
constexpr double kSqrt5 = 2.2360679774997896964;
constexpr double kL2Eps = 1e-12;  // under the square root, removes the kink at x == y
}

const char* kernel_family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::Laplacian: return "laplacian";
    case KernelFamily::RBFMixture: return "rbf_mixture";
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::Matern52: return "matern52";
  }
  return "?";
}

KernelKind KernelKind::gaussian(double sigma) {
  KernelKind k;
  k.family = KernelFamily::Gaussian;
  k.sigma = sigma;
  k.validate();
  return k;
}
KernelKind KernelKind::laplacian(double sigma) {
  KernelKind k;
  k.family = KernelFamily::Laplacian;
  k.sigma = sigma;
  k.validate();
  return k;
}
KernelKind KernelKind::rbf_mixture(std::vector<double> sigmas) {
  KernelKind k;
  k.family = KernelFamily::RBFMixture;
  k.sigmas = std::move(sigmas);
  k.validate();
  return k;
}
KernelKind KernelKind::exponential(double sigma) {
  KernelKind k;
  k.family = KernelFamily::Exponential;
  k.sigma = sigma;
  k.validate();
  return k;
}
KernelKind KernelKind::matern32(double alpha, double length) {
  KernelKind k;
  k.family = KernelFamily::Matern32;
  k.alpha = alpha;
  k.length = length;
  k.validate();
  return k;
}
KernelKind KernelKind::matern52(double alpha, double length) {
  KernelKind k;
  k.family = KernelFamily::Matern52;
  k.alpha = alpha;
  k.length = length;
  k.validate();
  return k;
}

void KernelKind::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0))
      throw std::invalid_argument(std::string("kernel parameter ") + what + " must be positive");
  };
  switch (family) {
    case KernelFamily::Gaussian:
    case KernelFamily::Laplacian:
    case KernelFamily::Exponential:
      positive(sigma, "sigma");
      break;
    case KernelFamily::RBFMixture:
      if (sigmas.empty()) throw std::invalid_argument("rbf mixture needs at least one sigma");
      for (double s : sigmas) positive(s, "sigma");
      break;
    case KernelFamily::Matern32:
    case KernelFamily::Matern52:
      positive(alpha, "alpha");
      positive(length, "length");
      break;
  }
}

double KernelKind::bound() const {
  switch (family) {
    case KernelFamily::RBFMixture: return static_cast<double>(sigmas.size());
    case KernelFamily::Matern32:
    case KernelFamily::Matern52: return alpha;
    default: return 1.0;
  }
}

KernelMix KernelMix::standard(SelectionMode mode) {
  KernelMix m;
  m.components = {KernelKind::gaussian(),   KernelKind::laplacian(),
                  KernelKind::rbf_mixture(), KernelKind::exponential(),
                  KernelKind::matern32(),    KernelKind::matern52()};
  m.mode = mode;
  return m;
}

namespace {

// Distances shared by the kernel formulas, built lazily so each form (paired
// rows, single pair, Gram matrix) provides its own reduction.
struct Dists {
  Tape* tape;
  std::function<Val()> make_d2;  // squared L2
  std::function<Val()> make_l1;
  Val d2{nullptr, -1}, l1{nullptr, -1}, l2{nullptr, -1};

  Val sq() {
    if (!d2.ok()) d2 = make_d2();
    return d2;
  }
  Val manhattan() {
    if (!l1.ok()) l1 = make_l1();
    return l1;
  }
  Val euclid() {
    if (!l2.ok()) l2 = tape->sqrt_(tape->add_const(sq(), kL2Eps));
    return l2;
  }
};

Val kernel_from_dists(Tape& t, const KernelKind& kind, Dists& d) {
  kind.validate();
  switch (kind.family) {
    case KernelFamily::Gaussian:
      return t.exp_(t.scale(d.sq(), -1.0 / (2.0 * kind.sigma * kind.sigma)));
    case KernelFamily::Laplacian:
      return t.exp_(t.scale(d.manhattan(), -1.0 / kind.sigma));
    case KernelFamily::RBFMixture: {
      Val acc{nullptr, -1};
      for (double s : kind.sigmas) {
        Val term = t.exp_(t.scale(d.sq(), -1.0 / (2.0 * s * s)));
        acc = acc.ok() ? t.add(acc, term) : term;
      }
      return acc;
    }
    case KernelFamily::Exponential:
      return t.exp_(t.scale(d.euclid(), -1.0 / kind.sigma));
    case KernelFamily::Matern32: {
      Val r = t.scale(d.euclid(), 1.0 / kind.length);
      Val poly = t.add_const(t.scale(r, kSqrt3), 1.0);
      return t.scale(t.mul(poly, t.exp_(t.scale(r, -kSqrt3))), kind.alpha);
    }
    case KernelFamily::Matern52: {
      Val r = t.scale(d.euclid(), 1.0 / kind.length);
      Val poly = t.add(t.add_const(t.scale(r, kSqrt5), 1.0), t.scale(t.square(r), 5.0 / 3.0));
      return t.scale(t.mul(poly, t.exp_(t.scale(r, -kSqrt5))), kind.alpha);
    }
  }
  throw std::logic_error("unknown kernel family");
}

Dists row_dists(Tape& t, Val x, Val y) {
  const Tensor& xv = t.value(x);
  const Tensor& yv = t.value(y);
  if (xv.rank() != 2 || yv.rank() != 2 || xv.dim(1) != yv.dim(1) || xv.dim(0) != yv.dim(0))
    throw TapeError("row kernel requires equal [B x m] operands, got " +
                    shape_str(xv.shape()) + " and " + shape_str(yv.shape()));
  return Dists{&t,
               [&t, x, y] { return t.sum_cols(t.square(t.sub(x, y))); },
               [&t, x, y] { return t.sum_cols(t.abs_(t.sub(x, y))); }};
}

Dists pair_dists(Tape& t, Val x, Val y) {
  const Tensor& xv = t.value(x);
  const Tensor& yv = t.value(y);
  if (xv.rank() != 1 || yv.rank() != 1 || xv.size() != yv.size())
    throw TapeError("kernel eval requires equal rank-1 operands, got " +
                    shape_str(xv.shape()) + " and " + shape_str(yv.shape()));
  return Dists{&t,
               [&t, x, y] { return t.sum_all(t.square(t.sub(x, y))); },
               [&t, x, y] { return t.sum_all(t.abs_(t.sub(x, y))); }};
}

Dists gram_dists(Tape& t, Val X, Val Y) {
  return Dists{&t,
               [&t, X, Y] { return t.pairwise_sqdist(X, Y); },
               [&t, X, Y] { return t.pairwise_l1(X, Y); }};
}

Val mix_from_dists(Tape& t, const KernelMix& mix, Dists& d, Val logits) {
  Val w = mix_weights_node(t, mix.mode, logits);
  Val acc{nullptr, -1};
  for (int i = 0; i < kNumKernels; ++i) {
    Val ki = kernel_from_dists(t, mix.components[i], d);
    Val wi = t.index(w, static_cast<std::size_t>(i));
    const Shape& ks = t.value(ki).shape();
    Val term = ks.empty() ? t.mul(wi, ki) : t.mul(t.broadcast_full(wi, ks), ki);
    acc = acc.ok() ? t.add(acc, term) : term;
  }
  return acc;
}

}  // namespace

Val mix_weights_node(Tape& tape, SelectionMode mode, Val logits) {
  const Tensor& lv = tape.value(logits);
  if (lv.rank() != 1 || lv.size() != kNumKernels)
    throw TapeError("selection logits must be a vector of length " + std::to_string(kNumKernels));
  switch (mode) {
    case SelectionMode::Soft:
      return tape.softmax(logits);
    case SelectionMode::DirectLinear: {
      Val r = tape.relu(logits);
      double total = 0.0;
      for (std::size_t i = 0; i < tape.value(r).size(); ++i) total += tape.value(r)[i];
      if (total <= 0.0)
        return tape.constant(Tensor::full({kNumKernels}, 1.0 / kNumKernels));
      Val s = tape.sum_all(r);
      return tape.div(r, tape.broadcast_full(s, {kNumKernels}));
    }
    case SelectionMode::OneHot:
      return tape.argmax_onehot(logits);
  }
  throw std::logic_error("unknown selection mode");
}

Tensor mix_weights(SelectionMode mode, const Tensor& logits) {
  Tape t;
  Val l = t.constant(logits);
  return t.value(mix_weights_node(t, mode, l));
}

Val row_kernel(Tape& tape, const KernelKind& kind, Val x, Val y) {
  Dists d = row_dists(tape, x, y);
  return kernel_from_dists(tape, kind, d);
}

Val row_kernel_mix(Tape& tape, const KernelMix& mix, Val x, Val y, Val logits) {
  Dists d = row_dists(tape, x, y);
  return mix_from_dists(tape, mix, d, logits);
}

Val kernel_eval(Tape& tape, const KernelKind& kind, Val x, Val y) {
  Dists d = pair_dists(tape, x, y);
  return kernel_from_dists(tape, kind, d);
}

Val kernel_eval_mix(Tape& tape, const KernelMix& mix, Val x, Val y, Val logits) {
  Dists d = pair_dists(tape, x, y);
  return mix_from_dists(tape, mix, d, logits);
}

Val gram(Tape& tape, const KernelKind& kind, Val X, Val Y) {
  Dists d = gram_dists(tape, X, Y);
  return kernel_from_dists(tape, kind, d);
}

Val gram_mix(Tape& tape, const KernelMix& mix, Val X, Val Y, Val logits) {
  Dists d = gram_dists(tape, X, Y);
  return mix_from_dists(tape, mix, d, logits);
}

}  // namespace ckgan
