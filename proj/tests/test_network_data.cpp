#include <doctest.h>

#include <cmath>

#include "ckgan/data.hpp"
#include "ckgan/metrics.hpp"
#include "ckgan/network.hpp"
#include "ckgan/optim.hpp"

using namespace ckgan;

namespace {

MLPSpec tiny_spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                  bool with_bn) {
  MLPSpec s;
  s.name = "tiny";
  s.input_dim = in;
  for (std::size_t w : hidden) {
    s.layers.push_back({LayerKind::Dense, w});
    if (with_bn) s.layers.push_back({LayerKind::BatchNorm, 0});
    s.layers.push_back({LayerKind::Relu, 0});
  }
  s.layers.push_back({LayerKind::Dense, out});
  return s;
}

}  // namespace

TEST_CASE("init: batch norm starts at gamma 1, beta 0; dense weights bounded") {
  MLPSpec spec = tiny_spec(2, {1024}, 2, true);
  Rng rng(3);
  ModelParams p = init_params(spec, rng);
  const Tensor& gamma = p.at("l1.gamma");
  const Tensor& beta = p.at("l1.beta");
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    CHECK(gamma[i] == 1.0);
    CHECK(beta[i] == 0.0);
  }
  double bound = std::sqrt(6.0 / (2 + 1024));
  const Tensor& w = p.at("l0.W");
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i] <= bound);
    CHECK(w[i] >= -bound);
  }
  CHECK(p.at("l1.running_var")[0] == 1.0);
}

TEST_CASE("init: same seed gives bitwise identical parameters") {
  MLPSpec spec = tiny_spec(2, {32, 32}, 2, true);
  Rng r1(99), r2(99);
  ModelParams a = init_params(spec, r1);
  ModelParams b = init_params(spec, r2);
  for (const auto& name : a.order)
    for (std::size_t i = 0; i < a.at(name).size(); ++i)
      CHECK(a.at(name)[i] == b.at(name)[i]);
}

TEST_CASE("forward: single dense layer matches a hand matrix product") {
  MLPSpec s;
  s.input_dim = 2;
  s.layers.push_back({LayerKind::Dense, 2});
  Rng rng(1);
  ModelParams p = init_params(s, rng);
  p.at("l0.W") = Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0});
  p.at("l0.b") = Tensor({2}, {0.5, -0.5});
  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  Val out = mlp_forward(t, net, t.constant(Tensor({1, 2}, {1.0, 0.0})));
  CHECK(t.value(out)(0, 0) == doctest::Approx(1.5));   // 1*1 + 0*3 + 0.5
  CHECK(t.value(out)(0, 1) == doctest::Approx(1.5));   // 1*2 + 0*4 - 0.5
}

TEST_CASE("batch norm: identical rows collapse to beta in train phase") {
  MLPSpec s;
  s.input_dim = 3;
  s.layers.push_back({LayerKind::BatchNorm, 0});
  Rng rng(2);
  ModelParams p = init_params(s, rng);
  p.at("l0.beta") = Tensor({3}, {0.7, -0.2, 0.0});
  Tensor batch({4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) batch(i, j) = 1.0 + j;
  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  Val out = mlp_forward(t, net, t.constant(batch));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(t.value(out)(i, j) == doctest::Approx(p.at("l0.beta")[j]).epsilon(1e-12));
}

TEST_CASE("batch norm: train-phase statistics are standardized") {
  MLPSpec s;
  s.input_dim = 2;
  s.layers.push_back({LayerKind::BatchNorm, 0});
  Rng rng(4);
  ModelParams p = init_params(s, rng);
  Tensor batch({64, 2});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform(-10, 10);  // var >> eps
  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  Val out = mlp_forward(t, net, t.constant(batch));
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 64; ++i) mean += t.value(out)(i, j);
    mean /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (t.value(out)(i, j) - mean) * (t.value(out)(i, j) - mean);
    var /= 64;
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("batch norm: B < 2 in train phase raises") {
  MLPSpec s = tiny_spec(2, {4}, 2, true);
  Rng rng(5);
  ModelParams p = init_params(s, rng);
  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  CHECK_THROWS_AS(mlp_forward(t, net, t.constant(Tensor({1, 2}, {0.1, 0.2}))), TapeError);
}

TEST_CASE("eval phase: per-row output independent of the rest of the batch") {
  MLPSpec s = tiny_spec(2, {16}, 2, true);
  Rng rng(6);
  ModelParams p = init_params(s, rng);
  // push running stats off their init values
  p.at("l1.running_mean") = Tensor({16}, std::vector<double>(16, 0.3));
  p.at("l1.running_var") = Tensor({16}, std::vector<double>(16, 2.0));

  Tensor batch({5, 2});
  Rng r2(7);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = r2.uniform(-1, 1);

  ForwardOptions eval_opt;
  eval_opt.phase = Phase::Eval;

  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  Val full = mlp_forward(t, net, t.constant(batch), eval_opt);

  for (std::size_t i = 0; i < 5; ++i) {
    Tape ti;
    BoundNet ni = bind_params(ti, s, p, "");
    Tensor row({1, 2}, {batch(i, 0), batch(i, 1)});
    Val single = mlp_forward(ti, ni, ti.constant(row), eval_opt);
    // row outputs depend on row i alone; GEMM vectorization may round
    // differently across batch sizes, so compare to tight tolerance
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(ti.value(single)(0, j) ==
            doctest::Approx(t.value(full)(i, j)).epsilon(1e-12));
  }
}

TEST_CASE("positive homogeneity in the final dense weights") {
  MLPSpec s = tiny_spec(2, {8}, 2, true);  // relu net, no tanh
  Rng rng(8);
  ModelParams p = init_params(s, rng);
  Tensor batch({4, 2});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform(-1, 1);

  Tape t1;
  BoundNet n1 = bind_params(t1, s, p, "");
  Tensor out1 = t1.value(mlp_forward(t1, n1, t1.constant(batch)));

  ModelParams p2 = p;
  Tensor& w = p2.at("l3.W");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= 3.0;
  Tensor& b = p2.at("l3.b");
  for (std::size_t i = 0; i < b.size(); ++i) b[i] *= 3.0;
  Tape t2;
  BoundNet n2 = bind_params(t2, s, p2, "");
  Tensor out2 = t2.value(mlp_forward(t2, n2, t2.constant(batch)));
  for (std::size_t i = 0; i < out1.size(); ++i)
    CHECK(out2[i] == doctest::Approx(3.0 * out1[i]).epsilon(1e-10));
}

TEST_CASE("running statistics update with momentum and drive eval") {
  MLPSpec s;
  s.input_dim = 2;
  s.layers.push_back({LayerKind::BatchNorm, 0});
  Rng rng(9);
  ModelParams p = init_params(s, rng);
  Tensor batch({8, 2});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform(-2, 2);

  double mu0 = 0;
  for (std::size_t i = 0; i < 8; ++i) mu0 += batch(i, 0);
  mu0 /= 8;

  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  mlp_forward(t, net, t.constant(batch));
  CHECK(p.at("l0.running_mean")[0] == doctest::Approx(0.99 * 0.0 + 0.01 * mu0).epsilon(1e-12));
}

TEST_CASE("rmsprop: one closed-form step") {
  ModelParams p;
  p.add("w", Tensor::scalar(1.0), true);
  RMSPropState st = RMSPropState::for_params(p);
  GradMap g;
  g["w"] = Tensor::scalar(1.0);
  rmsprop_step(st, p, g, 1e-4);
  CHECK(st.accum.at("w").item() == doctest::Approx(0.01).epsilon(1e-15));
  double want = 1.0 - 1e-4 / (std::sqrt(0.01) + 1e-8);
  CHECK(p.at("w").item() == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("rmsprop: zero gradient decays accumulators and fixes parameters") {
  ModelParams p;
  p.add("w", Tensor({2}, {1.0, -2.0}), true);
  RMSPropState st = RMSPropState::for_params(p);
  st.accum.at("w") = Tensor({2}, {0.5, 0.25});
  GradMap g;
  g["w"] = Tensor({2});
  rmsprop_step(st, p, g, 1e-4);
  CHECK(p.at("w")[0] == 1.0);
  CHECK(p.at("w")[1] == -2.0);
  CHECK(st.accum.at("w")[0] == doctest::Approx(0.495).epsilon(1e-15));
  CHECK(st.accum.at("w")[1] == doctest::Approx(0.2475).epsilon(1e-15));
}

TEST_CASE("rmsprop: identical histories give identical updates; lr 0 is identity") {
  ModelParams p;
  p.add("a", Tensor::scalar(0.7), true);
  p.add("b", Tensor::scalar(0.7), true);
  RMSPropState st = RMSPropState::for_params(p);
  for (int step = 0; step < 5; ++step) {
    GradMap g;
    g["a"] = Tensor::scalar(0.3 * step);
    g["b"] = Tensor::scalar(0.3 * step);
    rmsprop_step(st, p, g, 1e-3);
  }
  CHECK(p.at("a").item() == p.at("b").item());

  ModelParams q;
  q.add("w", Tensor::scalar(2.0), true);
  RMSPropState st2 = RMSPropState::for_params(q);
  GradMap g;
  g["w"] = Tensor::scalar(5.0);
  rmsprop_step(st2, q, g, 0.0);
  CHECK(q.at("w").item() == 2.0);
}

TEST_CASE("rmsprop: shape mismatch raises") {
  ModelParams p;
  p.add("w", Tensor({2}), true);
  RMSPropState st = RMSPropState::for_params(p);
  GradMap g;
  g["w"] = Tensor({3});
  CHECK_THROWS_AS(rmsprop_step(st, p, g, 1e-4), std::invalid_argument);
}

TEST_CASE("double backprop through a dense-bn-relu discriminator matches finite differences") {
  MLPSpec s = tiny_spec(2, {8}, 2, true);
  Rng rng(31);
  ModelParams p = init_params(s, rng);
  Tensor x({4, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.5, 1.5);

  Tape t;
  BoundNet net = bind_params(t, s, p, "");
  ForwardOptions opt;
  opt.update_running_stats = false;
  Val xin = t.input("xin", x);
  Val out = mlp_forward(t, net, xin, opt);
  Val total = t.sum_all(out);
  Val inner = t.gradient_as_nodes(total, {xin})[0];
  Val pen = t.mean_all(t.sum_cols(t.square(inner)));

  std::vector<std::string> names;
  for (const auto& n : p.trainable) names.push_back(n);
  GradMap gm = t.gradient(pen, names);

  double h = 1e-5;
  for (const auto& name : p.trainable) {
    Tensor& w = p.at(name);
    std::size_t stride = std::max<std::size_t>(1, w.size() / 4);
    for (std::size_t k = 0; k < w.size(); k += stride) {
      double keep = w[k];
      w[k] = keep + h;
      ModelParams pu = p;
      Tape tu;
      BoundNet nu = bind_params(tu, s, pu, "");
      Val xu = tu.input("xin", x);
      Val ou = mlp_forward(tu, nu, xu, opt);
      Val iu = tu.gradient_as_nodes(tu.sum_all(ou), {xu})[0];
      double fup = tu.value(tu.mean_all(tu.sum_cols(tu.square(iu)))).item();

      w[k] = keep - h;
      ModelParams pd = p;
      Tape td;
      BoundNet ndn = bind_params(td, s, pd, "");
      Val xd = td.input("xin", x);
      Val od = mlp_forward(td, ndn, xd, opt);
      Val idn = td.gradient_as_nodes(td.sum_all(od), {xd})[0];
      double fdn = td.value(td.mean_all(td.sum_cols(td.square(idn)))).item();

      w[k] = keep;
      double fd = (fup - fdn) / (2 * h);
      double ad = gm.at(name)[k];
      INFO("param ", name, "[", k, "] ad=", ad, " fd=", fd);
      CHECK(std::fabs(ad - fd) / std::max({std::fabs(fd), std::fabs(ad), 1e-6}) < 1e-3);
    }
  }
}

TEST_CASE("architectures match their tables") {
  NetPair main_nets = architecture("main");
  CHECK(main_nets.generator.output_dim() == 2);
  CHECK(main_nets.discriminator.output_dim() == 2);
  int g_dense = 0, d_dense = 0;
  for (auto& l : main_nets.generator.layers)
    if (l.kind == LayerKind::Dense) ++g_dense;
  for (auto& l : main_nets.discriminator.layers)
    if (l.kind == LayerKind::Dense) ++d_dense;
  CHECK(g_dense == 4);  // 1024, 1024, 1024, 2
  CHECK(d_dense == 3);  // 1024, 1024, 2
  CHECK(main_nets.generator.layers[0].width == 1024);

  CHECK(architecture("simple-ring").generator.layers[0].width == 64);
  CHECK(architecture("simple-grid").generator.layers[0].width == 1024);
  CHECK(architecture("simple-smile").generator.layers[0].width == 32);
  CHECK(architecture("main", true).discriminator.output_dim() == 1);  // scalar critic
  CHECK_THROWS_AS(architecture("nope"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

TEST_CASE("ring centers: radius 1, first at (1,0), stds 1e-4") {
  ModeCenters mc = mode_centers(DatasetKind::Ring);
  REQUIRE(mc.count() == 8);
  CHECK(mc.xs[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mc.ys[0] == doctest::Approx(0.0).epsilon(1e-15));
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::fabs(std::sqrt(mc.xs[i] * mc.xs[i] + mc.ys[i] * mc.ys[i]) - 1.0) < 1e-12);
    CHECK(mc.stds[i] == 1e-4);
  }
}

TEST_CASE("grid centers: 25 points including the corners") {
  ModeCenters mc = mode_centers(DatasetKind::Grid);
  REQUIRE(mc.count() == 25);
  bool has_low = false, has_high = false;
  for (std::size_t i = 0; i < 25; ++i) {
    if (mc.xs[i] == -4.0 && mc.ys[i] == -4.0) has_low = true;
    if (mc.xs[i] == 4.0 && mc.ys[i] == 4.0) has_high = true;
    CHECK(mc.stds[i] == 0.005);
  }
  CHECK(has_low);
  CHECK(has_high);
}

TEST_CASE("smile eyes at (+-0.4, 0.3) with std sqrt(0.001)") {
  ModeCenters mc = mode_centers(DatasetKind::Smile);
  REQUIRE(mc.count() == 2);
  CHECK(mc.xs[0] == -0.4);
  CHECK(mc.ys[0] == 0.3);
  CHECK(mc.xs[1] == 0.4);
  CHECK(mc.ys[1] == 0.3);
  CHECK(mc.stds[0] == doctest::Approx(std::sqrt(0.001)).epsilon(1e-15));
}

TEST_CASE("ring sampling: balanced modes and tight spread") {
  Rng rng(123);
  const std::size_t n = 8000;
  Tensor s = sample_dataset(DatasetKind::Ring, n, rng);
  ModeCenters mc = mode_centers(DatasetKind::Ring);

  std::vector<int> counts(8, 0);
  std::size_t close_enough = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = 1e18;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      double d2 = (s(i, 0) - mc.xs[k]) * (s(i, 0) - mc.xs[k]) +
                  (s(i, 1) - mc.ys[k]) * (s(i, 1) - mc.ys[k]);
      if (d2 < best) {
        best = d2;
        arg = k;
      }
    }
    counts[arg]++;
    if (std::sqrt(best) <= 5 * mc.stds[arg]) ++close_enough;
  }
  double expect = n / 8.0;
  double slack = 3 * std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (int c : counts) CHECK(std::fabs(c - expect) <= slack);
  CHECK(static_cast<double>(close_enough) / n >= 0.999);
}

TEST_CASE("grid sampling with n=25 stays inside [-4.1, 4.1]^2") {
  Rng rng(7);
  Tensor s = sample_dataset(DatasetKind::Grid, 25, rng);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(std::fabs(s(i, 0)) <= 4.1);
    CHECK(std::fabs(s(i, 1)) <= 4.1);
  }
}

TEST_CASE("smile sampling: every point close to an eye or the arc") {
  Rng rng(8);
  MixtureSpec spec = dataset_spec(DatasetKind::Smile);
  Tensor s = sample_mixture(spec, 4000, rng);
  double eye_std = std::sqrt(0.001);
  for (std::size_t i = 0; i < s.dim(0); ++i) {
    double d0 = std::hypot(s(i, 0) + 0.4, s(i, 1) - 0.3);
    double d1 = std::hypot(s(i, 0) - 0.4, s(i, 1) - 0.3);
    double da = arc_distance(spec.arc, s(i, 0), s(i, 1));
    bool near_eye = std::min(d0, d1) <= 6 * eye_std;
    bool near_arc = da <= 6 * spec.arc.jitter_std;
    CHECK((near_eye || near_arc));
  }
}

TEST_CASE("noise: support, mean, determinism") {
  Rng rng(9);
  Tensor z = make_noise(100000, 2, rng);
  double mean = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    CHECK(z[i] >= -1.0);
    CHECK(z[i] <= 1.0);
    mean += z[i];
  }
  mean /= static_cast<double>(z.size());
  CHECK(std::fabs(mean) < 0.02);

  Rng ra(55), rb(55);
  Tensor za = make_noise(64, 2, ra), zb = make_noise(64, 2, rb);
  for (std::size_t i = 0; i < za.size(); ++i) CHECK(za[i] == zb[i]);
}

TEST_CASE("dataset sampling is reproducible from the seed") {
  Rng ra(2024), rb(2024);
  Tensor a = sample_dataset(DatasetKind::Smile, 500, ra);
  Tensor b = sample_dataset(DatasetKind::Smile, 500, rb);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("mixture weights must sum to one") {
  MixtureSpec bad;
  bad.gaussians.push_back({0, 0, 1.0, 0.6});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
