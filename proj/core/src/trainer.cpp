#include "ckgan/trainer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace ckgan {

namespace {
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Large tensor buffers churn every step; keeping them on the heap instead of
// per-allocation mmap avoids refaulting zero pages.
struct AllocatorTuning {
  AllocatorTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
  }
};
const AllocatorTuning allocator_tuning;
}  // namespace

LossKind loss_from_name(const std::string& name) {
  if (name == "ckipm") return LossKind::Ckipm;
  if (name == "mmd2") return LossKind::Mmd2;
  if (name == "wgan_gp") return LossKind::WganGp;
  throw std::invalid_argument("unknown loss '" + name + "' (expected ckipm, mmd2, wgan_gp)");
}
const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::Ckipm: return "ckipm";
    case LossKind::Mmd2: return "mmd2";
    case LossKind::WganGp: return "wgan_gp";
  }
  return "?";
}
GpTarget gp_target_from_name(const std::string& name) {
  if (name == "witness") return GpTarget::Witness;
  if (name == "jacobian_fro") return GpTarget::JacobianFro;
  throw std::invalid_argument("unknown gp_target '" + name + "' (expected witness, jacobian_fro)");
}
const char* gp_target_name(GpTarget t) {
  return t == GpTarget::Witness ? "witness" : "jacobian_fro";
}

int KernelSetting::single_slot() const {
  switch (single.family) {
    case KernelFamily::Gaussian: return 0;
    case KernelFamily::Laplacian: return 1;
    case KernelFamily::RBFMixture: return 2;
    case KernelFamily::Exponential: return 3;
    case KernelFamily::Matern32: return 4;
    case KernelFamily::Matern52: return 5;
  }
  return 0;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (n_discriminator < 1) throw std::invalid_argument("n_discriminator must be >= 1");
  if (!full_batch && batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (train_size < 2) throw std::invalid_argument("train_size must be >= 2");
  if (eval_samples < 1) throw std::invalid_argument("eval_samples must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (noise_dim == 0) throw std::invalid_argument("noise_dim must be positive");
  if (kernel.use_mix) {
    for (const auto& k : kernel.mix.components) k.validate();
  } else {
    kernel.single.validate();
  }
  NetPair nets = ckgan::architecture(architecture, loss == LossKind::WganGp);
  if (loss != LossKind::WganGp && nets.discriminator.output_dim() != noise_dim)
    throw std::invalid_argument(
        "discriminator output dimension must equal the noise dimension for kernel losses");
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  NetPair nets = architecture(cfg.architecture, cfg.loss == LossKind::WganGp);
  TrainState st;
  Rng rg = Rng::stream(cfg.seed, "init.g");
  Rng rd = Rng::stream(cfg.seed, "init.d");
  st.gen = init_params(nets.generator, rg);
  st.disc = init_params(nets.discriminator, rd);
  st.xi = Tensor::zeros({kNumKernels});
  st.opt_g = RMSPropState::for_params(st.gen);
  st.opt_d = RMSPropState::for_params(st.disc);
  st.opt_xi = RMSPropState::for_tensor("xi", st.xi);
  st.noise_stream = Rng::stream(cfg.seed, "noise");
  st.gp_stream = Rng::stream(cfg.seed, "gp");
  st.batch_stream = Rng::stream(cfg.seed, "batch");
  return st;
}

Val StepGraph::row_k(Val a, Val b) {
  if (cfg->kernel.use_mix) return row_kernel_mix(tape, cfg->kernel.mix, a, b, xi);
  return row_kernel(tape, cfg->kernel.single, a, b);
}

StepGraph::StepGraph(const TrainConfig& config, TrainState& state) : cfg(&config) {
  NetPair nets = architecture(config.architecture, config.loss == LossKind::WganGp);
  gen_spec = std::move(nets.generator);
  disc_spec = std::move(nets.discriminator);
  gen = bind_params(tape, gen_spec, state.gen, "g.");
  disc = bind_params(tape, disc_spec, state.disc, "d.");
  if (config.kernel.use_mix) xi = tape.input("xi", state.xi);
}

StepGraph::StepGraph(const TrainConfig& config, TrainState& state, MLPSpec g, MLPSpec d)
    : cfg(&config) {
  gen_spec = std::move(g);
  disc_spec = std::move(d);
  gen = bind_params(tape, gen_spec, state.gen, "g.");
  disc = bind_params(tape, disc_spec, state.disc, "d.");
  if (config.kernel.use_mix) xi = tape.input("xi", state.xi);
}

namespace {

Val forward_gen(StepGraph& sg, Val z, Phase phase = Phase::Train, bool update_stats = true) {
  ForwardOptions opt;
  opt.phase = phase;
  opt.update_running_stats = update_stats;
  return mlp_forward(sg.tape, sg.gen, z, opt);
}

Val forward_disc(StepGraph& sg, Val h, Phase phase = Phase::Train, bool update_stats = true) {
  ForwardOptions opt;
  opt.phase = phase;
  opt.update_running_stats = update_stats;
  return mlp_forward(sg.tape, sg.disc, h, opt);
}

/// x_hat_i = u_i x_i + (1 - u_i) g_i, as tape nodes over constants so the
/// inner gradient with respect to x_hat stays on the tape.
Val interpolate(StepGraph& sg, const Tensor& x, const Tensor& generated, const Tensor& u) {
  Tape& t = sg.tape;
  std::size_t b = x.dim(0), m = x.dim(1);
  if (!(generated.rank() == 2 && generated.dim(0) == b && generated.dim(1) == m))
    throw TapeError("gradient penalty: real and generated batches must match");
  if (u.size() != b) throw TapeError("gradient penalty: need one interpolation weight per row");
  Val xv = t.constant(x);
  Val gv = t.constant(generated);
  Val uv = t.broadcast_cols(t.constant(u), m);
  Val one_minus = t.add_const(t.scale(uv, -1.0), 1.0);
  return t.add(t.mul(uv, xv), t.mul(one_minus, gv));
}

Val penalty_from_interpolates(StepGraph& sg, Val xhat, const Tensor& z) {
  Tape& t = sg.tape;
  const TrainConfig& cfg = *sg.cfg;
  std::size_t b = t.value(xhat).dim(0);
  Val dhat = forward_disc(sg, xhat);
  if (cfg.gp_target == GpTarget::Witness) {
    Val zc = t.constant(z);
    Val witness = sg.row_k(zc, dhat);  // [B]
    Val total = t.sum_all(witness);
    Val inner = t.gradient_as_nodes(total, {xhat})[0];
    return t.scale(t.sum_all(t.square(inner)), 1.0 / static_cast<double>(b));
  }
  // jacobian_fro: one reverse sweep per output column
  std::size_t out_dim = t.value(dhat).dim(1);
  Val acc{nullptr, -1};
  for (std::size_t j = 0; j < out_dim; ++j) {
    Tensor mask({out_dim, 1});
    mask(j, 0) = 1.0;
    Val col = t.matmul(dhat, t.constant(mask));  // [B x 1]
    Val total = t.sum_all(col);
    Val inner = t.gradient_as_nodes(total, {xhat})[0];
    Val term = t.sum_all(t.square(inner));
    acc = acc.ok() ? t.add(acc, term) : term;
  }
  return t.scale(acc, 1.0 / static_cast<double>(b));
}

}  // namespace

Val gradient_penalty(StepGraph& sg, const Tensor& x, const Tensor& generated, const Tensor& z,
                     const Tensor& u) {
  Val xhat = interpolate(sg, x, generated, u);
  return penalty_from_interpolates(sg, xhat, z);
}

DLoss ckipm_discriminator_loss(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u) {
  Tape& t = sg.tape;
  const TrainConfig& cfg = *sg.cfg;
  if (x.dim(0) != z.dim(0))
    throw TapeError("ckipm: real and noise batches must pair row by row");
  Val zv = t.constant(z);
  Val xv = t.constant(x);
  Val gz = forward_gen(sg, zv);
  Val d_gz = forward_disc(sg, gz);
  Val d_x = forward_disc(sg, xv);
  Val term_gen = t.mean_all(sg.row_k(zv, d_gz));
  Val term_real = t.mean_all(sg.row_k(zv, d_x));
  Val base = t.sub(term_gen, term_real);
  Val pen = gradient_penalty(sg, x, t.value(gz), z, u);
  DLoss out;
  out.penalty = pen;
  out.total = cfg.lambda != 0.0 ? t.add(base, t.scale(pen, cfg.lambda)) : base;
  return out;
}

Val ckipm_generator_loss(StepGraph& sg, const Tensor& z) {
  Tape& t = sg.tape;
  Val zv = t.constant(z);
  Val gz = forward_gen(sg, zv);
  Val d_gz = forward_disc(sg, gz);
  return t.scale(t.mean_all(sg.row_k(zv, d_gz)), -1.0);
}

namespace {

Val mean_gram(StepGraph& sg, Val X, Val Y) {
  Tape& t = sg.tape;
  Val k = sg.cfg->kernel.use_mix ? gram_mix(t, sg.cfg->kernel.mix, X, Y, sg.xi)
                                 : gram(t, sg.cfg->kernel.single, X, Y);
  return t.mean_all(k);
}

Val mean_gram_unbiased(StepGraph& sg, Val X) {
  // U-statistic self term: off-diagonal mean of the Gram matrix
  Tape& t = sg.tape;
  Val k = sg.cfg->kernel.use_mix ? gram_mix(t, sg.cfg->kernel.mix, X, X, sg.xi)
                                 : gram(t, sg.cfg->kernel.single, X, X);
  std::size_t n = t.value(X).dim(0);
  if (n < 2) throw TapeError("unbiased MMD estimator needs at least 2 samples per set");
  Tensor mask({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) mask(i, j) = i == j ? 0.0 : 1.0;
  Val off = t.mul(k, t.constant(mask));
  return t.scale(t.sum_all(off), 1.0 / (static_cast<double>(n) * (n - 1)));
}

}  // namespace

Val mmd2_biased(StepGraph& sg, Val X, Val Y, bool unbiased) {
  Tape& t = sg.tape;
  if (!unbiased) {
    Val kxx = mean_gram(sg, X, X);
    Val kxy = mean_gram(sg, X, Y);
    Val kyy = mean_gram(sg, Y, Y);
    return t.add(t.sub(kxx, t.scale(kxy, 2.0)), kyy);
  }
  Val kxx = mean_gram_unbiased(sg, X);
  Val kxy = mean_gram(sg, X, Y);
  Val kyy = mean_gram_unbiased(sg, Y);
  return t.add(t.sub(kxx, t.scale(kxy, 2.0)), kyy);
}

Val mmd2_biased(Tape& tape, const KernelKind& kind, Val X, Val Y, bool unbiased) {
  if (!unbiased) {
    Val kxx = tape.mean_all(gram(tape, kind, X, X));
    Val kxy = tape.mean_all(gram(tape, kind, X, Y));
    Val kyy = tape.mean_all(gram(tape, kind, Y, Y));
    return tape.add(tape.sub(kxx, tape.scale(kxy, 2.0)), kyy);
  }
  auto off_mean = [&](Val S) {
    Val k = gram(tape, kind, S, S);
    std::size_t n = tape.value(S).dim(0);
    if (n < 2) throw TapeError("unbiased MMD estimator needs at least 2 samples per set");
    Tensor mask({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mask(i, j) = i == j ? 0.0 : 1.0;
    return tape.scale(tape.sum_all(tape.mul(k, tape.constant(mask))),
                      1.0 / (static_cast<double>(n) * (n - 1)));
  };
  Val kxx_u = off_mean(X);
  Val kxy = tape.mean_all(gram(tape, kind, X, Y));
  Val kyy_u = off_mean(Y);
  return tape.add(tape.sub(kxx_u, tape.scale(kxy, 2.0)), kyy_u);
}

Val mmd_generator_loss(StepGraph& sg, const Tensor& x, const Tensor& z) {
  Tape& t = sg.tape;
  Val gz = forward_gen(sg, t.constant(z));
  Val d_x = forward_disc(sg, t.constant(x));
  Val d_gz = forward_disc(sg, gz);
  return mmd2_biased(sg, d_x, d_gz, sg.cfg->mmd_unbiased);
}

Val wgan_generator_loss(StepGraph& sg, const Tensor& z) {
  Tape& t = sg.tape;
  Val gz = forward_gen(sg, t.constant(z));
  return t.scale(t.mean_all(forward_disc(sg, gz)), -1.0);
}

MmdLosses mmd_baseline_losses(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u) {
  Tape& t = sg.tape;
  const TrainConfig& cfg = *sg.cfg;
  Val zv = t.constant(z);
  Val xv = t.constant(x);
  Val gz = forward_gen(sg, zv);
  Val d_x = forward_disc(sg, xv);
  Val d_gz = forward_disc(sg, gz);
  Val mmd2 = mmd2_biased(sg, d_x, d_gz, cfg.mmd_unbiased);
  Val pen = gradient_penalty(sg, x, t.value(gz), z, u);
  MmdLosses out;
  out.d_loss = cfg.lambda != 0.0 ? t.add(t.scale(mmd2, -1.0), t.scale(pen, cfg.lambda))
                                 : t.scale(mmd2, -1.0);
  out.g_loss = mmd2;
  return out;
}

WganLosses wgan_gp_losses(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u) {
  Tape& t = sg.tape;
  const TrainConfig& cfg = *sg.cfg;
  Val zv = t.constant(z);
  Val xv = t.constant(x);
  Val gz = forward_gen(sg, zv);
  Val d_gz = forward_disc(sg, gz);
  Val d_x = forward_disc(sg, xv);
  Val base = t.sub(t.mean_all(d_gz), t.mean_all(d_x));

  // two-sided penalty: mean (||grad_xhat D(xhat)|| - 1)^2
  Val xhat = interpolate(sg, x, t.value(gz), u);
  Val dhat = forward_disc(sg, xhat);
  Val total = t.sum_all(dhat);
  Val inner = t.gradient_as_nodes(total, {xhat})[0];
  Val slopes = t.sqrt_(t.add_const(t.sum_cols(t.square(inner)), 1e-12));
  Val pen = t.mean_all(t.square(t.add_const(slopes, -1.0)));

  WganLosses out;
  out.d_loss = cfg.lambda != 0.0 ? t.add(base, t.scale(pen, cfg.lambda)) : base;
  out.g_loss = t.scale(t.mean_all(d_gz), -1.0);
  return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> grad_names(const ModelParams& p, const std::string& prefix,
                                    bool with_xi) {
  std::vector<std::string> names;
  for (const auto& n : p.trainable) names.push_back(prefix + n);
  if (with_xi) names.push_back("xi");
  return names;
}

Tensor minibatch(const Tensor& data, long batch_size, Rng& rng) {
  std::size_t n = data.dim(0), m = data.dim(1);
  std::size_t b = static_cast<std::size_t>(batch_size);
  Tensor out({b, m});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t idx = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(n));
    if (idx >= n) idx = n - 1;
    for (std::size_t j = 0; j < m; ++j) out(i, j) = data(idx, j);
  }
  return out;
}

}  // namespace

Tensor generate_samples(const TrainConfig& cfg, TrainState& state, std::size_t n, Rng& rng) {
  Tensor z = make_noise(n, cfg.noise_dim, rng);
  StepGraph sg(cfg, state);
  Val out = forward_gen(sg, sg.tape.constant(z), Phase::Eval, false);
  return sg.tape.value(out);
}

std::array<double, 6> current_weights(const TrainConfig& cfg, const TrainState& state) {
  std::array<double, 6> w{};
  if (cfg.kernel.use_mix) {
    Tensor wt = mix_weights(cfg.kernel.mix.mode, state.xi);
    for (int i = 0; i < kNumKernels; ++i) w[i] = wt[i];
  } else {
    w[cfg.kernel.single_slot()] = 1.0;
  }
  return w;
}

MetricsReport evaluate_metrics(const TrainConfig& cfg, TrainState& state, long iteration) {
  Rng er = Rng::stream(cfg.seed, "eval", static_cast<std::uint64_t>(iteration));
  Tensor samples = generate_samples(cfg, state, static_cast<std::size_t>(cfg.eval_samples), er);
  Rng rr = Rng::stream(cfg.seed, "eval-ref");
  Tensor reference =
      sample_dataset(cfg.dataset, static_cast<std::size_t>(cfg.eval_samples), rr);

  MetricsReport r;
  r.iteration = iteration;
  r.modes_captured = modes_captured(cfg.dataset, samples);
  r.hq_percent = high_quality_percent(cfg.dataset, samples);
  r.kl = kl_modes(cfg.dataset, samples, reference);
  r.loss_d = state.last_loss_d;
  r.loss_g = state.last_loss_g;
  r.xi = current_weights(cfg, state);
  r.wall_seconds = state.train_seconds;
  return r;
}

TrainOutput train(const TrainConfig& cfg, const TrainHooks& hooks, TrainState* resume) {
  cfg.validate();
  TrainOutput out;
  out.state = resume ? *resume : init_train_state(cfg);
  TrainState& st = out.state;

  Rng data_rng = Rng::stream(cfg.seed, "data");
  Tensor train_data =
      sample_dataset(cfg.dataset, static_cast<std::size_t>(cfg.train_size), data_rng);

  bool with_xi = cfg.kernel.use_mix;
  auto emit_report = [&](long iter) {
    MetricsReport r = evaluate_metrics(cfg, st, iter);
    out.reports.push_back(r);
    if (hooks.on_report) hooks.on_report(r);
  };

  // initial losses for the iteration-0 report (no parameter or stat updates)
  if (st.iteration == 0) {
    try {
      Rng probe = Rng::stream(cfg.seed, "probe");
      long b = cfg.full_batch ? cfg.train_size : cfg.batch_size;
      Tensor z = make_noise(static_cast<std::size_t>(b), cfg.noise_dim, probe);
      Tensor x = cfg.full_batch ? train_data : minibatch(train_data, b, probe);
      Tensor u({static_cast<std::size_t>(b)});
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = probe.uniform01();
      TrainState scratch = st;  // keep running stats untouched
      StepGraph sg(cfg, scratch);
      if (cfg.loss == LossKind::Ckipm) {
        DLoss dl = ckipm_discriminator_loss(sg, x, z, u);
        st.last_loss_d = sg.tape.value(dl.total).item();
        st.last_loss_g = sg.tape.value(ckipm_generator_loss(sg, z)).item();
      } else if (cfg.loss == LossKind::Mmd2) {
        MmdLosses ml = mmd_baseline_losses(sg, x, z, u);
        st.last_loss_d = sg.tape.value(ml.d_loss).item();
        st.last_loss_g = sg.tape.value(ml.g_loss).item();
      } else {
        WganLosses wl = wgan_gp_losses(sg, x, z, u);
        st.last_loss_d = sg.tape.value(wl.d_loss).item();
        st.last_loss_g = sg.tape.value(wl.g_loss).item();
      }
    } catch (const TapeError& e) {
      throw TrainError(e.what(), 0, "initial loss evaluation");
    }
    emit_report(0);
  }

  long target = cfg.iterations;
  while (st.iteration < target) {
    long iter = st.iteration + 1;
    st.xi_updates_last_iter = 0;
    auto t0 = Clock::now();

    // discriminator phase
    for (int dstep = 0; dstep < cfg.n_discriminator; ++dstep) {
      long b = cfg.full_batch ? cfg.train_size : cfg.batch_size;
      Tensor z = make_noise(static_cast<std::size_t>(b), cfg.noise_dim, st.noise_stream);
      Tensor x = cfg.full_batch ? train_data : minibatch(train_data, b, st.batch_stream);
      Tensor u({static_cast<std::size_t>(b)});
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = st.gp_stream.uniform01();

      try {
        StepGraph sg(cfg, st);
        Val d_loss{nullptr, -1};
        if (cfg.loss == LossKind::Ckipm) {
          d_loss = ckipm_discriminator_loss(sg, x, z, u).total;
        } else if (cfg.loss == LossKind::Mmd2) {
          d_loss = mmd_baseline_losses(sg, x, z, u).d_loss;
        } else {
          d_loss = wgan_gp_losses(sg, x, z, u).d_loss;
        }
        st.last_loss_d = sg.tape.value(d_loss).item();
        GradMap grads = sg.tape.gradient(d_loss, grad_names(st.disc, "d.", with_xi));
        rmsprop_step(st.opt_d, st.disc, grads, cfg.learning_rate, "d.");
        if (with_xi) {
          rmsprop_apply(st.opt_xi, "xi", st.xi, grads.at("xi"), cfg.learning_rate);
          ++st.xi_updates_last_iter;
        }
      } catch (const TapeError& e) {
        throw TrainError(e.what(), iter, "discriminator loss");
      }
    }

    // generator phase
    {
      long b = cfg.full_batch ? cfg.train_size : cfg.batch_size;
      Tensor z = make_noise(static_cast<std::size_t>(b), cfg.noise_dim, st.noise_stream);
      try {
        StepGraph sg(cfg, st);
        Val g_loss{nullptr, -1};
        if (cfg.loss == LossKind::Ckipm) {
          g_loss = ckipm_generator_loss(sg, z);
        } else if (cfg.loss == LossKind::Mmd2) {
          Tensor x = cfg.full_batch ? train_data : minibatch(train_data, b, st.batch_stream);
          g_loss = mmd_generator_loss(sg, x, z);
        } else {
          g_loss = wgan_generator_loss(sg, z);
        }
        st.last_loss_g = sg.tape.value(g_loss).item();
        GradMap grads = sg.tape.gradient(g_loss, grad_names(st.gen, "g.", with_xi));
        rmsprop_step(st.opt_g, st.gen, grads, cfg.learning_rate, "g.");
        if (with_xi) {
          rmsprop_apply(st.opt_xi, "xi", st.xi, grads.at("xi"), cfg.learning_rate);
          ++st.xi_updates_last_iter;
        }
      } catch (const TapeError& e) {
        throw TrainError(e.what(), iter, "generator loss");
      }
    }

    st.train_seconds += seconds_since(t0);
    st.iteration = iter;

    if (iter == target || iter % cfg.eval_every == 0) emit_report(iter);
    if (hooks.on_checkpoint &&
        ((cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) || iter == target))
      hooks.on_checkpoint(st, iter);
  }
  return out;
}

}  // namespace ckgan
