#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ckgan/data.hpp"
#include "ckgan/kernels.hpp"
#include "ckgan/metrics.hpp"
#include "ckgan/network.hpp"
#include "ckgan/optim.hpp"

namespace ckgan {

enum class LossKind { Ckipm, Mmd2, WganGp };
enum class GpTarget { Witness, JacobianFro };

LossKind loss_from_name(const std::string& name);
const char* loss_name(LossKind k);
GpTarget gp_target_from_name(const std::string& name);
const char* gp_target_name(GpTarget t);

/// Kernel selection for a run: either one fixed kernel or the learned
/// soft-selection mix.
struct KernelSetting {
  bool use_mix = false;
  KernelKind single = KernelKind::gaussian();
  KernelMix mix = KernelMix::standard();

  /// Canonical slot of the single kernel in the six-kernel order, used to
  /// report an indicator weight vector for fixed-kernel runs.
  int single_slot() const;
};

struct TrainConfig {
  DatasetKind dataset = DatasetKind::Ring;
  std::string architecture = "main";
  LossKind loss = LossKind::Ckipm;
  KernelSetting kernel;
  double lambda = 10.0;
  double learning_rate = 1e-4;
  int n_discriminator = 5;
  long batch_size = 64;
  bool full_batch = true;
  long iterations = 600;
  GpTarget gp_target = GpTarget::Witness;
  long eval_every = 100;
  std::uint64_t seed = 0;
  long train_size = 500;
  long eval_samples = 2500;
  bool mmd_unbiased = false;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  std::size_t noise_dim = 2;

  void validate() const;  // throws std::invalid_argument
};

struct TrainState {
  ModelParams gen, disc;
  Tensor xi = Tensor::zeros({kNumKernels});
  RMSPropState opt_g, opt_d, opt_xi;
  long iteration = 0;
  Rng noise_stream, gp_stream, batch_stream;
  long xi_updates_last_iter = 0;
  double train_seconds = 0.0;
  double last_loss_d = 0.0, last_loss_g = 0.0;
};

TrainState init_train_state(const TrainConfig& cfg);

/// One optimization step's graph: a fresh tape with both networks (and the
/// selection logits, when the mix is active) bound as inputs. Pinned in place
/// because node handles point back at the tape.
struct StepGraph {
  StepGraph(const TrainConfig& cfg, TrainState& state);
  /// Binds caller-supplied network specs instead of the named architecture
  /// (used by tests that pin exact weights).
  StepGraph(const TrainConfig& cfg, TrainState& state, MLPSpec gen, MLPSpec disc);
  StepGraph(const StepGraph&) = delete;
  StepGraph& operator=(const StepGraph&) = delete;

  Tape tape;
  MLPSpec gen_spec, disc_spec;
  BoundNet gen, disc;
  Val xi{nullptr, -1};
  const TrainConfig* cfg = nullptr;

  Val row_k(Val a, Val b);  // configured kernel, row-paired
};

// ---- loss builders (also the test surface) ----

/// mean_i [ k(z_i, D(G(z_i))) - k(z_i, D(x_i)) ] + lambda * GP
struct DLoss {
  Val total;
  Val penalty;  // GP term before lambda scaling
};
DLoss ckipm_discriminator_loss(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u);

/// -mean_i k(z_i, D(G(z_i)))
Val ckipm_generator_loss(StepGraph& sg, const Tensor& z);

/// Gradient penalty at per-row interpolates x_hat = u x + (1-u) g.
/// witness: mean_i ||d/dx_hat k(z_i, D(x_hat_i))||^2 (gradient of the summed
/// witness, the usual convention when batch norm couples rows);
/// jacobian_fro: mean squared Frobenius norm of dD(x_hat)/dx_hat.
Val gradient_penalty(StepGraph& sg, const Tensor& x, const Tensor& generated, const Tensor& z,
                     const Tensor& u);

/// Biased (V-statistic) squared-MMD estimator of Eq.-3 form:
/// mean(Kxx) - 2 mean(Kxy) + mean(Kyy). The unbiased flag switches to the
/// U-statistic (diagonal terms removed).
Val mmd2_biased(StepGraph& sg, Val X, Val Y, bool unbiased = false);
Val mmd2_biased(Tape& tape, const KernelKind& kind, Val X, Val Y, bool unbiased = false);

/// MMD-GAN style baseline: L_D = -MMD^2_{k o D}(x, G(z)) + lambda GP,
/// L_G = MMD^2_{k o D}(x, G(z)).
struct MmdLosses {
  Val d_loss, g_loss;
};
MmdLosses mmd_baseline_losses(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u);
Val mmd_generator_loss(StepGraph& sg, const Tensor& x, const Tensor& z);
Val wgan_generator_loss(StepGraph& sg, const Tensor& z);

/// WGAN-GP with a scalar critic.
struct WganLosses {
  Val d_loss, g_loss;
};
WganLosses wgan_gp_losses(StepGraph& sg, const Tensor& x, const Tensor& z, const Tensor& u);

// ---- training loop ----

class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& msg, long iteration, std::string term)
      : std::runtime_error("iteration " + std::to_string(iteration) + ", " + term + ": " + msg),
        iteration(iteration),
        term(std::move(term)) {}
  long iteration;
  std::string term;
};

struct TrainHooks {
  std::function<void(const MetricsReport&)> on_report;
  std::function<void(const TrainState&, long)> on_checkpoint;
};

struct TrainOutput {
  TrainState state;
  std::vector<MetricsReport> reports;
};

/// Runs the full training loop: per generator step, n_d discriminator updates
/// each followed by a selection-logit update, then one generator update
/// followed by another logit update. Emits a report at iteration 0, every
/// eval_every iterations, and at the end.
TrainOutput train(const TrainConfig& cfg, const TrainHooks& hooks = {},
                  TrainState* resume = nullptr);

/// Draws generator samples with eval-phase batch norm.
Tensor generate_samples(const TrainConfig& cfg, TrainState& state, std::size_t n, Rng& rng);

/// Metrics of a sample set against the dataset's cached reference draw.
MetricsReport evaluate_metrics(const TrainConfig& cfg, TrainState& state, long iteration);

std::array<double, 6> current_weights(const TrainConfig& cfg, const TrainState& state);

}  // namespace ckgan
