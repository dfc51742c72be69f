#pragma once

#include <map>
#include <string>
#include <vector>

#include "ckgan/rng.hpp"
#include "ckgan/tape.hpp"

namespace ckgan {

enum class LayerKind { Dense, BatchNorm, Relu, Tanh };

struct Layer {
  LayerKind kind;
  std::size_t width = 0;  // Dense output width
};

/// Fully-connected network description. BatchNorm/activation widths follow the
/// preceding Dense layer.
struct MLPSpec {
  std::string name;
  std::size_t input_dim = 2;
  std::vector<Layer> layers;

  std::size_t output_dim() const;
  void validate() const;
};

/// Named parameter and state tensors of one network. `trainable` lists the
/// gradient-bearing subset (running statistics are excluded).
struct ModelParams {
  std::vector<std::string> order;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> trainable;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void add(const std::string& name, Tensor t, bool is_trainable);
};

/// Uniform Glorot-style init: dense weights ~ U(+-sqrt(6/(fan_in+fan_out))),
/// biases 0, BN gamma 1, beta 0, running mean 0, running variance 1.
ModelParams init_params(const MLPSpec& spec, Rng& rng);

enum class Phase { Train, Eval };

/// Parameter tensors bound to a tape as named inputs so one network can be
/// applied to several batches in the same graph.
struct BoundNet {
  const MLPSpec* spec = nullptr;
  ModelParams* params = nullptr;
  std::string prefix;
  std::map<std::string, Val> vals;

  Val at(const std::string& name) const;
};

BoundNet bind_params(Tape& tape, const MLPSpec& spec, ModelParams& params,
                     const std::string& prefix);

struct ForwardOptions {
  Phase phase = Phase::Train;
  double bn_eps = 1e-5;
  double bn_momentum = 0.99;
  bool update_running_stats = true;  // only applies in train phase
};

/// Runs the network on a [B x in] batch, returning the [B x out] node.
/// Train phase normalizes by batch statistics (differentiable through them,
/// which double backprop requires) and updates the running statistics.
/// Eval phase uses the stored running statistics.
Val mlp_forward(Tape& tape, const BoundNet& net, Val batch, const ForwardOptions& opt = {});

/// Generator/discriminator pair for a named architecture:
///   main, simple-ring, simple-grid, simple-smile.
/// scalar_critic replaces the discriminator head with Dense 1.
struct NetPair {
  MLPSpec generator;
  MLPSpec discriminator;
};
NetPair architecture(const std::string& name, bool scalar_critic = false);

std::vector<std::string> architecture_names();

}  // namespace ckgan
