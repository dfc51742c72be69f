#include "ckgan/network.hpp"

#include <cmath>
#include <stdexcept>

namespace ckgan {

std::size_t MLPSpec::output_dim() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerKind::Dense) return it->width;
  return input_dim;
}

void MLPSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("MLPSpec: input_dim must be positive");
  if (layers.empty()) throw std::invalid_argument("MLPSpec: no layers");
  for (const Layer& l : layers)
    if (l.kind == LayerKind::Dense && l.width == 0)
      throw std::invalid_argument("MLPSpec: dense width must be positive");
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}
const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}
void ModelParams::add(const std::string& name, Tensor t, bool is_trainable) {
  if (tensors.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  order.push_back(name);
  tensors.emplace(name, std::move(t));
  if (is_trainable) trainable.push_back(name);
}

ModelParams init_params(const MLPSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams p;
  std::size_t dim = spec.input_dim;
  int li = 0;
  for (const Layer& l : spec.layers) {
    std::string tag = "l" + std::to_string(li);
    switch (l.kind) {
      case LayerKind::Dense: {
        std::size_t fan_in = dim, fan_out = l.width;
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w({fan_in, fan_out});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-a, a);
        p.add(tag + ".W", std::move(w), true);
        p.add(tag + ".b", Tensor::zeros({fan_out}), true);
        dim = l.width;
        break;
      }
      case LayerKind::BatchNorm:
        p.add(tag + ".gamma", Tensor::full({dim}, 1.0), true);
        p.add(tag + ".beta", Tensor::zeros({dim}), true);
        p.add(tag + ".running_mean", Tensor::zeros({dim}), false);
        p.add(tag + ".running_var", Tensor::full({dim}, 1.0), false);
        break;
      case LayerKind::Relu:
      case LayerKind::Tanh:
        break;
    }
    ++li;
  }
  return p;
}

Val BoundNet::at(const std::string& name) const {
  auto it = vals.find(name);
  if (it == vals.end()) throw std::out_of_range("no bound parameter '" + name + "'");
  return it->second;
}

BoundNet bind_params(Tape& tape, const MLPSpec& spec, ModelParams& params,
                     const std::string& prefix) {
  BoundNet net;
  net.spec = &spec;
  net.params = &params;
  net.prefix = prefix;
  for (const std::string& name : params.order) {
    bool is_trainable = false;
    for (const auto& t : params.trainable)
      if (t == name) { is_trainable = true; break; }
    if (is_trainable)
      net.vals.emplace(name, tape.input(prefix + name, params.at(name)));
  }
  return net;
}

Val mlp_forward(Tape& tape, const BoundNet& net, Val batch, const ForwardOptions& opt) {
  const MLPSpec& spec = *net.spec;
  const Tensor& bv = tape.value(batch);
  if (bv.rank() != 2 || bv.dim(1) != spec.input_dim)
    throw TapeError("forward: batch shape " + shape_str(bv.shape()) + " does not match input_dim " +
                    std::to_string(spec.input_dim));
  std::size_t batch_size = bv.dim(0);
  if (batch_size == 0) throw TapeError("forward: empty batch");
  bool has_bn = false;
  for (const Layer& l : spec.layers)
    if (l.kind == LayerKind::BatchNorm) has_bn = true;
  if (opt.phase == Phase::Train && has_bn && batch_size < 2)
    throw TapeError("forward: train phase needs a batch of at least 2 rows for batch statistics");

  Val h = batch;
  int li = 0;
  for (const Layer& l : spec.layers) {
    std::string tag = "l" + std::to_string(li);
    switch (l.kind) {
      case LayerKind::Dense:
        h = tape.add_rows(tape.matmul(h, net.at(tag + ".W")), net.at(tag + ".b"));
        break;
      case LayerKind::BatchNorm: {
        if (opt.phase == Phase::Train) {
          Val mu = tape.mean_rows(h);
          Val xc = tape.sub_rows(h, mu);
          Val var = tape.mean_rows(tape.square(xc));
          Val sd = tape.sqrt_(tape.add_const(var, opt.bn_eps));
          Val xn = tape.div_rows(xc, sd);
          h = tape.add_rows(tape.mul_rows(xn, net.at(tag + ".gamma")), net.at(tag + ".beta"));
          if (opt.update_running_stats) {
            const Tensor& muv = tape.value(mu);
            const Tensor& varv = tape.value(var);
            Tensor& rm = net.params->at(tag + ".running_mean");
            Tensor& rv = net.params->at(tag + ".running_var");
            for (std::size_t i = 0; i < rm.size(); ++i) {
              rm[i] = opt.bn_momentum * rm[i] + (1.0 - opt.bn_momentum) * muv[i];
              rv[i] = opt.bn_momentum * rv[i] + (1.0 - opt.bn_momentum) * varv[i];
            }
          }
        } else {
          const Tensor& rm = net.params->at(tag + ".running_mean");
          const Tensor& rv = net.params->at(tag + ".running_var");
          Tensor sd(rv.shape());
          for (std::size_t i = 0; i < rv.size(); ++i) sd[i] = std::sqrt(rv[i] + opt.bn_eps);
          Val xn = tape.div_rows(tape.sub_rows(h, tape.constant(rm)), tape.constant(sd));
          h = tape.add_rows(tape.mul_rows(xn, net.at(tag + ".gamma")), net.at(tag + ".beta"));
        }
        break;
      }
      case LayerKind::Relu:
        h = tape.relu(h);
        break;
      case LayerKind::Tanh:
        h = tape.tanh_(h);
        break;
    }
    ++li;
  }
  return h;
}

namespace {

MLPSpec dense_bn_relu_stack(const std::string& name, std::size_t input_dim,
                            const std::vector<std::size_t>& hidden, std::size_t out) {
  MLPSpec s;
  s.name = name;
  s.input_dim = input_dim;
  for (std::size_t w : hidden) {
    s.layers.push_back({LayerKind::Dense, w});
    s.layers.push_back({LayerKind::BatchNorm, 0});
    s.layers.push_back({LayerKind::Relu, 0});
  }
  s.layers.push_back({LayerKind::Dense, out});
  return s;
}

}  // namespace

NetPair architecture(const std::string& name, bool scalar_critic) {
  std::size_t d_out = scalar_critic ? 1 : 2;
  if (name == "main") {
    return {dense_bn_relu_stack("main.g", 2, {1024, 1024, 1024}, 2),
            dense_bn_relu_stack("main.d", 2, {1024, 1024}, d_out)};
  }
  if (name == "simple-ring") {
    return {dense_bn_relu_stack("simple-ring.g", 2, {64}, 2),
            dense_bn_relu_stack("simple-ring.d", 2, {64}, d_out)};
  }
  if (name == "simple-grid") {
    return {dense_bn_relu_stack("simple-grid.g", 2, {1024}, 2),
            dense_bn_relu_stack("simple-grid.d", 2, {1024}, d_out)};
  }
  if (name == "simple-smile") {
    return {dense_bn_relu_stack("simple-smile.g", 2, {32, 32}, 2),
            dense_bn_relu_stack("simple-smile.d", 2, {32, 32}, d_out)};
  }
  throw std::invalid_argument("unknown architecture '" + name +
                              "' (expected main, simple-ring, simple-grid, simple-smile)");
}

std::vector<std::string> architecture_names() {
  return {"main", "simple-ring", "simple-grid", "simple-smile"};
}

}  // namespace ckgan
