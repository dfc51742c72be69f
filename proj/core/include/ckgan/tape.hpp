#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckgan/tensor.hpp"

namespace ckgan {

/// Error raised while building or evaluating tape nodes. Carries the offending
/// node so callers can report which term failed.
class TapeError : public std::runtime_error {
 public:
  TapeError(std::string msg, int node = -1)
      : std::runtime_error(std::move(msg)), node_id(node) {}
  int node_id;
};

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Scale,      // attr * x
  AddConst,   // x + attr
  Relu,
  Tanh,
  Exp,
  Log,
  Sqrt,
  Abs,
  Square,
  Heaviside,  // 1 if x > 0 else 0 (0 at 0); derivative defined as 0
  SignOp,     // -1 / 0 / +1; derivative defined as 0
  MatMul,
  MatMulNT,  // A * B^T without materializing the transpose
  MatMulTN,  // A^T * B without materializing the transpose
  Transpose,
  SumAll,
  SumRows,        // [B x m] -> [m], reduce axis 0
  SumCols,        // [B x m] -> [B], reduce axis 1
  BroadcastFull,  // scalar -> tshape
  BroadcastRows,  // [m] -> [iattr x m]
  BroadcastCols,  // [B] -> [B x iattr]
  AddRows,        // [B x m] + row vector [m]
  SubRows,        // [B x m] - row vector [m]
  MulRows,        // [B x m] * row vector [m]
  DivRows,        // [B x m] / row vector [m]
  Softmax,        // rank-1 vector
  Index,          // v[iattr] of rank-1 v -> scalar
  IndexGrad,      // scalar g -> [iattr2] one-hot at iattr, scaled by g
  ArgmaxOneHot,   // rank-1 v -> one-hot at argmax (ties: lowest index)
  ArgmaxOneHotGrad,  // (g, v) -> g masked by one-hot(argmax v)
  PairwiseSqDist,    // [n x m],[p x m] -> [n x p]
  PairwiseL1,        // [n x m],[p x m] -> [n x p]
  PairwiseL1GradX,   // (g, X, Y) -> dX
  PairwiseL1GradY,   // (g, X, Y) -> dY
};

const char* op_name(Op op);

struct Node {
  Op op;
  int a = -1, b = -1, c = -1;  // input node ids
  double attr = 0.0;
  long long iattr = 0;
  long long iattr2 = 0;
  Shape tshape;      // target shape for BroadcastFull; recorded shape for leaves
  std::string name;  // Input name, empty otherwise
};

class Tape;

/// Lightweight handle to a tape node.
struct Val {
  Tape* tape = nullptr;
  int id = -1;
  bool ok() const { return tape != nullptr && id >= 0; }
};

using GradMap = std::map<std::string, Tensor>;

/// Define-by-run computation graph over Tensors. Node values are computed
/// eagerly as nodes are appended; the recorded program can be replayed on
/// fresh inputs. The backward pass is emitted as ordinary nodes, which is what
/// makes gradient-penalty terms differentiable a second time.
class Tape {
 public:
  // ---- leaves ----
  Val input(const std::string& name, Tensor v);
  Val constant(Tensor v);
  Val constant(double v) { return constant(Tensor::scalar(v)); }

  // ---- elementwise ----
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val div(Val a, Val b);
  Val scale(Val a, double c);
  Val add_const(Val a, double c);
  Val relu(Val a);
  Val tanh_(Val a);
  Val exp_(Val a);
  Val log_(Val a);
  Val sqrt_(Val a);
  Val abs_(Val a);
  Val square(Val a);
  Val heaviside(Val a);
  Val sign(Val a);

  // ---- linear algebra ----
  Val matmul(Val a, Val b);
  Val matmul_nt(Val a, Val b);  // a * b^T
  Val matmul_tn(Val a, Val b);  // a^T * b
  Val transpose(Val a);

  // ---- reductions / broadcasts ----
  Val sum_all(Val a);
  Val sum_rows(Val a);
  Val sum_cols(Val a);
  Val broadcast_full(Val a, Shape target);
  Val broadcast_rows(Val a, std::size_t rows);
  Val broadcast_cols(Val a, std::size_t cols);
  Val mean_all(Val a);
  Val mean_rows(Val a);  // batch-axis mean: [B x m] -> [m]
  Val mean_cols(Val a);  // [B x m] -> [B]
  // matrix-by-row-vector forms, equivalent to broadcasting v over rows
  Val add_rows(Val x, Val v);
  Val sub_rows(Val x, Val v);
  Val mul_rows(Val x, Val v);
  Val div_rows(Val x, Val v);

  // ---- vector ops ----
  Val softmax(Val a);
  Val index(Val v, std::size_t i);
  Val index_grad(Val g, std::size_t i, std::size_t n);
  Val argmax_onehot(Val v);
  Val argmax_onehot_grad(Val g, Val v);

  // ---- pairwise distances ----
  Val pairwise_sqdist(Val x, Val y);
  Val pairwise_l1(Val x, Val y);

  // ---- access ----
  const Tensor& value(Val v) const;
  const Tensor& value(int id) const { return values_.at(id); }
  const Node& node(int id) const { return nodes_.at(id); }
  int size() const { return static_cast<int>(nodes_.size()); }
  /// Drops all nodes with id >= n (used to emit scratch gradients).
  void truncate(int n);

  // ---- autodiff ----
  /// Emits the reverse pass for `out` as new nodes and returns, per wrt entry,
  /// the node holding d(out)/d(wrt). wrt entries may be any node on the tape;
  /// unreachable entries yield zero constants.
  std::vector<Val> gradient_as_nodes(Val out, const std::vector<Val>& wrt);

  /// Reverse-mode derivatives of a scalar w.r.t. named input variables.
  /// Internally emits the same nodes as gradient_as_nodes and then removes
  /// them, so both paths produce identical numbers.
  GradMap gradient(Val out, const std::vector<std::string>& wrt);

  // ---- replay ----
  void mark_output(const std::string& name, Val v);
  /// Binds named inputs and recomputes every node in recorded order.
  /// Returns the marked outputs.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs);

  Val find_input(const std::string& name) const;

 private:
  Val push_(Node n);
  void compute_(int id);
  void check_finite_(int id) const;
  std::string describe_(int id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::map<std::string, int> inputs_;
  std::map<std::string, int> outputs_;
};

// Operator sugar for readable formula code.
inline Val operator+(Val a, Val b) { return a.tape->add(a, b); }
inline Val operator-(Val a, Val b) { return a.tape->sub(a, b); }
inline Val operator*(Val a, Val b) { return a.tape->mul(a, b); }
inline Val operator/(Val a, Val b) { return a.tape->div(a, b); }
inline Val operator*(Val a, double c) { return a.tape->scale(a, c); }
inline Val operator*(double c, Val a) { return a.tape->scale(a, c); }
inline Val operator+(Val a, double c) { return a.tape->add_const(a, c); }
inline Val operator-(Val a, double c) { return a.tape->add_const(a, -c); }
inline Val operator-(Val a) { return a.tape->scale(a, -1.0); }

}  // namespace ckgan
