#include "ckgan/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ckgan {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool is_scalar_like(const Tensor& t) { return t.size() == 1; }
}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddConst: return "add_const";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Heaviside: return "heaviside";
    case Op::SignOp: return "sign";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::MatMulTN: return "matmul_tn";
    case Op::Transpose: return "transpose";
    case Op::SumAll: return "sum_all";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastFull: return "broadcast_full";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::AddRows: return "add_rows";
    case Op::SubRows: return "sub_rows";
    case Op::MulRows: return "mul_rows";
    case Op::DivRows: return "div_rows";
    case Op::Softmax: return "softmax";
    case Op::Index: return "index";
    case Op::IndexGrad: return "index_grad";
    case Op::ArgmaxOneHot: return "argmax_onehot";
    case Op::ArgmaxOneHotGrad: return "argmax_onehot_grad";
    case Op::PairwiseSqDist: return "pairwise_sqdist";
    case Op::PairwiseL1: return "pairwise_l1";
    case Op::PairwiseL1GradX: return "pairwise_l1_grad_x";
    case Op::PairwiseL1GradY: return "pairwise_l1_grad_y";
  }
  return "?";
}

std::string Tape::describe_(int id) const {
  const Node& n = nodes_[id];
  std::string s = "node ";
  s += std::to_string(id);
  s += " (";
  s += op_name(n.op);
  if (!n.name.empty()) {
    s += " '";
    s += n.name;
    s += "'";
  }
  s += ")";
  return s;
}

void Tape::check_finite_(int id) const {
  if (!values_[id].all_finite())
    throw TapeError("non-finite value produced at " + describe_(id), id);
}

Val Tape::push_(Node n) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  values_.emplace_back();
  compute_(id);
  check_finite_(id);
  return Val{this, id};
}

Val Tape::input(const std::string& name, Tensor v) {
  if (name.empty()) throw TapeError("input requires a non-empty name");
  if (inputs_.count(name)) throw TapeError("duplicate input name '" + name + "'");
  Node n;
  n.op = Op::Input;
  n.name = name;
  n.tshape = v.shape();
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  values_.push_back(std::move(v));
  inputs_[name] = id;
  check_finite_(id);
  return Val{this, id};
}

Val Tape::constant(Tensor v) {
  Node n;
  n.op = Op::Constant;
  n.tshape = v.shape();
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  values_.push_back(std::move(v));
  check_finite_(id);
  return Val{this, id};
}

#define CKGAN_CHECK_SAME_TAPE(v)                                       \
  if ((v).tape != this || (v).id < 0 || (v).id >= size())              \
    throw TapeError("operand does not belong to this tape");

Val Tape::add(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::Add, a.id, b.id});
}
Val Tape::sub(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::Sub, a.id, b.id});
}
Val Tape::mul(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::Mul, a.id, b.id});
}
Val Tape::div(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::Div, a.id, b.id});
}
Val Tape::scale(Val a, double c) {
  CKGAN_CHECK_SAME_TAPE(a);
  Node n{Op::Scale, a.id};
  n.attr = c;
  return push_(std::move(n));
}
Val Tape::add_const(Val a, double c) {
  CKGAN_CHECK_SAME_TAPE(a);
  Node n{Op::AddConst, a.id};
  n.attr = c;
  return push_(std::move(n));
}
Val Tape::relu(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Relu, a.id}); }
Val Tape::tanh_(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Tanh, a.id}); }
Val Tape::exp_(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Exp, a.id}); }
Val Tape::log_(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Log, a.id}); }
Val Tape::sqrt_(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Sqrt, a.id}); }
Val Tape::abs_(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Abs, a.id}); }
Val Tape::square(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Square, a.id}); }
Val Tape::heaviside(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Heaviside, a.id}); }
Val Tape::sign(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::SignOp, a.id}); }

Val Tape::matmul(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::MatMul, a.id, b.id});
}
Val Tape::matmul_nt(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::MatMulNT, a.id, b.id});
}
Val Tape::matmul_tn(Val a, Val b) {
  CKGAN_CHECK_SAME_TAPE(a);
  CKGAN_CHECK_SAME_TAPE(b);
  return push_({Op::MatMulTN, a.id, b.id});
}
Val Tape::transpose(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Transpose, a.id}); }

Val Tape::sum_all(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::SumAll, a.id}); }
Val Tape::sum_rows(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::SumRows, a.id}); }
Val Tape::sum_cols(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::SumCols, a.id}); }

Val Tape::broadcast_full(Val a, Shape target) {
  CKGAN_CHECK_SAME_TAPE(a);
  Node n{Op::BroadcastFull, a.id};
  n.tshape = std::move(target);
  return push_(std::move(n));
}
Val Tape::broadcast_rows(Val a, std::size_t rows) {
  CKGAN_CHECK_SAME_TAPE(a);
  Node n{Op::BroadcastRows, a.id};
  n.iattr = static_cast<long long>(rows);
  return push_(std::move(n));
}
Val Tape::broadcast_cols(Val a, std::size_t cols) {
  CKGAN_CHECK_SAME_TAPE(a);
  Node n{Op::BroadcastCols, a.id};
  n.iattr = static_cast<long long>(cols);
  return push_(std::move(n));
}

Val Tape::add_rows(Val x, Val v) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(v);
  return push_({Op::AddRows, x.id, v.id});
}
Val Tape::sub_rows(Val x, Val v) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(v);
  return push_({Op::SubRows, x.id, v.id});
}
Val Tape::mul_rows(Val x, Val v) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(v);
  return push_({Op::MulRows, x.id, v.id});
}
Val Tape::div_rows(Val x, Val v) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(v);
  return push_({Op::DivRows, x.id, v.id});
}

Val Tape::mean_all(Val a) {
  double n = static_cast<double>(value(a).size());
  return scale(sum_all(a), 1.0 / n);
}
Val Tape::mean_rows(Val a) {
  double n = static_cast<double>(value(a).dim(0));
  return scale(sum_rows(a), 1.0 / n);
}
Val Tape::mean_cols(Val a) {
  double n = static_cast<double>(value(a).dim(1));
  return scale(sum_cols(a), 1.0 / n);
}

Val Tape::softmax(Val a) { CKGAN_CHECK_SAME_TAPE(a); return push_({Op::Softmax, a.id}); }

Val Tape::index(Val v, std::size_t i) {
  CKGAN_CHECK_SAME_TAPE(v);
  Node n{Op::Index, v.id};
  n.iattr = static_cast<long long>(i);
  return push_(std::move(n));
}
Val Tape::index_grad(Val g, std::size_t i, std::size_t len) {
  CKGAN_CHECK_SAME_TAPE(g);
  Node n{Op::IndexGrad, g.id};
  n.iattr = static_cast<long long>(i);
  n.iattr2 = static_cast<long long>(len);
  return push_(std::move(n));
}
Val Tape::argmax_onehot(Val v) { CKGAN_CHECK_SAME_TAPE(v); return push_({Op::ArgmaxOneHot, v.id}); }
Val Tape::argmax_onehot_grad(Val g, Val v) {
  CKGAN_CHECK_SAME_TAPE(g);
  CKGAN_CHECK_SAME_TAPE(v);
  return push_({Op::ArgmaxOneHotGrad, g.id, v.id});
}

Val Tape::pairwise_sqdist(Val x, Val y) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(y);
  return push_({Op::PairwiseSqDist, x.id, y.id});
}
Val Tape::pairwise_l1(Val x, Val y) {
  CKGAN_CHECK_SAME_TAPE(x);
  CKGAN_CHECK_SAME_TAPE(y);
  return push_({Op::PairwiseL1, x.id, y.id});
}

const Tensor& Tape::value(Val v) const {
  CKGAN_CHECK_SAME_TAPE(v);
  return values_[v.id];
}

void Tape::truncate(int n) {
  if (n < 0 || n > size()) throw TapeError("truncate out of range");
  for (auto it = inputs_.begin(); it != inputs_.end();) {
    if (it->second >= n) it = inputs_.erase(it); else ++it;
  }
  for (auto it = outputs_.begin(); it != outputs_.end();) {
    if (it->second >= n) it = outputs_.erase(it); else ++it;
  }
  nodes_.resize(n);
  values_.resize(n);
}

Val Tape::find_input(const std::string& name) const {
  auto it = inputs_.find(name);
  if (it == inputs_.end())
    throw TapeError("variable '" + name + "' is not on the tape");
  return Val{const_cast<Tape*>(this), it->second};
}

// ---------------------------------------------------------------------------
// forward computation
// ---------------------------------------------------------------------------

void Tape::compute_(int id) {
  Node& n = nodes_[id];
  auto bad_shape = [&](const std::string& detail) {
    throw TapeError("shape mismatch at " + describe_(id) + ": " + detail, id);
  };
  auto A = [&]() -> const Tensor& { return values_[n.a]; };
  auto B = [&]() -> const Tensor& { return values_[n.b]; };

  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return;  // value already present

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      if (!A().same_shape(B()))
        bad_shape(shape_str(A().shape()) + " vs " + shape_str(B().shape()));
      Tensor out = Tensor::uninit(A().shape());
      const double* pa = A().data();
      const double* pb = B().data();
      double* po = out.data();
      std::size_t m = out.size();
      switch (n.op) {
        case Op::Add: for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] + pb[i]; break;
        case Op::Sub: for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] - pb[i]; break;
        case Op::Mul: for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] * pb[i]; break;
        default:      for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] / pb[i]; break;
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::Scale:
    case Op::AddConst:
    case Op::Relu:
    case Op::Tanh:
    case Op::Exp:
    case Op::Log:
    case Op::Sqrt:
    case Op::Abs:
    case Op::Square:
    case Op::Heaviside:
    case Op::SignOp: {
      Tensor out = Tensor::uninit(A().shape());
      const double* pa = A().data();
      double* po = out.data();
      std::size_t m = out.size();
      double c = n.attr;
      switch (n.op) {
        case Op::Scale:    for (std::size_t i = 0; i < m; ++i) po[i] = c * pa[i]; break;
        case Op::AddConst: for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] + c; break;
        case Op::Relu:     for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0; break;
        case Op::Tanh:     for (std::size_t i = 0; i < m; ++i) po[i] = std::tanh(pa[i]); break;
        case Op::Exp:      for (std::size_t i = 0; i < m; ++i) po[i] = std::exp(pa[i]); break;
        case Op::Log:      for (std::size_t i = 0; i < m; ++i) po[i] = std::log(pa[i]); break;
        case Op::Sqrt:     for (std::size_t i = 0; i < m; ++i) po[i] = std::sqrt(pa[i]); break;
        case Op::Abs:      for (std::size_t i = 0; i < m; ++i) po[i] = std::fabs(pa[i]); break;
        case Op::Square:   for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] * pa[i]; break;
        case Op::Heaviside:for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] > 0.0 ? 1.0 : 0.0; break;
        default:           for (std::size_t i = 0; i < m; ++i) po[i] = pa[i] > 0.0 ? 1.0 : (pa[i] < 0.0 ? -1.0 : 0.0); break;
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::MatMul:
    case Op::MatMulNT:
    case Op::MatMulTN: {
      if (A().rank() != 2 || B().rank() != 2) bad_shape("matmul requires rank-2 operands");
      std::size_t ar = A().dim(0), ac = A().dim(1), br = B().dim(0), bc = B().dim(1);
      std::size_t r, k, cdim;
      if (n.op == Op::MatMul) {
        r = ar; k = ac; cdim = bc;
        if (ac != br) bad_shape(shape_str(A().shape()) + " * " + shape_str(B().shape()));
      } else if (n.op == Op::MatMulNT) {
        r = ar; k = ac; cdim = br;
        if (ac != bc) bad_shape(shape_str(A().shape()) + " * " + shape_str(B().shape()) + "^T");
      } else {
        r = ac; k = ar; cdim = bc;
        if (ar != br) bad_shape(shape_str(A().shape()) + "^T * " + shape_str(B().shape()));
      }
      Tensor out = Tensor::uninit({r, cdim});
      CMapMat ma(A().data(), ar, ac), mb(B().data(), br, bc);
      MapMat mo(out.data(), r, cdim);
      if (n.op == Op::MatMul)
        mo.noalias() = ma * mb;
      else if (n.op == Op::MatMulNT)
        mo.noalias() = ma * mb.transpose();
      else
        mo.noalias() = ma.transpose() * mb;
      values_[id] = std::move(out);
      return;
    }

    case Op::Transpose: {
      if (A().rank() != 2) bad_shape("transpose requires rank 2");
      std::size_t r = A().dim(0), cdim = A().dim(1);
      Tensor out = Tensor::uninit({cdim, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cdim; ++j) out(j, i) = A()(i, j);
      values_[id] = std::move(out);
      return;
    }

    case Op::SumAll: {
      double s = 0.0;
      const double* pa = A().data();
      for (std::size_t i = 0; i < A().size(); ++i) s += pa[i];
      values_[id] = Tensor::scalar(s);
      return;
    }

    case Op::SumRows: {
      if (A().rank() == 1) {  // [B] -> scalar treated as reduce over axis 0
        double s = 0.0;
        for (std::size_t i = 0; i < A().size(); ++i) s += A()[i];
        values_[id] = Tensor::scalar(s);
        return;
      }
      if (A().rank() != 2) bad_shape("sum_rows requires rank 1 or 2");
      std::size_t r = A().dim(0), m = A().dim(1);
      Tensor out({m});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j] += A()(i, j);
      values_[id] = std::move(out);
      return;
    }

    case Op::SumCols: {
      if (A().rank() != 2) bad_shape("sum_cols requires rank 2");
      std::size_t r = A().dim(0), m = A().dim(1);
      Tensor out = Tensor::uninit({r});
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        const double* pa = A().data() + i * m;
        for (std::size_t j = 0; j < m; ++j) s += pa[j];
        out[i] = s;
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::BroadcastFull: {
      if (!is_scalar_like(A())) bad_shape("broadcast_full requires a scalar");
      values_[id] = Tensor::full(n.tshape, A()[0]);
      return;
    }

    case Op::BroadcastRows: {
      if (A().rank() == 0 && n.iattr >= 0) {  // scalar -> vector of length iattr
        values_[id] = Tensor::full({static_cast<std::size_t>(n.iattr)}, A()[0]);
        return;
      }
      if (A().rank() != 1) bad_shape("broadcast_rows requires rank 1");
      std::size_t r = static_cast<std::size_t>(n.iattr), m = A().size();
      Tensor out = Tensor::uninit({r, m});
      for (std::size_t i = 0; i < r; ++i)
        std::memcpy(out.data() + i * m, A().data(), m * sizeof(double));
      values_[id] = std::move(out);
      return;
    }

    case Op::BroadcastCols: {
      if (A().rank() != 1) bad_shape("broadcast_cols requires rank 1");
      std::size_t r = A().size(), m = static_cast<std::size_t>(n.iattr);
      Tensor out = Tensor::uninit({r, m});
      for (std::size_t i = 0; i < r; ++i) {
        double v = A()[i];
        double* po = out.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) po[j] = v;
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::AddRows:
    case Op::SubRows:
    case Op::MulRows:
    case Op::DivRows: {
      if (A().rank() != 2 || B().rank() != 1 || A().dim(1) != B().size())
        bad_shape(shape_str(A().shape()) + " vs row " + shape_str(B().shape()));
      std::size_t r = A().dim(0), m = A().dim(1);
      Tensor out = Tensor::uninit({r, m});
      const double* pv = B().data();
      for (std::size_t i = 0; i < r; ++i) {
        const double* pa = A().data() + i * m;
        double* po = out.data() + i * m;
        switch (n.op) {
          case Op::AddRows: for (std::size_t j = 0; j < m; ++j) po[j] = pa[j] + pv[j]; break;
          case Op::SubRows: for (std::size_t j = 0; j < m; ++j) po[j] = pa[j] - pv[j]; break;
          case Op::MulRows: for (std::size_t j = 0; j < m; ++j) po[j] = pa[j] * pv[j]; break;
          default:          for (std::size_t j = 0; j < m; ++j) po[j] = pa[j] / pv[j]; break;
        }
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::Softmax: {
      if (A().rank() != 1) bad_shape("softmax requires rank 1");
      std::size_t m = A().size();
      Tensor out = Tensor::uninit({m});
      double mx = A()[0];
      for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, A()[i]);
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        out[i] = std::exp(A()[i] - mx);
        s += out[i];
      }
      for (std::size_t i = 0; i < m; ++i) out[i] /= s;
      values_[id] = std::move(out);
      return;
    }

    case Op::Index: {
      if (A().rank() != 1) bad_shape("index requires rank 1");
      std::size_t i = static_cast<std::size_t>(n.iattr);
      if (i >= A().size()) bad_shape("index out of range");
      values_[id] = Tensor::scalar(A()[i]);
      return;
    }

    case Op::IndexGrad: {
      if (!is_scalar_like(A())) bad_shape("index_grad requires a scalar");
      std::size_t len = static_cast<std::size_t>(n.iattr2);
      Tensor out({len});
      out[static_cast<std::size_t>(n.iattr)] = A()[0];
      values_[id] = std::move(out);
      return;
    }

    case Op::ArgmaxOneHot: {
      if (A().rank() != 1) bad_shape("argmax_onehot requires rank 1");
      std::size_t best = 0;
      for (std::size_t i = 1; i < A().size(); ++i)
        if (A()[i] > A()[best]) best = i;
      Tensor out({A().size()});
      out[best] = 1.0;
      values_[id] = std::move(out);
      return;
    }

    case Op::ArgmaxOneHotGrad: {
      if (!A().same_shape(B())) bad_shape("argmax_onehot_grad operands differ");
      std::size_t best = 0;
      for (std::size_t i = 1; i < B().size(); ++i)
        if (B()[i] > B()[best]) best = i;
      Tensor out(A().shape());
      out[best] = A()[best];
      values_[id] = std::move(out);
      return;
    }

    case Op::PairwiseSqDist:
    case Op::PairwiseL1: {
      if (A().rank() != 2 || B().rank() != 2 || A().dim(1) != B().dim(1))
        bad_shape(shape_str(A().shape()) + " vs " + shape_str(B().shape()));
      std::size_t nx = A().dim(0), ny = B().dim(0), m = A().dim(1);
      Tensor out = Tensor::uninit({nx, ny});
      bool l1 = (n.op == Op::PairwiseL1);
      for (std::size_t i = 0; i < nx; ++i) {
        const double* px = A().data() + i * m;
        for (std::size_t j = 0; j < ny; ++j) {
          const double* py = B().data() + j * m;
          double s = 0.0;
          if (l1) {
            for (std::size_t k = 0; k < m; ++k) s += std::fabs(px[k] - py[k]);
          } else {
            for (std::size_t k = 0; k < m; ++k) {
              double d = px[k] - py[k];
              s += d * d;
            }
          }
          out(i, j) = s;
        }
      }
      values_[id] = std::move(out);
      return;
    }

    case Op::PairwiseL1GradX:
    case Op::PairwiseL1GradY: {
      const Tensor& G = values_[n.a];
      const Tensor& X = values_[n.b];
      const Tensor& Y = values_[n.c];
      std::size_t nx = X.dim(0), ny = Y.dim(0), m = X.dim(1);
      if (G.rank() != 2 || G.dim(0) != nx || G.dim(1) != ny)
        bad_shape("pairwise_l1 gradient shape");
      bool wrt_x = (n.op == Op::PairwiseL1GradX);
      Tensor out(wrt_x ? Shape{nx, m} : Shape{ny, m});
      for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
          double g = G(i, j);
          for (std::size_t k = 0; k < m; ++k) {
            double d = X(i, k) - Y(j, k);
            double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (wrt_x)
              out(i, k) += g * sg;
            else
              out(j, k) -= g * sg;
          }
        }
      values_[id] = std::move(out);
      return;
    }
  }
  throw TapeError("unhandled op at " + describe_(id), id);
}

// ---------------------------------------------------------------------------
// reverse pass
// ---------------------------------------------------------------------------

std::vector<Val> Tape::gradient_as_nodes(Val out, const std::vector<Val>& wrt) {
  CKGAN_CHECK_SAME_TAPE(out);
  if (values_[out.id].size() != 1)
    throw TapeError("gradient requires a scalar output, got shape " +
                    shape_str(values_[out.id].shape()) + " at " + describe_(out.id));
  for (const Val& w : wrt) CKGAN_CHECK_SAME_TAPE(w);

  const int n_fwd = out.id + 1;

  // ancestors of the output
  std::vector<char> anc(n_fwd, 0);
  {
    std::vector<int> stack{out.id};
    anc[out.id] = 1;
    while (!stack.empty()) {
      int i = stack.back();
      stack.pop_back();
      for (int p : {nodes_[i].a, nodes_[i].b, nodes_[i].c})
        if (p >= 0 && p < n_fwd && !anc[p]) {
          anc[p] = 1;
          stack.push_back(p);
        }
    }
  }

  // descendants of the wrt set
  std::vector<char> desc(n_fwd, 0);
  for (const Val& w : wrt)
    if (w.id < n_fwd) desc[w.id] = 1;
  for (int i = 0; i < n_fwd; ++i) {
    if (desc[i]) continue;
    const Node& nd = nodes_[i];
    for (int p : {nd.a, nd.b, nd.c})
      if (p >= 0 && desc[p]) {
        desc[i] = 1;
        break;
      }
  }

  std::vector<char> active(n_fwd, 0);
  for (int i = 0; i < n_fwd; ++i) active[i] = anc[i] && desc[i];

  std::vector<int> grad(n_fwd, -1);
  grad[out.id] = constant(Tensor::full(values_[out.id].shape(), 1.0)).id;

  auto accum = [&](int target, Val contribution) {
    if (grad[target] < 0)
      grad[target] = contribution.id;
    else
      grad[target] = add(Val{this, grad[target]}, contribution).id;
  };

  for (int i = out.id; i >= 0; --i) {
    if (!active[i] || grad[i] < 0) continue;
    const Node nd = nodes_[i];  // copy: push_ may reallocate nodes_
    Val g{this, grad[i]};
    Val a{this, nd.a}, b{this, nd.b};
    bool need_a = nd.a >= 0 && active[nd.a];
    bool need_b = nd.b >= 0 && active[nd.b];
    Val self{this, i};

    switch (nd.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Add:
        if (need_a) accum(nd.a, g);
        if (need_b) accum(nd.b, g);
        break;
      case Op::Sub:
        if (need_a) accum(nd.a, g);
        if (need_b) accum(nd.b, scale(g, -1.0));
        break;
      case Op::Mul:
        if (need_a) accum(nd.a, mul(g, b));
        if (need_b) accum(nd.b, mul(g, a));
        break;
      case Op::Div:
        if (need_a) accum(nd.a, div(g, b));
        if (need_b) accum(nd.b, scale(mul(g, div(self, b)), -1.0));
        break;
      case Op::Scale:
        if (need_a) accum(nd.a, scale(g, nd.attr));
        break;
      case Op::AddConst:
        if (need_a) accum(nd.a, g);
        break;
      case Op::Relu:
        if (need_a) accum(nd.a, mul(g, heaviside(a)));
        break;
      case Op::Tanh:
        if (need_a) accum(nd.a, mul(g, add_const(scale(square(self), -1.0), 1.0)));
        break;
      case Op::Exp:
        if (need_a) accum(nd.a, mul(g, self));
        break;
      case Op::Log:
        if (need_a) accum(nd.a, div(g, a));
        break;
      case Op::Sqrt:
        if (need_a) accum(nd.a, scale(div(g, self), 0.5));
        break;
      case Op::Abs:
        if (need_a) accum(nd.a, mul(g, sign(a)));
        break;
      case Op::Square:
        if (need_a) accum(nd.a, scale(mul(g, a), 2.0));
        break;
      case Op::Heaviside:
      case Op::SignOp:
      case Op::ArgmaxOneHot:
        break;  // piecewise-constant: zero derivative
      case Op::MatMul:
        if (need_a) accum(nd.a, matmul_nt(g, b));
        if (need_b) accum(nd.b, matmul_tn(a, g));
        break;
      case Op::MatMulNT:  // o = a b^T
        if (need_a) accum(nd.a, matmul(g, b));
        if (need_b) accum(nd.b, matmul_tn(g, a));
        break;
      case Op::MatMulTN:  // o = a^T b
        if (need_a) accum(nd.a, matmul_nt(b, g));
        if (need_b) accum(nd.b, matmul(a, g));
        break;
      case Op::Transpose:
        if (need_a) accum(nd.a, transpose(g));
        break;
      case Op::SumAll:
        if (need_a) accum(nd.a, broadcast_full(g, values_[nd.a].shape()));
        break;
      case Op::SumRows:
        if (need_a) {
          if (values_[nd.a].rank() == 1)
            accum(nd.a, broadcast_rows(g, values_[nd.a].size()));
          else
            accum(nd.a, broadcast_rows(g, values_[nd.a].dim(0)));
        }
        break;
      case Op::SumCols:
        if (need_a) accum(nd.a, broadcast_cols(g, values_[nd.a].dim(1)));
        break;
      case Op::BroadcastFull:
        if (need_a) accum(nd.a, sum_all(g));
        break;
      case Op::BroadcastRows:
        if (need_a) accum(nd.a, sum_rows(g));
        break;
      case Op::BroadcastCols:
        if (need_a) accum(nd.a, sum_cols(g));
        break;
      case Op::AddRows:
        if (need_a) accum(nd.a, g);
        if (need_b) accum(nd.b, sum_rows(g));
        break;
      case Op::SubRows:
        if (need_a) accum(nd.a, g);
        if (need_b) accum(nd.b, scale(sum_rows(g), -1.0));
        break;
      case Op::MulRows:
        if (need_a) accum(nd.a, mul_rows(g, b));
        if (need_b) accum(nd.b, sum_rows(mul(g, a)));
        break;
      case Op::DivRows:
        // o = x / v: dx = g / v; dv = -sum_rows(g * o) / v
        if (need_a) accum(nd.a, div_rows(g, b));
        if (need_b) accum(nd.b, scale(div(sum_rows(mul(g, self)), b), -1.0));
        break;
      case Op::Softmax: {
        if (need_a) {
          Val t = sum_all(mul(g, self));
          Val shifted = sub(g, broadcast_full(t, values_[i].shape()));
          accum(nd.a, mul(self, shifted));
        }
        break;
      }
      case Op::Index:
        if (need_a)
          accum(nd.a, index_grad(g, static_cast<std::size_t>(nd.iattr), values_[nd.a].size()));
        break;
      case Op::IndexGrad:
        if (need_a) accum(nd.a, index(g, static_cast<std::size_t>(nd.iattr)));
        break;
      case Op::ArgmaxOneHotGrad:
        // d/dg of (g masked at argmax(v)); the mask itself has zero derivative
        if (need_a) accum(nd.a, argmax_onehot_grad(g, b));
        break;
      case Op::PairwiseSqDist: {
        std::size_t m = values_[nd.a].dim(1);
        if (need_a) {
          Val t1 = mul(broadcast_cols(sum_cols(g), m), a);
          accum(nd.a, scale(sub(t1, matmul(g, b)), 2.0));
        }
        if (need_b) {
          Val t1 = mul(broadcast_cols(sum_rows(g), m), b);
          accum(nd.b, scale(sub(t1, matmul(transpose(g), a)), 2.0));
        }
        break;
      }
      case Op::PairwiseL1: {
        if (need_a) accum(nd.a, push_({Op::PairwiseL1GradX, g.id, nd.a, nd.b}));
        if (need_b) accum(nd.b, push_({Op::PairwiseL1GradY, g.id, nd.a, nd.b}));
        break;
      }
      case Op::PairwiseL1GradX:
      case Op::PairwiseL1GradY:
        throw TapeError("second-order gradient through pairwise L1 is not supported (" +
                        describe_(i) + ")", i);
    }
  }

  std::vector<Val> result;
  result.reserve(wrt.size());
  for (const Val& w : wrt) {
    if (w.id < n_fwd && grad[w.id] >= 0)
      result.push_back(Val{this, grad[w.id]});
    else
      result.push_back(constant(Tensor::zeros(values_[w.id].shape())));
  }
  return result;
}

GradMap Tape::gradient(Val out, const std::vector<std::string>& wrt) {
  std::vector<Val> vars;
  vars.reserve(wrt.size());
  for (const auto& name : wrt) vars.push_back(find_input(name));
  int mark = size();
  std::vector<Val> gnodes = gradient_as_nodes(out, vars);
  GradMap gm;
  for (std::size_t i = 0; i < wrt.size(); ++i) gm[wrt[i]] = value(gnodes[i]);
  truncate(mark);
  return gm;
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

void Tape::mark_output(const std::string& name, Val v) {
  CKGAN_CHECK_SAME_TAPE(v);
  outputs_[name] = v.id;
}

std::map<std::string, Tensor> Tape::evaluate(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, tensor] : inputs) {
    auto it = inputs_.find(name);
    if (it == inputs_.end())
      throw TapeError("evaluate: variable '" + name + "' is not on the tape");
    if (tensor.shape() != nodes_[it->second].tshape)
      throw TapeError("evaluate: shape " + shape_str(tensor.shape()) + " for '" + name +
                      "' does not match recorded " + shape_str(nodes_[it->second].tshape),
                      it->second);
    values_[it->second] = tensor;
  }
  for (int i = 0; i < size(); ++i) {
    if (nodes_[i].op == Op::Input || nodes_[i].op == Op::Constant) {
      check_finite_(i);
      continue;
    }
    compute_(i);
    check_finite_(i);
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out[name] = values_[id];
  return out;
}

#undef CKGAN_CHECK_SAME_TAPE

}  // namespace ckgan
