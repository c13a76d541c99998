#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "handmim/error.hpp"
#include "handmim/mat.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape owns a flat vector of nodes; every op appends one node whose value
// is computed eagerly with Eigen and whose backward closure scatters the
// incoming cotangent into its inputs. Node indices are a valid topological
// order by construction (ops only reference earlier nodes), so backward() is
// a single reverse sweep. Gradients accumulate, which makes parameter
// sharing (the same leaf used in several places, e.g. one backbone applied
// to two augmented views) work without any extra bookkeeping.
//
// Trainable leaves are registered through param() with a stable name; after
// backward() the per-name gradients are collected with named_grads().
// Constants (inputs, frozen nets such as the distillation teacher) take the
// same code path but produce no backward work, so a teacher forward pass is
// just an eager Eigen evaluation.
//
// The tape is not thread-safe; training is single-threaded by design.

namespace handmim::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
  const Mat& val() const;
  int rows() const { return static_cast<int>(val().rows()); }
  int cols() const { return static_cast<int>(val().cols()); }
};

struct Node {
  Mat val;
  Mat grad;  // allocated on first accumulation
  bool needs_grad = false;
  bool grad_touched = false;
  std::function<void(Tape&, int)> back;  // empty for leaves and constants
};

class Tape {
 public:
  Var constant(Mat m) {
    nodes_.push_back(Node{std::move(m), {}, false, false, {}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(double s) {
    Mat m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
  }

  // Registers `storage` as a differentiable leaf (or a constant when
  // trainable == false). Calls with the same address return the same node,
  // so gradients for a parameter used twice accumulate in one place.
  Var param(const Mat& storage, const std::string& name, bool trainable) {
    auto it = cache_.find(&storage);
    if (it != cache_.end()) return Var{this, it->second};
    nodes_.push_back(Node{storage, {}, trainable, false, {}});
    int idx = static_cast<int>(nodes_.size()) - 1;
    cache_.emplace(&storage, idx);
    if (trainable) leaves_.emplace_back(name, idx);
    return Var{this, idx};
  }

  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return nodes_.size(); }

  // Appends an op node. `inputs` only matter for needs_grad propagation; the
  // backward closure captures whatever indices it needs.
  Var emit(Mat value, std::initializer_list<Var> inputs,
           std::function<void(Tape&, int)> back) {
    bool needs = false;
    for (const Var& v : inputs) {
      HM_CHECK(v.tape == this, InvariantError, "op mixes vars from different tapes");
      needs = needs || nodes_[static_cast<std::size_t>(v.idx)].needs_grad;
    }
    Node n;
    n.val = std::move(value);
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var emit(Mat value, const std::vector<Var>& inputs,
           std::function<void(Tape&, int)> back) {
    bool needs = false;
    for (const Var& v : inputs) {
      HM_CHECK(v.tape == this, InvariantError, "op mixes vars from different tapes");
      needs = needs || nodes_[static_cast<std::size_t>(v.idx)].needs_grad;
    }
    Node n;
    n.val = std::move(value);
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // Adds `g` into the gradient of node i (no-op for constants).
  template <typename Expr>
  void accum(int i, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad) return;
    if (!n.grad_touched) {
      n.grad = Mat::Zero(n.val.rows(), n.val.cols());
      n.grad_touched = true;
    }
    n.grad += g;
  }

  void backward(Var loss) {
    HM_CHECK(loss.tape == this, InvariantError, "backward on foreign var");
    Node& root = nodes_[static_cast<std::size_t>(loss.idx)];
    HM_CHECK(root.val.rows() == 1 && root.val.cols() == 1, InvariantError,
             "backward requires a scalar loss node");
    root.grad = Mat::Ones(1, 1);
    root.grad_touched = true;
    for (int i = loss.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.grad_touched && n.back) n.back(*this, i);
    }
  }

  // Gradient of a leaf/op node; zero matrix if backward never reached it.
  Mat grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.idx)];
    if (n.grad_touched) return n.grad;
    return Mat::Zero(n.val.rows(), n.val.cols());
  }

  // name -> gradient for every trainable leaf registered via param().
  std::map<std::string, Mat> named_grads() const {
    std::map<std::string, Mat> out;
    for (const auto& [name, idx] : leaves_) out[name] = grad(Var{const_cast<Tape*>(this), idx});
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> leaves_;
  std::unordered_map<const Mat*, int> cache_;
};

inline const Mat& Var::val() const { return tape->node(idx).val; }

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  HM_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), InvariantError,
           std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
               std::to_string(b.cols()));
}

inline Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(a.val() + b.val(), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g);
    t.accum(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(a.val() - b.val(), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g);
    t.accum(ib, -g);
  });
}

inline Var neg(Var a) {
  int ia = a.idx;
  return a.tape->emit(-a.val(), {a}, [ia](Tape& t, int self) {
    t.accum(ia, -t.node(self).grad);
  });
}

inline Var mul(Var a, Var b) {  // elementwise
  check_same_shape(a, b, "mul");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(a.val().cwiseProduct(b.val()), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g.cwiseProduct(t.node(ib).val));
    t.accum(ib, g.cwiseProduct(t.node(ia).val));
  });
}

inline Var divv(Var a, Var b) {  // elementwise a/b
  check_same_shape(a, b, "divv");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(a.val().cwiseQuotient(b.val()), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& bv = t.node(ib).val;
    t.accum(ia, g.cwiseQuotient(bv));
    t.accum(ib, -g.cwiseProduct(t.node(self).val).cwiseQuotient(bv));
  });
}

inline Var scale(Var a, double s) {
  int ia = a.idx;
  return a.tape->emit(a.val() * s, {a}, [ia, s](Tape& t, int self) {
    t.accum(ia, t.node(self).grad * s);
  });
}

inline Var add_scalar(Var a, double s) {
  int ia = a.idx;
  return a.tape->emit((a.val().array() + s).matrix(), {a}, [ia](Tape& t, int self) {
    t.accum(ia, t.node(self).grad);
  });
}

inline Var matmul(Var a, Var b) {
  HM_CHECK(a.cols() == b.rows(), InvariantError,
           "matmul: inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(a.val() * b.val(), {a, b}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g * t.node(ib).val.transpose());
    t.accum(ib, t.node(ia).val.transpose() * g);
  });
}

inline Var transpose(Var a) {
  int ia = a.idx;
  return a.tape->emit(a.val().transpose(), {a}, [ia](Tape& t, int self) {
    t.accum(ia, t.node(self).grad.transpose());
  });
}

inline Var block(Var a, int r0, int c0, int nr, int nc) {
  HM_CHECK(r0 >= 0 && c0 >= 0 && r0 + nr <= a.rows() && c0 + nc <= a.cols(), InvariantError,
           "block: out of range");
  int ia = a.idx;
  return a.tape->emit(a.val().block(r0, c0, nr, nc), {a}, [ia, r0, c0, nr, nc](Tape& t, int self) {
    Mat g = Mat::Zero(t.node(ia).val.rows(), t.node(ia).val.cols());
    g.block(r0, c0, nr, nc) = t.node(self).grad;
    t.accum(ia, g);
  });
}

inline Var slice_rows(Var a, int r0, int n) { return block(a, r0, 0, n, a.cols()); }
inline Var slice_cols(Var a, int c0, int n) { return block(a, 0, c0, a.rows(), n); }

inline Var concat_rows(const std::vector<Var>& parts) {
  HM_CHECK(!parts.empty(), InvariantError, "concat_rows: empty");
  int cols = parts[0].cols(), rows = 0;
  for (const Var& p : parts) {
    HM_CHECK(p.cols() == cols, InvariantError, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<int> idxs, offs;
  int r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.val();
    idxs.push_back(p.idx);
    offs.push_back(r);
    r += p.rows();
  }
  return parts[0].tape->emit(std::move(out), parts, [idxs, offs](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      int nr = static_cast<int>(t.node(idxs[k]).val.rows());
      t.accum(idxs[k], g.middleRows(offs[k], nr));
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  HM_CHECK(!parts.empty(), InvariantError, "concat_cols: empty");
  int rows = parts[0].rows(), cols = 0;
  for (const Var& p : parts) {
    HM_CHECK(p.rows() == rows, InvariantError, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<int> idxs, offs;
  int c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.val();
    idxs.push_back(p.idx);
    offs.push_back(c);
    c += p.cols();
  }
  return parts[0].tape->emit(std::move(out), parts, [idxs, offs](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      int nc = static_cast<int>(t.node(idxs[k]).val.cols());
      t.accum(idxs[k], g.middleCols(offs[k], nc));
    }
  });
}

inline Var reshape(Var a, int rows, int cols) {
  int ia = a.idx;
  int ar = a.rows(), ac = a.cols();
  return a.tape->emit(reshape_rm(a.val(), rows, cols), {a}, [ia, ar, ac](Tape& t, int self) {
    t.accum(ia, reshape_rm(t.node(self).grad, ar, ac));
  });
}

// [1,c] -> [n,c], every row a copy.
inline Var tile_rows(Var a, int n) {
  HM_CHECK(a.rows() == 1, InvariantError, "tile_rows: input must be a single row");
  int ia = a.idx;
  Mat out = a.val().replicate(n, 1);
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    t.accum(ia, t.node(self).grad.colwise().sum());
  });
}

inline Var add_rowvec(Var a, Var r) {
  HM_CHECK(r.rows() == 1 && r.cols() == a.cols(), InvariantError, "add_rowvec: bad shape");
  int ia = a.idx, ir = r.idx;
  Mat out = a.val();
  out.rowwise() += Eigen::RowVectorXd(r.val().row(0));
  return a.tape->emit(std::move(out), {a, r}, [ia, ir](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g);
    t.accum(ir, g.colwise().sum());
  });
}

inline Var mul_rowvec(Var a, Var r) {
  HM_CHECK(r.rows() == 1 && r.cols() == a.cols(), InvariantError, "mul_rowvec: bad shape");
  int ia = a.idx, ir = r.idx;
  Mat out = (a.val().array().rowwise() * r.val().row(0).array()).matrix();
  return a.tape->emit(std::move(out), {a, r}, [ia, ir](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, (g.array().rowwise() * t.node(ir).val.row(0).array()).matrix());
    t.accum(ir, g.cwiseProduct(t.node(ia).val).colwise().sum());
  });
}

inline Var add_colvec(Var a, Var c) {
  HM_CHECK(c.cols() == 1 && c.rows() == a.rows(), InvariantError, "add_colvec: bad shape");
  int ia = a.idx, ic = c.idx;
  Mat out = a.val();
  out.colwise() += Eigen::VectorXd(c.val().col(0));
  return a.tape->emit(std::move(out), {a, c}, [ia, ic](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, g);
    t.accum(ic, g.rowwise().sum());
  });
}

inline Var mul_colvec(Var a, Var c) {
  HM_CHECK(c.cols() == 1 && c.rows() == a.rows(), InvariantError, "mul_colvec: bad shape");
  int ia = a.idx, ic = c.idx;
  Mat out = (a.val().array().colwise() * c.val().col(0).array()).matrix();
  return a.tape->emit(std::move(out), {a, c}, [ia, ic](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    t.accum(ia, (g.array().colwise() * t.node(ic).val.col(0).array()).matrix());
    t.accum(ic, g.cwiseProduct(t.node(ia).val).rowwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  int ia = a.idx;
  Mat out(1, 1);
  out(0, 0) = a.val().sum();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    double g = t.node(self).grad(0, 0);
    const Mat& av = t.node(ia).val;
    t.accum(ia, Mat::Constant(av.rows(), av.cols(), g));
  });
}

inline Var mean(Var a) {
  int ia = a.idx;
  double n = static_cast<double>(a.val().size());
  Mat out(1, 1);
  out(0, 0) = a.val().sum() / n;
  return a.tape->emit(std::move(out), {a}, [ia, n](Tape& t, int self) {
    double g = t.node(self).grad(0, 0) / n;
    const Mat& av = t.node(ia).val;
    t.accum(ia, Mat::Constant(av.rows(), av.cols(), g));
  });
}

inline Var rowwise_sum(Var a) {
  int ia = a.idx;
  Mat out = a.val().rowwise().sum();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    const Mat& g = t.node(self).grad;  // [r,1]
    const Mat& av = t.node(ia).val;
    t.accum(ia, g.replicate(1, static_cast<int>(av.cols())));
  });
}

inline Var rowwise_mean(Var a) {
  int ia = a.idx;
  double n = static_cast<double>(a.cols());
  Mat out = a.val().rowwise().mean();
  return a.tape->emit(std::move(out), {a}, [ia, n](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& av = t.node(ia).val;
    t.accum(ia, g.replicate(1, static_cast<int>(av.cols())) / n);
  });
}

inline Var colwise_sum(Var a) {
  int ia = a.idx;
  Mat out = a.val().colwise().sum();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    const Mat& g = t.node(self).grad;  // [1,c]
    const Mat& av = t.node(ia).val;
    t.accum(ia, g.replicate(static_cast<int>(av.rows()), 1));
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var exp_(Var a) {
  int ia = a.idx;
  Mat out = a.val().array().exp().matrix();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    t.accum(ia, t.node(self).grad.cwiseProduct(t.node(self).val));
  });
}

inline Var log_(Var a) {
  int ia = a.idx;
  Mat out = a.val().array().log().matrix();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    t.accum(ia, t.node(self).grad.cwiseQuotient(t.node(ia).val));
  });
}

inline Var sqrt_(Var a) {
  int ia = a.idx;
  Mat out = a.val().array().sqrt().matrix();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    t.accum(ia, (t.node(self).grad.array() * 0.5 / t.node(self).val.array()).matrix());
  });
}

inline Var square(Var a) {
  int ia = a.idx;
  Mat out = a.val().array().square().matrix();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    t.accum(ia, (t.node(self).grad.array() * 2.0 * t.node(ia).val.array()).matrix());
  });
}

// |x|; subgradient 0 at x == 0.
inline Var abs_(Var a) {
  int ia = a.idx;
  Mat out = a.val().array().abs().matrix();
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    const Mat& av = t.node(ia).val;
    Mat sign = (av.array() > 0).cast<double>() - (av.array() < 0).cast<double>();
    t.accum(ia, t.node(self).grad.cwiseProduct(sign));
  });
}

// max(x, lo); subgradient 0 on the clamped side and at x == lo.
inline Var clamp_min(Var a, double lo) {
  int ia = a.idx;
  Mat out = a.val().cwiseMax(lo);
  return a.tape->emit(std::move(out), {a}, [ia, lo](Tape& t, int self) {
    Mat pass = (t.node(ia).val.array() > lo).cast<double>();
    t.accum(ia, t.node(self).grad.cwiseProduct(pass));
  });
}

// Exact (erf-based) GELU.
inline Var gelu(Var a) {
  int ia = a.idx;
  constexpr double inv_sqrt2 = 0.7071067811865476;
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  Mat out = a.val().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    Mat d = t.node(ia).val.unaryExpr([](double x) {
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
      return cdf + x * pdf;
    });
    t.accum(ia, t.node(self).grad.cwiseProduct(d));
  });
}

// Max-shifted softmax over each row.
inline Var softmax_rows(Var a) {
  int ia = a.idx;
  Mat out = softmax_rows_val(a.val());
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    const Mat& y = t.node(self).val;
    const Mat& g = t.node(self).grad;
    Mat dot = g.cwiseProduct(y).rowwise().sum();  // [r,1]
    Mat gin = y.cwiseProduct(g - dot.replicate(1, static_cast<int>(y.cols())));
    t.accum(ia, gin);
  });
}

// log(softmax) over each row, numerically stable.
inline Var log_softmax_rows(Var a) {
  int ia = a.idx;
  const Mat& x = a.val();
  Mat out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    double lse = std::log((x.row(r).array() - mx).exp().sum()) + mx;
    out.row(r) = (x.row(r).array() - lse).matrix();
  }
  return a.tape->emit(std::move(out), {a}, [ia](Tape& t, int self) {
    const Mat& y = t.node(self).val;  // log-probs
    const Mat& g = t.node(self).grad;
    Mat p = y.array().exp().matrix();
    Mat rowsum = g.rowwise().sum();  // [r,1]
    t.accum(ia, g - p.cwiseProduct(rowsum.replicate(1, static_cast<int>(y.cols()))));
  });
}

// ---------------------------------------------------------------------------
// Structured ops

// Nearest-neighbor upsampling of a [h*w, c] token grid by integer factor f.
inline Var nn_upsample(Var a, int h, int w, int f) {
  HM_CHECK(a.rows() == h * w && f >= 1, InvariantError, "nn_upsample: bad dims");
  int ia = a.idx;
  int oh = h * f, ow = w * f;
  Mat out(oh * ow, a.cols());
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) out.row(y * ow + x) = a.val().row((y / f) * w + (x / f));
  return a.tape->emit(std::move(out), {a}, [ia, h, w, f, ow, oh](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    Mat gin = Mat::Zero(h * w, g.cols());
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) gin.row((y / f) * w + (x / f)) += g.row(y * ow + x);
    t.accum(ia, gin);
  });
}

// Transposed 2D convolution on a [h*w, cin] map. Weight layout is
// [k*k*cin, cout] with row index (ky*k + kx)*cin + ci, so each kernel
// position is a contiguous [cin, cout] block. Output is [oh*ow, cout] with
// oh = (h-1)*stride - 2*pad + k.
inline Var conv_transpose2d(Var x, Var w, Var b, int h, int wd, int cin, int cout, int k,
                            int stride, int pad) {
  HM_CHECK(x.rows() == h * wd && x.cols() == cin, InvariantError, "conv_transpose2d: bad input");
  HM_CHECK(w.rows() == k * k * cin && w.cols() == cout, InvariantError,
           "conv_transpose2d: bad weight");
  HM_CHECK(b.rows() == 1 && b.cols() == cout, InvariantError, "conv_transpose2d: bad bias");
  const int oh = (h - 1) * stride - 2 * pad + k;
  const int ow = (wd - 1) * stride - 2 * pad + k;
  HM_CHECK(oh > 0 && ow > 0, InvariantError, "conv_transpose2d: empty output");
  int ix = x.idx, iw = w.idx, ib = b.idx;

  Mat out = Mat::Zero(oh * ow, cout);
  const Mat& xv = x.val();
  const Mat& wv = w.val();
  for (int iy = 0; iy < h; ++iy)
    for (int iix = 0; iix < wd; ++iix) {
      const auto xin = xv.row(iy * wd + iix);
      for (int ky = 0; ky < k; ++ky) {
        int oy = iy * stride - pad + ky;
        if (oy < 0 || oy >= oh) continue;
        for (int kx = 0; kx < k; ++kx) {
          int ox = iix * stride - pad + kx;
          if (ox < 0 || ox >= ow) continue;
          out.row(oy * ow + ox).noalias() += xin * wv.middleRows((ky * k + kx) * cin, cin);
        }
      }
    }
  out.rowwise() += Eigen::RowVectorXd(b.val().row(0));

  return x.tape->emit(std::move(out), {x, w, b},
                      [ix, iw, ib, h, wd, cin, cout, k, stride, pad, oh, ow](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& xv2 = t.node(ix).val;
    const Mat& wv2 = t.node(iw).val;
    Mat dx = Mat::Zero(h * wd, cin);
    Mat dw = Mat::Zero(k * k * cin, cout);
    for (int iy = 0; iy < h; ++iy)
      for (int iix = 0; iix < wd; ++iix) {
        const auto xin = xv2.row(iy * wd + iix);
        auto dxi = dx.row(iy * wd + iix);
        for (int ky = 0; ky < k; ++ky) {
          int oy = iy * stride - pad + ky;
          if (oy < 0 || oy >= oh) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ox = iix * stride - pad + kx;
            if (ox < 0 || ox >= ow) continue;
            const auto go = g.row(oy * ow + ox);
            dxi.noalias() += go * wv2.middleRows((ky * k + kx) * cin, cin).transpose();
            dw.middleRows((ky * k + kx) * cin, cin).noalias() += xin.transpose() * go;
          }
        }
      }
    t.accum(ix, dx);
    t.accum(iw, dw);
    t.accum(ib, g.colwise().sum());
  });
}

// Bilinear sampling of a [gh*gw, c] grid at continuous coords [n, 2]
// (x, y) in grid units, origin at cell (0,0). Coordinates are clamped to the
// grid; clamped coordinates get zero positional gradient (the sampled value
// is constant in the clamped direction). Gradients flow to both the grid
// values and the coordinates. `clamped` (optional) counts clamp events.
inline Var bilinear_sample(Var grid, Var coords, int gh, int gw, int* clamped = nullptr) {
  HM_CHECK(grid.rows() == gh * gw, InvariantError, "bilinear_sample: grid size mismatch");
  HM_CHECK(coords.cols() == 2, InvariantError, "bilinear_sample: coords must be [n,2]");
  int ig = grid.idx, ic = coords.idx;
  const int n = coords.rows(), c = grid.cols();
  const Mat& gv = grid.val();
  const Mat& cv = coords.val();

  Mat out(n, c);
  // Per-point sampling geometry, captured for the backward pass.
  struct Pt {
    int x0, x1, y0, y1;
    double fx, fy;
    bool cx, cy;  // clamped in x / y
  };
  auto geom = std::make_shared<std::vector<Pt>>(static_cast<std::size_t>(n));
  int nclamp = 0;
  for (int i = 0; i < n; ++i) {
    double x = cv(i, 0), y = cv(i, 1);
    Pt p;
    p.cx = x < 0.0 || x > gw - 1.0;
    p.cy = y < 0.0 || y > gh - 1.0;
    if (p.cx || p.cy) ++nclamp;
    x = std::min(std::max(x, 0.0), static_cast<double>(gw - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(gh - 1));
    p.x0 = static_cast<int>(std::floor(x));
    p.y0 = static_cast<int>(std::floor(y));
    p.x0 = std::min(p.x0, gw - 1);
    p.y0 = std::min(p.y0, gh - 1);
    p.x1 = std::min(p.x0 + 1, gw - 1);
    p.y1 = std::min(p.y0 + 1, gh - 1);
    p.fx = x - p.x0;
    p.fy = y - p.y0;
    (*geom)[static_cast<std::size_t>(i)] = p;
    out.row(i) = (1 - p.fx) * (1 - p.fy) * gv.row(p.y0 * gw + p.x0) +
                 p.fx * (1 - p.fy) * gv.row(p.y0 * gw + p.x1) +
                 (1 - p.fx) * p.fy * gv.row(p.y1 * gw + p.x0) +
                 p.fx * p.fy * gv.row(p.y1 * gw + p.x1);
  }
  if (clamped) *clamped = nclamp;

  return grid.tape->emit(std::move(out), {grid, coords}, [ig, ic, gh, gw, n, c, geom](Tape& t, int self) {
    const Mat& g = t.node(self).grad;
    const Mat& gv2 = t.node(ig).val;
    Mat dgrid = Mat::Zero(gh * gw, c);
    Mat dcoords = Mat::Zero(n, 2);
    for (int i = 0; i < n; ++i) {
      const auto& p = (*geom)[static_cast<std::size_t>(i)];
      const auto go = g.row(i);
      dgrid.row(p.y0 * gw + p.x0) += (1 - p.fx) * (1 - p.fy) * go;
      dgrid.row(p.y0 * gw + p.x1) += p.fx * (1 - p.fy) * go;
      dgrid.row(p.y1 * gw + p.x0) += (1 - p.fx) * p.fy * go;
      dgrid.row(p.y1 * gw + p.x1) += p.fx * p.fy * go;
      if (!p.cx) {
        Eigen::RowVectorXd ddx = (1 - p.fy) * (gv2.row(p.y0 * gw + p.x1) - gv2.row(p.y0 * gw + p.x0)) +
                                 p.fy * (gv2.row(p.y1 * gw + p.x1) - gv2.row(p.y1 * gw + p.x0));
        dcoords(i, 0) = go.dot(ddx);
      }
      if (!p.cy) {
        Eigen::RowVectorXd ddy = (1 - p.fx) * (gv2.row(p.y1 * gw + p.x0) - gv2.row(p.y0 * gw + p.x0)) +
                                 p.fx * (gv2.row(p.y1 * gw + p.x1) - gv2.row(p.y0 * gw + p.x1));
        dcoords(i, 1) = go.dot(ddy);
      }
    }
    t.accum(ig, dgrid);
    t.accum(ic, dcoords);
  });
}

// Axis-angle [1,3] -> rotation matrix [3,3] (Rodrigues). The backward pass
// uses the rotation-vector derivative of Gallego & Yezzi; near zero angle it
// falls back to the exact limit dR/dv_i = [e_i]_x.
inline Var rodrigues(Var rv) {
  HM_CHECK(rv.rows() == 1 && rv.cols() == 3, InvariantError, "rodrigues: expects [1,3]");
  int ir = rv.idx;
  Vec3 v(rv.val()(0, 0), rv.val()(0, 1), rv.val()(0, 2));
  double th2 = v.squaredNorm();
  double th = std::sqrt(th2);
  Mat3 K;
  K << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  double a, b;
  if (th < 1e-8) {
    a = 1.0 - th2 / 6.0;
    b = 0.5 - th2 / 24.0;
  } else {
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  Mat3 R = Mat3::Identity() + a * K + b * (K * K);
  Mat out = R;

  return rv.tape->emit(std::move(out), {rv}, [ir, v, th2, R](Tape& t, int self) {
    const Mat& g = t.node(self).grad;  // [3,3]
    Mat dv = Mat::Zero(1, 3);
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e(i) = 1.0;
      Mat3 dR;
      if (th2 < 1e-16) {
        Mat3 ex;
        ex << 0, -e.z(), e.y(), e.z(), 0, -e.x(), -e.y(), e.x(), 0;
        dR = ex;
      } else {
        Mat3 Kv;
        Kv << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
        Vec3 w = v.cross((Mat3::Identity() - R) * e);
        Mat3 wx;
        wx << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
        dR = ((v(i) * Kv + wx) / th2) * R;
      }
      dv(0, i) = (g.array() * dR.array()).sum();
    }
    t.accum(ir, dv);
  });
}

// Conveniences.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace handmim::ad
