#pragma once

#include <map>
#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/error.hpp"
#include "handmim/mat.hpp"
#include "handmim/rng.hpp"

// Parameter storage and small reusable network pieces. Parameters live in a
// sorted name -> matrix map; sorted iteration keeps EMA updates, optimizer
// sweeps and checkpoint layouts deterministic.

namespace handmim {

struct ParamStore {
  std::map<std::string, Mat> params;

  bool has(const std::string& name) const { return params.count(name) > 0; }

  Mat& at(const std::string& name) {
    auto it = params.find(name);
    HM_CHECK(it != params.end(), InvariantError, "missing parameter '" + name + "'");
    return it->second;
  }

  const Mat& at(const std::string& name) const {
    auto it = params.find(name);
    HM_CHECK(it != params.end(), InvariantError, "missing parameter '" + name + "'");
    return it->second;
  }

  void add(const std::string& name, Mat m) {
    HM_CHECK(!has(name), InvariantError, "duplicate parameter '" + name + "'");
    params.emplace(name, std::move(m));
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(params.size());
    for (const auto& [k, v] : params) out.push_back(k);
    return out;
  }

  std::size_t count() const { return params.size(); }

  long long scalar_count() const {
    long long n = 0;
    for (const auto& [k, v] : params) n += v.size();
    return n;
  }
};

inline Mat trunc_normal_mat(int r, int c, Rng& rng, double stddev = 0.02) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.trunc_normal(stddev);
  return m;
}

// y = LN(x) * g + b, normalizing each row.
inline ad::Var layer_norm(ad::Tape& t, ad::Var x, ad::Var g, ad::Var b, double eps = 1e-6) {
  ad::Var mu = ad::rowwise_mean(x);
  ad::Var centered = ad::add_colvec(x, ad::neg(mu));
  ad::Var var = ad::rowwise_mean(ad::square(centered));
  ad::Var inv = ad::divv(t.constant(Mat::Ones(x.rows(), 1)),
                         ad::sqrt_(ad::add_scalar(var, eps)));
  ad::Var normed = ad::mul_colvec(centered, inv);
  return ad::add_rowvec(ad::mul_rowvec(normed, g), b);
}

// x @ w + b applied rowwise.
inline ad::Var linear(ad::Tape& t, ad::Var x, ad::Var w, ad::Var b) {
  (void)t;
  return ad::add_rowvec(ad::matmul(x, w), b);
}

// Three-layer projection head with a leading layer norm:
// LN -> Linear+GELU -> Linear+GELU -> Linear. Parameter names under prefix:
// ln_g ln_b w1 b1 w2 b2 w3 b3.
inline void init_mlp3(ParamStore& ps, const std::string& prefix, int in_dim, int hidden,
                      int out_dim, Rng& rng) {
  ps.add(prefix + "ln_g", Mat::Ones(1, in_dim));
  ps.add(prefix + "ln_b", Mat::Zero(1, in_dim));
  ps.add(prefix + "w1", trunc_normal_mat(in_dim, hidden, rng));
  ps.add(prefix + "b1", Mat::Zero(1, hidden));
  ps.add(prefix + "w2", trunc_normal_mat(hidden, hidden, rng));
  ps.add(prefix + "b2", Mat::Zero(1, hidden));
  // Small final projection keeps early logits near zero, which keeps the
  // sharpened teacher distributions from saturating at initialization.
  ps.add(prefix + "w3", trunc_normal_mat(hidden, out_dim, rng, 0.002));
  ps.add(prefix + "b3", Mat::Zero(1, out_dim));
}

inline ad::Var mlp3(ad::Tape& t, ad::Var x, const ParamStore& ps, const std::string& prefix,
                    bool trainable) {
  auto p = [&](const std::string& n) { return t.param(ps.at(prefix + n), prefix + n, trainable); };
  ad::Var h = layer_norm(t, x, p("ln_g"), p("ln_b"));
  h = ad::gelu(linear(t, h, p("w1"), p("b1")));
  h = ad::gelu(linear(t, h, p("w2"), p("b2")));
  return linear(t, h, p("w3"), p("b3"));
}

// Two-layer MLP: Linear+GELU -> Linear. Names: w1 b1 w2 b2.
inline void init_mlp2(ParamStore& ps, const std::string& prefix, int in_dim, int hidden,
                      int out_dim, Rng& rng, double out_std = 0.02) {
  ps.add(prefix + "w1", trunc_normal_mat(in_dim, hidden, rng));
  ps.add(prefix + "b1", Mat::Zero(1, hidden));
  ps.add(prefix + "w2", trunc_normal_mat(hidden, out_dim, rng, out_std));
  ps.add(prefix + "b2", Mat::Zero(1, out_dim));
}

inline ad::Var mlp2(ad::Tape& t, ad::Var x, const ParamStore& ps, const std::string& prefix,
                    bool trainable) {
  auto p = [&](const std::string& n) { return t.param(ps.at(prefix + n), prefix + n, trainable); };
  ad::Var h = ad::gelu(linear(t, x, p("w1"), p("b1")));
  return linear(t, h, p("w2"), p("b2"));
}

}  // namespace handmim
