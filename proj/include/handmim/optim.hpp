#pragma once

// Decoupled-weight-decay Adam over a named parameter store. Each parameter
// keeps its own step counter; a parameter whose gradient is missing or
// exactly zero this step is skipped entirely (no moment update, no decay,
// no counter advance), which keeps frozen and untouched parameters
// bit-identical and makes "zero loss weight" runs provably inert.

#include <cmath>
#include <map>
#include <string>

#include "handmim/error.hpp"
#include "handmim/mat.hpp"
#include "handmim/nn.hpp"

namespace handmim {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    HM_CHECK(lr >= 0.0, ConfigError, "adamw: negative learning rate");
    HM_CHECK(beta1 >= 0.0 && beta1 < 1.0, ConfigError, "adamw: beta1 outside [0,1)");
    HM_CHECK(beta2 >= 0.0 && beta2 < 1.0, ConfigError, "adamw: beta2 outside [0,1)");
    HM_CHECK(eps > 0.0, ConfigError, "adamw: nonpositive epsilon");
    HM_CHECK(weight_decay >= 0.0, ConfigError, "adamw: negative weight decay");
  }
};

struct AdamW {
  AdamWConfig cfg;
  std::map<std::string, Mat> m, v;
  std::map<std::string, long long> steps;

  explicit AdamW(AdamWConfig c = AdamWConfig{}) : cfg(c) { cfg.validate(); }

  // lr_scale multiplies the base rate for this step (warmup schedules).
  void step(ParamStore& params, const std::map<std::string, Mat>& grads,
            double lr_scale = 1.0) {
    HM_CHECK(lr_scale >= 0.0, InvariantError, "adamw: negative lr scale");
    for (const auto& [name, g] : grads) {
      if (!params.has(name)) continue;
      if (g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0) continue;
      Mat& p = params.at(name);
      HM_CHECK(p.rows() == g.rows() && p.cols() == g.cols(), InvariantError,
               "adamw: gradient shape mismatch for '" + name + "'");
      HM_CHECK(g.allFinite(), NumericError, "adamw: non-finite gradient for '" + name + "'");
      auto mit = m.find(name);
      if (mit == m.end()) {
        m[name] = Mat::Zero(p.rows(), p.cols());
        v[name] = Mat::Zero(p.rows(), p.cols());
        steps[name] = 0;
      }
      long long t = ++steps[name];
      Mat& mm = m[name];
      Mat& vv = v[name];
      mm = cfg.beta1 * mm + (1.0 - cfg.beta1) * g;
      vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      double lr = cfg.lr * lr_scale;
      Mat update = (mm / bc1).array() / ((vv / bc2).array().sqrt() + cfg.eps);
      p -= lr * update + (lr * cfg.weight_decay) * p;
    }
  }
};

}  // namespace handmim
