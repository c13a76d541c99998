#pragma once

// Checkpoints: every named parameter array, optimizer moments and step
// counters, running centers, the effective config, the global step and the
// generator state, in one archive. Loading restores training bit-exactly on
// the same platform.

#include <map>
#include <string>

#include "handmim/config.hpp"
#include "handmim/container.hpp"
#include "handmim/nn.hpp"
#include "handmim/optim.hpp"
#include "handmim/rng.hpp"

namespace handmim {

struct Checkpoint {
  std::string kind;  // "pretrain" or "finetune"
  Config config;
  long long step = 0;
  std::string rng_state;
  ParamStore student;
  ParamStore teacher;             // empty for finetune checkpoints
  Mat center_pose, center_patch;  // empty unless pretraining
  std::map<std::string, Mat> opt_m, opt_v;
  std::map<std::string, long long> opt_steps;

  static constexpr const char* kFormat = "handmim-checkpoint";

  void take_optimizer(const AdamW& opt) {
    opt_m = opt.m;
    opt_v = opt.v;
    opt_steps = opt.steps;
  }

  void restore_optimizer(AdamW& opt) const {
    opt.m = opt_m;
    opt.v = opt_v;
    opt.steps = opt_steps;
  }

  void save(const std::string& path) const {
    Archive a;
    a.meta["format"] = kFormat;
    a.meta["kind"] = kind;
    a.meta["step"] = step;
    a.meta["rng"] = rng_state;
    a.meta["config"] = config.to_json();
    for (const auto& [k, v] : student.params) a.put("student/" + k, v);
    for (const auto& [k, v] : teacher.params) a.put("teacher/" + k, v);
    if (center_pose.size() > 0) a.put("center_pose", center_pose);
    if (center_patch.size() > 0) a.put("center_patch", center_patch);
    for (const auto& [k, v] : opt_m) a.put("optm/" + k, v);
    for (const auto& [k, v] : opt_v) a.put("optv/" + k, v);
    for (const auto& [k, v] : opt_steps) {
      Mat t(1, 1);
      t(0, 0) = static_cast<double>(v);
      a.put("optt/" + k, t);
    }
    a.save(path);
  }

  static Checkpoint load(const std::string& path) {
    Archive a = Archive::load(path);
    HM_CHECK(a.meta.value("format", "") == kFormat, IoError,
             path + ": not a checkpoint archive");
    Checkpoint c;
    c.kind = a.meta.value("kind", "");
    c.step = a.meta.value("step", 0LL);
    c.rng_state = a.meta.value("rng", "");
    c.config = Config::from_json(a.meta.value("config", json::object()));
    for (const auto& name : a.names()) {
      const Mat& m = a.get(name);
      if (name.rfind("student/", 0) == 0)
        c.student.add(name.substr(8), m);
      else if (name.rfind("teacher/", 0) == 0)
        c.teacher.add(name.substr(8), m);
      else if (name.rfind("optm/", 0) == 0)
        c.opt_m[name.substr(5)] = m;
      else if (name.rfind("optv/", 0) == 0)
        c.opt_v[name.substr(5)] = m;
      else if (name.rfind("optt/", 0) == 0)
        c.opt_steps[name.substr(5)] = static_cast<long long>(m(0, 0));
      else if (name == "center_pose")
        c.center_pose = m;
      else if (name == "center_patch")
        c.center_patch = m;
      else
        throw IoError(path + ": unrecognized array '" + name + "'");
    }
    return c;
  }
};

}  // namespace handmim
