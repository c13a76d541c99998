#pragma once

// Inference over a labeled dataset plus report emission: per-sample
// predictions as JSON lines, the aggregate metrics as JSON, and the
// fraction-correct curves as CSV for plotting.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "handmim/finetune.hpp"
#include "handmim/metrics.hpp"

namespace handmim {

struct Prediction {
  int index = 0;
  Mat theta, beta, trans;  // [1,48] [1,4] [1,3]
  Mat kp3d;                // [21, 3]
  Mat verts;               // [63, 3]
};

// Runs the regression head over every sample; no gradients, fixed order.
inline std::vector<Prediction> predict_all(const ParamStore& params, const FinetuneConfig& cfg,
                                           const HandModelData& hand,
                                           const std::vector<FinetuneSample>& samples) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FinetuneSample& s = samples[i];
    ad::Tape t;
    ad::Var toks = patch_tokens(t, s.crop, params, "bb.", cfg.vit, false);
    ad::Var seq = assemble_sequence(t, toks, params, "bb.", cfg.vit, false);
    BackboneOut bb = run_backbone(t, seq, params, "bb.", cfg.vit, false);
    MeshOut mesh = run_mesh_head(t, bb.cls, bb.patches, params, "mesh.", cfg.vit, cfg.head,
                                 hand, s.cam, false);
    Prediction p;
    p.index = static_cast<int>(i);
    p.theta = mesh.theta.val();
    p.beta = mesh.beta.val();
    p.trans = mesh.trans.val();
    p.kp3d = mesh.kp3d.val();
    p.verts = mesh.verts.val();
    out.push_back(std::move(p));
  }
  return out;
}

inline json row_to_json(const Mat& m) {
  json a = json::array();
  for (int c = 0; c < m.cols(); ++c) a.push_back(m(0, c));
  return a;
}

inline void write_predictions(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path, std::ios::binary);
  HM_CHECK(out.good(), IoError, "cannot write " + path);
  for (const Prediction& p : preds) {
    json j;
    j["index"] = p.index;
    j["theta"] = row_to_json(p.theta);
    j["beta"] = row_to_json(p.beta);
    j["trans"] = row_to_json(p.trans);
    j["kp3d"] = mat_to_json(p.kp3d);
    j["verts"] = mat_to_json(p.verts);
    out << j.dump() << '\n';
  }
  HM_CHECK(out.good(), IoError, "short write to " + path);
}

inline MetricReport report_against(const std::vector<Prediction>& preds,
                                   const std::vector<FinetuneSample>& samples) {
  HM_CHECK(preds.size() == samples.size(), InvariantError,
           "report_against: prediction/sample count mismatch");
  std::vector<SampleEval> evals;
  evals.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    evals.push_back({preds[i].kp3d, samples[i].target.kp3d, preds[i].verts,
                     samples[i].target.verts});
  return compute_report(evals);
}

inline void write_curves_csv(const std::string& path, const MetricReport& r) {
  std::ofstream out(path, std::ios::binary);
  HM_CHECK(out.good(), IoError, "cannot write " + path);
  out.precision(10);
  out << "threshold_mm,pck_joints,pck_verts\n";
  const int steps = static_cast<int>(r.curve_joints.size()) - 1;
  for (int k = 0; k <= steps; ++k) {
    double thr = r.curve_max_mm * k / steps;
    out << thr << ',' << r.curve_joints[static_cast<std::size_t>(k)] << ','
        << r.curve_verts[static_cast<std::size_t>(k)] << '\n';
  }
  HM_CHECK(out.good(), IoError, "short write to " + path);
}

// predictions.jsonl + metrics.json + curves.csv under out_dir.
inline MetricReport run_evaluation(const ParamStore& params, const FinetuneConfig& cfg,
                                   const HandModelData& hand,
                                   const std::vector<FinetuneSample>& samples,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<Prediction> preds = predict_all(params, cfg, hand, samples);
  MetricReport report = report_against(preds, samples);
  write_predictions((fs::path(out_dir) / "predictions.jsonl").string(), preds);
  std::ofstream mj((fs::path(out_dir) / "metrics.json").string(), std::ios::binary);
  HM_CHECK(mj.good(), IoError, "cannot write metrics under " + out_dir);
  mj << report.to_json().dump(2) << '\n';
  write_curves_csv((fs::path(out_dir) / "curves.csv").string(), report);
  return report;
}

}  // namespace handmim
