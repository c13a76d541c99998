#pragma once

// Evaluation metrics for 3D hands: mean point errors in millimeters, with
// and without similarity (scale, rotation, translation) alignment, F-scores
// at fixed distance thresholds, and the area under the fraction-correct
// curve. Points are [N, 3] rows in meters throughout; reported numbers are
// millimeters.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmim/error.hpp"
#include "handmim/mat.hpp"

namespace handmim {

using json = nlohmann::json;

struct Similarity {
  double s = 1.0;
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Mat apply(const Mat& pts) const {
    HM_CHECK(pts.cols() == 3, InvariantError, "similarity: points are not [N,3]");
    Mat out = s * (pts * r.transpose());
    out.rowwise() += t.transpose();
    return out;
  }
};

// Least-squares similarity fitting dst ~= s R src + t, with the usual
// determinant correction so r is always a proper rotation even when the
// best orthogonal fit would be a reflection.
inline Similarity umeyama(const Mat& src, const Mat& dst) {
  HM_CHECK(src.rows() == dst.rows() && src.cols() == 3 && dst.cols() == 3, DataError,
           "umeyama: point sets must be matching [N,3]");
  const int n = static_cast<int>(src.rows());
  HM_CHECK(n >= 3, DataError, "umeyama: needs at least 3 points");
  Eigen::RowVector3d mu_s = src.colwise().mean();
  Eigen::RowVector3d mu_d = dst.colwise().mean();
  Mat xc = src.rowwise() - mu_s;
  Mat yc = dst.rowwise() - mu_d;
  double var_s = xc.squaredNorm() / n;
  HM_CHECK(var_s > 1e-18, DataError, "umeyama: degenerate (all source points coincide)");

  Mat3 sigma = (yc.transpose() * xc) / n;
  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  Vec3 d = svd.singularValues();
  Vec3 flip = Vec3::Ones();
  if (u.determinant() * v.determinant() < 0.0) flip(2) = -1.0;

  Similarity out;
  out.r = u * flip.asDiagonal() * v.transpose();
  out.s = d.dot(flip) / var_s;
  out.t = mu_d.transpose() - out.s * out.r * mu_s.transpose();
  return out;
}

inline Mat procrustes_aligned(const Mat& pred, const Mat& gt) {
  return umeyama(pred, gt).apply(pred);
}

// Translates pred so that its root row lands on the ground truth root.
inline Mat root_align(const Mat& pred, const Mat& gt, int root = 0) {
  HM_CHECK(pred.rows() == gt.rows() && pred.cols() == 3 && gt.cols() == 3, DataError,
           "root_align: point sets must be matching [N,3]");
  HM_CHECK(root >= 0 && root < pred.rows(), InvariantError, "root_align: root out of range");
  Mat out = pred;
  out.rowwise() += (gt.row(root) - pred.row(root));
  return out;
}

inline std::vector<double> per_point_errors_mm(const Mat& a, const Mat& b) {
  HM_CHECK(a.rows() == b.rows() && a.cols() == 3 && b.cols() == 3, DataError,
           "per_point_errors_mm: point sets must be matching [N,3]");
  std::vector<double> e(static_cast<std::size_t>(a.rows()));
  for (int i = 0; i < a.rows(); ++i)
    e[static_cast<std::size_t>(i)] = (a.row(i) - b.row(i)).norm() * 1000.0;
  return e;
}

inline double mean_point_error_mm(const Mat& a, const Mat& b) {
  std::vector<double> e = per_point_errors_mm(a, b);
  double s = 0.0;
  for (double x : e) s += x;
  return s / static_cast<double>(e.size());
}

// Harmonic mean of precision (predicted points near some reference point)
// and recall (reference points near some prediction) at threshold tau,
// given in meters.
inline double f_score(const Mat& pred, const Mat& gt, double tau_m) {
  HM_CHECK(pred.cols() == 3 && gt.cols() == 3, DataError, "f_score: points are not [N,3]");
  HM_CHECK(pred.rows() > 0 && gt.rows() > 0, DataError, "f_score: empty point set");
  HM_CHECK(tau_m > 0.0, InvariantError, "f_score: nonpositive threshold");
  auto covered = [&](const Mat& from, const Mat& to) {
    int hit = 0;
    for (int i = 0; i < from.rows(); ++i) {
      double best = (to.rowwise() - from.row(i)).rowwise().norm().minCoeff();
      if (best <= tau_m) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(from.rows());
  };
  double precision = covered(pred, gt);
  double recall = covered(gt, pred);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// Fraction of errors at or below each threshold k * max_mm / steps,
// k = 0..steps.
inline std::vector<double> pck_curve(const std::vector<double>& errors_mm, double max_mm,
                                     int steps) {
  HM_CHECK(!errors_mm.empty(), DataError, "pck_curve: no errors");
  HM_CHECK(max_mm > 0.0 && steps >= 1, InvariantError, "pck_curve: bad grid");
  std::vector<double> curve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    double tau = max_mm * k / steps;
    int hit = 0;
    for (double e : errors_mm)
      if (e <= tau) ++hit;
    curve[static_cast<std::size_t>(k)] = static_cast<double>(hit) / errors_mm.size();
  }
  return curve;
}

// Trapezoidal area under an evenly spaced curve, normalized to [0, 1].
inline double auc_from_curve(const std::vector<double>& curve) {
  HM_CHECK(curve.size() >= 2, InvariantError, "auc_from_curve: need at least 2 points");
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < curve.size(); ++k) area += 0.5 * (curve[k] + curve[k + 1]);
  return area / static_cast<double>(curve.size() - 1);
}

inline double auc_pck(const std::vector<double>& errors_mm, double max_mm = 50.0,
                      int steps = 100) {
  return auc_from_curve(pck_curve(errors_mm, max_mm, steps));
}

// --------------------------------------------------------------------------
// Aggregate report.

struct SampleEval {
  Mat kp3d_pred;   // [J, 3]
  Mat kp3d_gt;     // [J, 3]
  Mat verts_pred;  // [P, 3]
  Mat verts_gt;    // [P, 3]
};

struct MetricReport {
  int n_samples = 0;
  double mpjpe_mm = 0.0;     // root-aligned keypoint error
  double pa_mpjpe_mm = 0.0;  // similarity-aligned keypoint error
  double mpvpe_mm = 0.0;     // root-aligned vertex error
  double pa_mpvpe_mm = 0.0;  // similarity-aligned vertex error
  double f5 = 0.0;           // F-score at 5 mm, similarity-aligned
  double f15 = 0.0;          // F-score at 15 mm, similarity-aligned
  double auc_joints = 0.0;   // area under the fraction-correct curve, 0-50 mm
  double auc_verts = 0.0;
  std::vector<double> curve_joints;  // fraction correct per threshold step
  std::vector<double> curve_verts;
  double curve_max_mm = 50.0;

  json to_json() const {
    json j;
    j["n_samples"] = n_samples;
    j["mpjpe_mm"] = mpjpe_mm;
    j["pa_mpjpe_mm"] = pa_mpjpe_mm;
    j["mpvpe_mm"] = mpvpe_mm;
    j["pa_mpvpe_mm"] = pa_mpvpe_mm;
    j["f_at_5mm"] = f5;
    j["f_at_15mm"] = f15;
    j["auc_joints"] = auc_joints;
    j["auc_verts"] = auc_verts;
    return j;
  }
};

// Errors are averaged per sample and pooled for the threshold curves. The
// wrist (row 0) is the root for unaligned numbers, matching the convention
// of root-relative hand benchmarks.
inline MetricReport compute_report(const std::vector<SampleEval>& samples, int curve_steps = 100,
                                   double curve_max_mm = 50.0) {
  HM_CHECK(!samples.empty(), DataError, "compute_report: no samples");
  MetricReport r;
  r.n_samples = static_cast<int>(samples.size());
  r.curve_max_mm = curve_max_mm;
  std::vector<double> pooled_j, pooled_v;
  for (const SampleEval& s : samples) {
    Mat kp_root = root_align(s.kp3d_pred, s.kp3d_gt);
    Mat v_root = root_align(s.verts_pred, s.verts_gt, 0);
    r.mpjpe_mm += mean_point_error_mm(kp_root, s.kp3d_gt);
    r.mpvpe_mm += mean_point_error_mm(v_root, s.verts_gt);

    Mat kp_pa = procrustes_aligned(s.kp3d_pred, s.kp3d_gt);
    Mat v_pa = procrustes_aligned(s.verts_pred, s.verts_gt);
    r.pa_mpjpe_mm += mean_point_error_mm(kp_pa, s.kp3d_gt);
    r.pa_mpvpe_mm += mean_point_error_mm(v_pa, s.verts_gt);
    r.f5 += f_score(v_pa, s.verts_gt, 0.005);
    r.f15 += f_score(v_pa, s.verts_gt, 0.015);

    for (double e : per_point_errors_mm(kp_pa, s.kp3d_gt)) pooled_j.push_back(e);
    for (double e : per_point_errors_mm(v_pa, s.verts_gt)) pooled_v.push_back(e);
  }
  const double n = static_cast<double>(r.n_samples);
  r.mpjpe_mm /= n;
  r.pa_mpjpe_mm /= n;
  r.mpvpe_mm /= n;
  r.pa_mpvpe_mm /= n;
  r.f5 /= n;
  r.f15 /= n;
  r.curve_joints = pck_curve(pooled_j, curve_max_mm, curve_steps);
  r.curve_verts = pck_curve(pooled_v, curve_max_mm, curve_steps);
  r.auc_joints = auc_from_curve(r.curve_joints);
  r.auc_verts = auc_from_curve(r.curve_verts);
  return r;
}

}  // namespace handmim
