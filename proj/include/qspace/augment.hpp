#pragma once

#include <qspace/types.hpp>

#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace qspace::augment {

// Synthetic anchors added after training, before prediction: one sample at the
// origin with signal 1 and, unless zero_dirs is empty, a shell of zero-signal
// samples at radius q_cut.

inline double default_q_cut(const AcquisitionScheme& scheme, double multiplier = 1.25) {
  return multiplier * scheme.max_q();
}

// 20 unit vectors at the vertices of a regular dodecahedron; antipodally
// symmetric, used as the default zero-shell directions.
inline std::vector<QPoint> dodecahedron_directions() {
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  const double s = 1.0 / std::sqrt(3.0);
  std::vector<QPoint> dirs;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) dirs.push_back({s * sx, s * sy, s * sz});
  const double a = (1.0 / phi) / std::sqrt(3.0);
  const double b = phi / std::sqrt(3.0);
  for (double sa : {-1.0, 1.0})
    for (double sb : {-1.0, 1.0}) {
      dirs.push_back({0.0, sa * a, sb * b});
      dirs.push_back({sa * a, sb * b, 0.0});
      dirs.push_back({sb * b, 0.0, sa * a});
    }
  return dirs;
}

inline std::shared_ptr<AcquisitionScheme> augment_scheme(const AcquisitionScheme& scheme,
                                                         double q_cut,
                                                         std::span<const QPoint> zero_dirs) {
  if (!(q_cut > scheme.max_q()))
    throw std::invalid_argument("augment: q_cut must exceed the largest measured |q|");
  auto out = std::make_shared<AcquisitionScheme>(scheme);
  const int origin_shell = out->shell_count();
  out->b_values.push_back(0.0);
  out->points.push_back(QPoint{0.0, 0.0, 0.0});
  out->shell_ids.push_back(origin_shell);
  if (!zero_dirs.empty()) {
    const int cut_shell = out->shell_count();
    out->b_values.push_back(out->t_d * q_cut * q_cut);
    for (const QPoint& d : zero_dirs) {
      const double len = d.magnitude();
      if (!(len > 0.0)) throw std::invalid_argument("augment: zero-length direction");
      out->points.push_back((q_cut / len) * d);
      out->shell_ids.push_back(cut_shell);
    }
  }
  out->validate();
  return out;
}

inline Eigen::VectorXd augment_signal(const Eigen::VectorXd& y, std::size_t zero_count) {
  Eigen::VectorXd out(y.size() + 1 + static_cast<Eigen::Index>(zero_count));
  out.head(y.size()) = y;
  out[y.size()] = 1.0;  // origin anchor
  out.tail(static_cast<Eigen::Index>(zero_count)).setZero();
  return out;
}

// Appends one origin sample (signal 1) and |zero_dirs| samples at radius q_cut
// (signal 0). Inputs are untouched; original sample ordering is preserved.
inline std::pair<std::shared_ptr<AcquisitionScheme>, Eigen::VectorXd> augment(
    const AcquisitionScheme& scheme, const Eigen::VectorXd& y, double q_cut,
    std::span<const QPoint> zero_dirs) {
  if (static_cast<std::size_t>(y.size()) != scheme.size())
    throw std::invalid_argument("augment: signal length does not match scheme");
  auto s = augment_scheme(scheme, q_cut, zero_dirs);
  return {s, augment_signal(y, zero_dirs.size())};
}

// Zero the predicted mean beyond the cut-off radius; variances are untouched.
inline GpPrediction apply_cutoff(GpPrediction pred, std::span<const QPoint> queries, double q_cut) {
  if (static_cast<std::size_t>(pred.mean.size()) != queries.size() ||
      pred.variance.size() != pred.mean.size())
    throw std::invalid_argument("apply_cutoff: prediction and query lengths differ");
  for (Eigen::Index i = 0; i < pred.mean.size(); ++i)
    if (queries[static_cast<std::size_t>(i)].magnitude() > q_cut) pred.mean[i] = 0.0;
  return pred;
}

// The zeros beyond the cut-off are assertions of the method, not uncertain
// estimates: give them the same variance the synthetic anchors carry so the
// downstream least-squares readjustment cannot park signal mass out there.
inline GpPrediction anchor_cutoff_variance(GpPrediction pred, std::span<const QPoint> queries,
                                           double q_cut, double sigma_n2) {
  if (static_cast<std::size_t>(pred.mean.size()) != queries.size() ||
      pred.variance.size() != pred.mean.size())
    throw std::invalid_argument("anchor_cutoff_variance: prediction and query lengths differ");
  for (Eigen::Index i = 0; i < pred.variance.size(); ++i)
    if (queries[static_cast<std::size_t>(i)].magnitude() > q_cut)
      pred.variance[i] = std::min(pred.variance[i], sigma_n2);
  return pred;
}

}  // namespace qspace::augment
