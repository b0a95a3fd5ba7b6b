#pragma once

#include <qspace/delaunay.hpp>
#include <qspace/grid.hpp>
#include <qspace/types.hpp>

#include <memory>
#include <span>
#include <vector>

namespace qspace::baseline {

// HYDI-style comparison method: piecewise-linear interpolation of the sampled
// signal over a Delaunay tetrahedralization of the (augmented) sample points.
// The scheme is expected to already carry the origin anchor and the zero
// shell so that the hull covers the region of interest; grid points outside
// the hull evaluate to 0.
class LinearInterpolator {
 public:
  explicit LinearInterpolator(std::shared_ptr<const AcquisitionScheme> scheme)
      : scheme_(std::move(scheme)), tets_(scheme_->points) {}

  double value_at(const Eigen::VectorXd& y, const QPoint& x) const {
    return tets_.interpolate(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                             x);
  }

  Eigen::VectorXd resample(const Eigen::VectorXd& y, std::span<const QPoint> queries) const {
    if (static_cast<std::size_t>(y.size()) != scheme_->size())
      throw std::invalid_argument("linear interpolation: signal length does not match scheme");
    Eigen::VectorXd out(static_cast<Eigen::Index>(queries.size()));
    for (std::size_t i = 0; i < queries.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = value_at(y, queries[i]);
    return out;
  }

  delaunay::Tetrahedralization::Location locate(const QPoint& x) const { return tets_.locate(x); }

  // Locations can be cached once per query set and reused across voxels.
  std::vector<delaunay::Tetrahedralization::Location> locate_all(
      std::span<const QPoint> queries) const {
    std::vector<delaunay::Tetrahedralization::Location> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(tets_.locate(q));
    return out;
  }

  static double apply(const delaunay::Tetrahedralization::Location& loc, const Eigen::VectorXd& y) {
    return delaunay::Tetrahedralization::apply(
        loc, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  }

  const AcquisitionScheme& scheme() const { return *scheme_; }

 private:
  std::shared_ptr<const AcquisitionScheme> scheme_;
  delaunay::Tetrahedralization tets_;
};

inline Eigen::VectorXd linear_resample(std::shared_ptr<const AcquisitionScheme> scheme,
                                       const Eigen::VectorXd& y, const eap::CartesianGrid& grid) {
  const LinearInterpolator interp(std::move(scheme));
  const auto queries = grid.q_points();
  return interp.resample(y, queries);
}

}  // namespace qspace::baseline
