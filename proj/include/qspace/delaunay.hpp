#pragma once

#include <qspace/random.hpp>
#include <qspace/types.hpp>

#include <boost/multiprecision/cpp_int.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace qspace::delaunay {

// Incremental Bowyer-Watson tetrahedralization in 3-D. Topology decisions use
// exact integer predicates on snapped coordinates; a tiny deterministic jitter
// on the integers breaks the cosphericality of shell-structured inputs.
// Interpolation weights are computed from the true double coordinates, so
// barycentric interpolation reproduces affine functions to machine precision.

using BigInt = boost::multiprecision::int256_t;

namespace detail {

using ICoord = std::array<std::int64_t, 3>;

inline BigInt orient3d(const ICoord& a, const ICoord& b, const ICoord& c, const ICoord& d) {
  const BigInt ax = b[0] - a[0], ay = b[1] - a[1], az = b[2] - a[2];
  const BigInt bx = c[0] - a[0], by = c[1] - a[1], bz = c[2] - a[2];
  const BigInt cx = d[0] - a[0], cy = d[1] - a[1], cz = d[2] - a[2];
  return ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx);
}

// For a positively oriented tet (a,b,c,d): > 0 iff e lies strictly inside the
// circumsphere.
inline BigInt insphere(const ICoord& a, const ICoord& b, const ICoord& c, const ICoord& d,
                       const ICoord& e) {
  std::array<BigInt, 4> px, py, pz, pw;
  const std::array<const ICoord*, 4> pts{&a, &b, &c, &d};
  for (int i = 0; i < 4; ++i) {
    const BigInt dx = (*pts[i])[0] - e[0];
    const BigInt dy = (*pts[i])[1] - e[1];
    const BigInt dz = (*pts[i])[2] - e[2];
    px[i] = dx;
    py[i] = dy;
    pz[i] = dz;
    pw[i] = dx * dx + dy * dy + dz * dz;
  }
  auto det3 = [&](int i, int j, int k) {
    return px[i] * (py[j] * pz[k] - pz[j] * py[k]) - py[i] * (px[j] * pz[k] - pz[j] * px[k]) +
           pz[i] * (px[j] * py[k] - py[j] * px[k]);
  };
  return pw[0] * det3(1, 2, 3) - pw[1] * det3(0, 2, 3) + pw[2] * det3(0, 1, 3) -
         pw[3] * det3(0, 1, 2);
}

// faces[i] lists the face opposite vertex i, ordered so that
// orient3d(f0, f1, f2, v_i) > 0 for a positively oriented tet.
inline constexpr std::array<std::array<int, 3>, 4> kFaces{
    {{2, 1, 3}, {0, 2, 3}, {1, 0, 3}, {0, 1, 2}}};

}  // namespace detail

class Tetrahedralization {
 public:
  struct Location {
    bool inside = false;          // false: outside the convex hull
    std::array<int, 4> vertices;  // input point indices
    std::array<double, 4> weights;
  };

  explicit Tetrahedralization(std::span<const QPoint> points) {
    if (points.size() < 4)
      throw std::invalid_argument("tetrahedralization: need at least 4 points");
    build(points);
    if (first_real_tet_ < 0)
      throw std::invalid_argument("tetrahedralization: degenerate (coplanar) point set");
  }

  // Piecewise-linear interpolation of per-point values; 0 outside the hull.
  double interpolate(std::span<const double> values, const QPoint& x) const {
    const Location loc = locate(x);
    return apply(loc, values);
  }

  static double apply(const Location& loc, std::span<const double> values) {
    if (!loc.inside) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
      acc += loc.weights[static_cast<std::size_t>(i)] *
             values[static_cast<std::size_t>(loc.vertices[static_cast<std::size_t>(i)])];
    return acc;
  }

  // Thread-safe: walks from a fixed start tet and touches no shared state.
  // The integer walk gives a candidate cell; a short refinement walk in true
  // coordinates then finds a cell actually containing the query, so vertex
  // queries reproduce exactly and interpolated values never leave the range
  // of their cell's vertex values.
  Location locate(const QPoint& x) const {
    Location loc;
    const detail::ICoord ix = snap(x);
    int t = walk(ix, first_real_tet_);
    const double snap_tol = 1024.0 / scale_;

    Location best;
    double best_worst = -1e300;

    for (int step = 0; step < 64; ++step) {
      const Tet& tet = tets_[static_cast<std::size_t>(t)];
      if (has_super_vertex(tet)) {
        // next to (or beyond) the hull: queries at a hull vertex still count
        for (int i = 0; i < 4; ++i) {
          const int v = tet.v[static_cast<std::size_t>(i)];
          if (v >= n_real_vertices_) continue;
          if ((x - true_points_[static_cast<std::size_t>(v)]).magnitude() <= snap_tol) {
            loc.inside = true;
            loc.weights = {0.0, 0.0, 0.0, 0.0};
            loc.weights[static_cast<std::size_t>(i)] = 1.0;
            for (int k = 0; k < 4; ++k) {
              const int vk = tet.v[static_cast<std::size_t>(k)];
              loc.vertices[static_cast<std::size_t>(k)] =
                  (vk < n_real_vertices_) ? point_index_[static_cast<std::size_t>(vk)]
                                          : point_index_[static_cast<std::size_t>(v)];
            }
            return loc;
          }
        }
        return loc;  // outside the hull
      }

      const QPoint& v0 = true_points_[static_cast<std::size_t>(tet.v[0])];
      Eigen::Matrix3d m;
      for (int c = 1; c < 4; ++c) {
        const QPoint& vc =
            true_points_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(c)])];
        m(0, c - 1) = vc.x - v0.x;
        m(1, c - 1) = vc.y - v0.y;
        m(2, c - 1) = vc.z - v0.z;
      }
      const Eigen::Vector3d rhs(x.x - v0.x, x.y - v0.y, x.z - v0.z);
      const Eigen::Vector3d lam = m.fullPivLu().solve(rhs);
      const std::array<double, 4> weights{1.0 - lam.sum(), lam[0], lam[1], lam[2]};

      int worst = -1;
      double worst_val = -1e-12;
      for (int i = 0; i < 4; ++i) {
        if (weights[static_cast<std::size_t>(i)] < worst_val) {
          worst_val = weights[static_cast<std::size_t>(i)];
          worst = i;
        }
      }
      if (worst < 0) {
        loc.inside = true;
        loc.weights = weights;
        for (int i = 0; i < 4; ++i)
          loc.vertices[static_cast<std::size_t>(i)] =
              point_index_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(i)])];
        return loc;
      }
      if (worst_val > best_worst) {
        best_worst = worst_val;
        best.inside = true;
        best.weights = weights;
        for (int i = 0; i < 4; ++i)
          best.vertices[static_cast<std::size_t>(i)] =
              point_index_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(i)])];
      }
      const int next = tet.nbr[static_cast<std::size_t>(worst)];
      if (next < 0) return loc;  // beyond a hull face
      t = next;
    }
    // refinement cycled on rounding noise; accept the best cell seen
    return (best_worst >= -1e-6) ? best : loc;
  }

  std::size_t tet_count() const {
    std::size_t c = 0;
    for (const auto& t : tets_)
      if (t.alive && !has_super_vertex(t)) ++c;
    return c;
  }

  // Exhaustive empty-circumsphere verification with the exact predicates;
  // throws when any real vertex lies strictly inside the circumsphere of a
  // real tetrahedron. Meant for tests.
  void verify_empty_circumspheres() const {
    for (const auto& t : tets_) {
      if (!t.alive || has_super_vertex(t)) continue;
      for (int v = 0; v < n_real_vertices_; ++v) {
        if (v == t.v[0] || v == t.v[1] || v == t.v[2] || v == t.v[3]) continue;
        if (detail::insphere(ipts_[static_cast<std::size_t>(t.v[0])],
                             ipts_[static_cast<std::size_t>(t.v[1])],
                             ipts_[static_cast<std::size_t>(t.v[2])],
                             ipts_[static_cast<std::size_t>(t.v[3])],
                             ipts_[static_cast<std::size_t>(v)]) > 0)
          throw std::logic_error("tetrahedralization: circumsphere is not empty");
      }
    }
  }

 private:
  struct Tet {
    std::array<int, 4> v;    // vertex ids into ipts_
    std::array<int, 4> nbr;  // neighbor opposite vertex i, -1 at the boundary
    bool alive = true;
  };

  std::vector<detail::ICoord> ipts_;
  std::vector<QPoint> true_points_;   // per vertex, true coordinates
  std::vector<int> point_index_;      // per vertex, index into the input span
  std::vector<Tet> tets_;
  int first_real_tet_ = -1;
  int hint_ = 0;  // only used during construction
  double scale_ = 1.0;
  int n_real_vertices_ = 0;

  detail::ICoord snap(const QPoint& p) const {
    return {static_cast<std::int64_t>(std::llround(p.x * scale_)),
            static_cast<std::int64_t>(std::llround(p.y * scale_)),
            static_cast<std::int64_t>(std::llround(p.z * scale_))};
  }

  bool has_super_vertex(const Tet& t) const {
    for (int v : t.v)
      if (v >= n_real_vertices_) return true;
    return false;
  }

  void build(std::span<const QPoint> points) {
    double max_abs = 0.0;
    for (const auto& p : points) {
      if (!p.is_finite()) throw std::invalid_argument("tetrahedralization: non-finite point");
      max_abs = std::max({max_abs, std::abs(p.x), std::abs(p.y), std::abs(p.z)});
    }
    scale_ = (max_abs > 0.0) ? (static_cast<double>(1LL << 28) / (1.01 * max_abs)) : 1.0;

    // deduplicate on true coordinates, then jitter the snapped integers
    std::map<std::array<double, 3>, int> seen;
    std::map<detail::ICoord, int> taken;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::array<double, 3> key{points[i].x, points[i].y, points[i].z};
      if (seen.count(key)) continue;
      seen[key] = static_cast<int>(i);
      detail::ICoord ic = snap(points[i]);
      std::uint64_t hash = splitmix64(0x7e7a5eedULL + i);
      for (int axis = 0; axis < 3; ++axis) {
        ic[static_cast<std::size_t>(axis)] += static_cast<std::int64_t>(hash % 255) - 127;
        hash = splitmix64(hash);
      }
      while (taken.count(ic)) ++ic[0];  // extremely unlikely integer collision
      taken[ic] = 1;
      ipts_.push_back(ic);
      true_points_.push_back(points[i]);
      point_index_.push_back(static_cast<int>(i));
    }
    n_real_vertices_ = static_cast<int>(ipts_.size());
    if (n_real_vertices_ < 4)
      throw std::invalid_argument("tetrahedralization: fewer than 4 distinct points");

    // reject genuinely flat inputs before the jitter hides them
    {
      std::vector<detail::ICoord> raw;
      raw.reserve(true_points_.size());
      for (const auto& p : true_points_) raw.push_back(snap(p));
      bool full_rank = false;
      const std::size_t count = raw.size();
      std::size_t b = 1;
      while (b < count && raw[b] == raw[0]) ++b;
      for (std::size_t c = b + 1; c < count && !full_rank; ++c) {
        // c collinear with (0, b)?
        for (std::size_t e = c + 1; e < count; ++e) {
          if (detail::orient3d(raw[0], raw[b], raw[c], raw[e]) != 0) {
            full_rank = true;
            break;
          }
        }
      }
      if (!full_rank)
        throw std::invalid_argument("tetrahedralization: degenerate (coplanar) point set");
    }

    // enclosing super tetrahedron
    const std::int64_t big = 1LL << 31;
    ipts_.push_back({-big, -big, -big});
    ipts_.push_back({3 * big, -big, -big});
    ipts_.push_back({-big, 3 * big, -big});
    ipts_.push_back({-big, -big, 3 * big});
    for (int k = 0; k < 4; ++k) {
      true_points_.push_back({});
      point_index_.push_back(-1);
    }
    Tet root;
    root.v = {n_real_vertices_, n_real_vertices_ + 1, n_real_vertices_ + 2, n_real_vertices_ + 3};
    if (detail::orient3d(ipts_[static_cast<std::size_t>(root.v[0])],
                         ipts_[static_cast<std::size_t>(root.v[1])],
                         ipts_[static_cast<std::size_t>(root.v[2])],
                         ipts_[static_cast<std::size_t>(root.v[3])]) < 0)
      std::swap(root.v[2], root.v[3]);
    root.nbr = {-1, -1, -1, -1};
    tets_.push_back(root);

    std::vector<int> order(static_cast<std::size_t>(n_real_vertices_));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto rng = make_rng(0x7104e1aULL, points.size());
    std::shuffle(order.begin(), order.end(), rng);
    for (int vid : order) insert(vid);

    for (std::size_t t = 0; t < tets_.size(); ++t) {
      if (tets_[t].alive && !has_super_vertex(tets_[t])) {
        first_real_tet_ = static_cast<int>(t);
        break;
      }
    }
    hint_ = (first_real_tet_ >= 0) ? first_real_tet_ : 0;
  }

  // visibility walk; terminates because the triangulation is Delaunay
  int walk(const detail::ICoord& p, int start) const {
    int t = start;
    if (t < 0 || t >= static_cast<int>(tets_.size()) || !tets_[static_cast<std::size_t>(t)].alive)
      t = find_alive();
    for (std::size_t guard = 0; guard < 4 * tets_.size() + 16; ++guard) {
      const Tet& tet = tets_[static_cast<std::size_t>(t)];
      int next = -1;
      for (int f = 0; f < 4; ++f) {
        const auto& fc = detail::kFaces[static_cast<std::size_t>(f)];
        const BigInt o = detail::orient3d(
            ipts_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(fc[0])])],
            ipts_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(fc[1])])],
            ipts_[static_cast<std::size_t>(tet.v[static_cast<std::size_t>(fc[2])])], p);
        if (o < 0) {
          next = tet.nbr[static_cast<std::size_t>(f)];
          break;
        }
      }
      if (next == -1) return t;
      t = next;
    }
    throw std::logic_error("tetrahedralization: point location walk did not terminate");
  }

  int find_alive() const {
    for (std::size_t t = 0; t < tets_.size(); ++t)
      if (tets_[t].alive) return static_cast<int>(t);
    throw std::logic_error("tetrahedralization: no tetrahedra");
  }

  void insert(int vid) {
    const detail::ICoord& p = ipts_[static_cast<std::size_t>(vid)];
    const int start = walk(p, hint_);

    // conflict region: all tets whose open circumsphere contains p
    std::vector<int> cavity;
    std::vector<char> in_cavity(tets_.size(), 0);
    std::vector<int> stack{start};
    in_cavity[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int t = stack.back();
      stack.pop_back();
      cavity.push_back(t);
      for (int f = 0; f < 4; ++f) {
        const int nb = tets_[static_cast<std::size_t>(t)].nbr[static_cast<std::size_t>(f)];
        if (nb < 0 || in_cavity[static_cast<std::size_t>(nb)]) continue;
        const Tet& nt = tets_[static_cast<std::size_t>(nb)];
        if (detail::insphere(ipts_[static_cast<std::size_t>(nt.v[0])],
                             ipts_[static_cast<std::size_t>(nt.v[1])],
                             ipts_[static_cast<std::size_t>(nt.v[2])],
                             ipts_[static_cast<std::size_t>(nt.v[3])], p) > 0) {
          in_cavity[static_cast<std::size_t>(nb)] = 1;
          stack.push_back(nb);
        }
      }
    }

    // boundary faces of the cavity -> new tets with apex p
    struct BoundaryFace {
      std::array<int, 3> verts;  // oriented toward the cavity interior
      int outside;               // neighbor tet beyond the face, -1 at hull
    };
    std::vector<BoundaryFace> faces;
    for (int t : cavity) {
      const Tet& tet = tets_[static_cast<std::size_t>(t)];
      for (int f = 0; f < 4; ++f) {
        const int nb = tet.nbr[static_cast<std::size_t>(f)];
        if (nb >= 0 && in_cavity[static_cast<std::size_t>(nb)]) continue;
        const auto& fc = detail::kFaces[static_cast<std::size_t>(f)];
        faces.push_back({{tet.v[static_cast<std::size_t>(fc[0])],
                          tet.v[static_cast<std::size_t>(fc[1])],
                          tet.v[static_cast<std::size_t>(fc[2])]},
                         nb});
      }
    }
    for (int t : cavity) tets_[static_cast<std::size_t>(t)].alive = false;

    std::map<std::array<int, 2>, std::array<int, 2>> half_edges;  // directed edge -> (tet, slot)
    std::vector<int> created;
    for (const auto& bf : faces) {
      Tet nt;
      nt.v = {bf.verts[0], bf.verts[1], bf.verts[2], vid};
      if (detail::orient3d(ipts_[static_cast<std::size_t>(nt.v[0])],
                           ipts_[static_cast<std::size_t>(nt.v[1])],
                           ipts_[static_cast<std::size_t>(nt.v[2])], p) <= 0)
        throw std::logic_error("tetrahedralization: degenerate cavity face");
      nt.nbr = {-1, -1, -1, -1};
      nt.nbr[3] = bf.outside;  // face opposite the apex is the old boundary face
      const int id = static_cast<int>(tets_.size());
      tets_.push_back(nt);
      created.push_back(id);
      if (bf.outside >= 0) {
        Tet& out = tets_[static_cast<std::size_t>(bf.outside)];
        for (int f = 0; f < 4; ++f) {
          bool shares = true;
          for (int w = 0; w < 3; ++w) {
            const int vv = bf.verts[static_cast<std::size_t>(w)];
            if (out.v[static_cast<std::size_t>(detail::kFaces[static_cast<std::size_t>(f)][0])] != vv &&
                out.v[static_cast<std::size_t>(detail::kFaces[static_cast<std::size_t>(f)][1])] != vv &&
                out.v[static_cast<std::size_t>(detail::kFaces[static_cast<std::size_t>(f)][2])] != vv) {
              shares = false;
              break;
            }
          }
          if (shares) {
            out.nbr[static_cast<std::size_t>(f)] = id;
            break;
          }
        }
      }
      // the three side faces each contain the apex and one directed boundary
      // edge; matching reversed edges glues adjacent new tets together
      for (int e = 0; e < 3; ++e) {
        const int va = bf.verts[static_cast<std::size_t>(e)];
        const int vb = bf.verts[static_cast<std::size_t>((e + 1) % 3)];
        const int slot = (e == 0) ? 2 : (e == 1) ? 0 : 1;  // face opposite the third base vertex
        const auto it = half_edges.find({vb, va});
        if (it != half_edges.end()) {
          const auto [other_tet, other_slot] = it->second;
          tets_[static_cast<std::size_t>(id)].nbr[static_cast<std::size_t>(slot)] = other_tet;
          tets_[static_cast<std::size_t>(other_tet)].nbr[static_cast<std::size_t>(other_slot)] = id;
        } else {
          half_edges[{va, vb}] = {id, slot};
        }
      }
    }
    if (!created.empty()) hint_ = created.back();
  }
};

}  // namespace qspace::delaunay
