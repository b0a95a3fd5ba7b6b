#include <qspace/grid.hpp>
#include <qspace/random.hpp>

#include <catch2/catch.hpp>

using namespace qspace;
using namespace qspace::eap;

TEST_CASE("grid construction", "[grid]") {
  SECTION("n=3, q_max=1") {
    const auto g = make_grid(3, 1.0);
    CHECK(g.dq == 1.0);
    CHECK(g.size() == 27);
    CHECK(g.origin_index() == 13);
    CHECK(g.q_point(g.origin_index()).magnitude() == 0.0);
    // axis coordinates are {-1, 0, 1}
    CHECK(g.q_point(0).x == -1.0);
    CHECK(g.q_point(2).x == 1.0);
    CHECK(g.dr == Approx(2.0 * std::numbers::pi / 3.0));
  }
  SECTION("n=11 has 1331 points") {
    CHECK(make_grid(11, 500.0).size() == 1331);
  }
  SECTION("even n rejected") {
    CHECK_THROWS(make_grid(4, 1.0));
    CHECK_THROWS(make_grid(2, 1.0));
    CHECK_THROWS(make_grid(1, 1.0));
  }
  SECTION("negation is an index permutation fixing only the origin") {
    const auto g = make_grid(5, 2.0);
    std::size_t fixed = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = g.negate_index(i);
      CHECK(g.negate_index(j) == i);
      const QPoint p = g.q_point(i);
      const QPoint q = g.q_point(j);
      CHECK(q.x == -p.x);
      CHECK(q.y == -p.y);
      CHECK(q.z == -p.z);
      if (i == j) ++fixed;
    }
    CHECK(fixed == 1);
  }
}

TEST_CASE("idft matrix basics", "[grid]") {
  const auto g = make_grid(5, 2.0);
  const auto f = idft_matrix(g);
  const double c = idft_scale(g);

  SECTION("row at r = 0 is constant") {
    const Eigen::VectorXd row = f.row(static_cast<Eigen::Index>(g.origin_index()));
    CHECK((row.array() - c).abs().maxCoeff() < 1e-15 * c);
  }
  SECTION("constant signal transforms to a discrete delta") {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(g.size()));
    const Eigen::VectorXd p = f * ones;
    const double expected_peak =
        std::pow(g.n * g.dq, 3) / std::pow(2.0 * std::numbers::pi, 3);
    CHECK(p[static_cast<Eigen::Index>(g.origin_index())] == Approx(expected_peak).epsilon(1e-12));
    for (std::size_t m = 0; m < g.size(); ++m) {
      if (m == g.origin_index()) continue;
      CHECK(std::abs(p[static_cast<Eigen::Index>(m)]) < 1e-9 * expected_peak);
    }
  }
  SECTION("transform of a symmetrized signal is symmetric under r -> -r") {
    auto rng = make_rng(12, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd raw(static_cast<Eigen::Index>(g.size()));
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw[i] = u(rng);
    Eigen::VectorXd sym(raw.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      sym[static_cast<Eigen::Index>(i)] =
          0.5 * (raw[static_cast<Eigen::Index>(i)] +
                 raw[static_cast<Eigen::Index>(g.negate_index(i))]);
    const Eigen::VectorXd p = f * sym;
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(p[static_cast<Eigen::Index>(i)] ==
            Approx(p[static_cast<Eigen::Index>(g.negate_index(i))]).margin(1e-12));
  }
}

TEST_CASE("separable application matches the dense operator", "[grid]") {
  const auto g = make_grid(5, 1.7);
  const auto f = idft_matrix(g);
  auto rng = make_rng(4, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(g.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
  const Eigen::VectorXd dense = f * x;
  const Eigen::VectorXd fast = idft_apply(g, x);
  CHECK((dense - fast).cwiseAbs().maxCoeff() < 1e-12 * dense.cwiseAbs().maxCoeff());
}

TEST_CASE("even orbits", "[grid]") {
  const auto g = make_grid(5, 2.0);
  const auto o = even_orbits(g);
  CHECK(o.count() == (g.size() + 1) / 2);
  CHECK(o.representative[o.origin_orbit] == g.origin_index());
  CHECK(o.multiplicity[o.origin_orbit] == 1);

  // reduce/expand round trip on a symmetric vector
  auto rng = make_rng(5, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd raw(static_cast<Eigen::Index>(g.size()));
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw[i] = u(rng);
  Eigen::VectorXd sym(raw.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    sym[static_cast<Eigen::Index>(i)] =
        0.5 * (raw[static_cast<Eigen::Index>(i)] + raw[static_cast<Eigen::Index>(g.negate_index(i))]);
  const Eigen::VectorXd back = expand_symmetric(g, o, reduce_symmetric(g, o, sym));
  CHECK((back - sym).cwiseAbs().maxCoeff() == 0.0);

  // reduced transform agrees with the dense operator on symmetric input
  const Eigen::VectorXd p_full = idft_matrix(g) * sym;
  const Eigen::VectorXd p_red = reduced_idft(g, o) * reduce_symmetric(g, o, sym);
  for (std::size_t j = 0; j < o.count(); ++j)
    CHECK(p_red[static_cast<Eigen::Index>(j)] ==
          Approx(p_full[static_cast<Eigen::Index>(o.representative[j])]).margin(1e-12));
}
