#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "mtwgeo/geodesic.hpp"
#include "oracles.hpp"

using namespace mtwgeo;

namespace {
Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}
TangentVector tv(double x0, double x1, double u0, double u1) {
    return TangentVector(ChartPoint(x0, x1), v2(u0, u1));
}
}  // namespace

TEST_CASE("exponential map on flat torus is a straight line") {
    auto m = make_builtin("torus_2pi");
    auto [p, u] = exp_map(*m, tv(0, 0, 1, 0), M_PI / 2);
    CHECK(std::abs(p.coords[0] - M_PI / 2) < 1e-12);
    CHECK(std::abs(p.coords[1]) < 1e-12);
    CHECK((u.components - v2(1, 0)).norm() < 1e-12);
}

TEST_CASE("sphere great circles: antipode and closure") {
    auto m = make_builtin("sphere_r1");
    TangentVector v = tv(M_PI / 3, 0.4, 0.3, 0.8);
    double sp = m->norm(v.base.coords, v.components);
    TangentVector unit(v.base, v.components / sp);
    auto [anti, ua] = exp_map(*m, unit, M_PI);
    // Antipode of (theta, phi) is (pi - theta, phi + pi).
    CHECK(std::abs(anti.coords[0] - (M_PI - M_PI / 3)) < 1e-9);
    CHECK(std::abs(std::remainder(anti.coords[1] - (0.4 + M_PI), 2 * M_PI)) < 1e-9);
    CHECK(std::abs(m->norm(anti.coords, ua.components) - 1.0) < 1e-9);
    auto [back, ub] = exp_map(*m, unit, 2 * M_PI);
    CHECK(m->chart_delta(back.coords, m->reduce(v.base.coords)).norm() < 1e-6);
    (void)ub;
}

TEST_CASE("numeric integration conserves speed and frame orthonormality") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (auto id : {"sphere_r1", "torus_2pi", "dumbbell", "wavy_torus"}) {
        auto m = make_builtin(id);
        for (int trial = 0; trial < 4; ++trial) {
            Vec x = id[0] == 's' ? v2(M_PI / 2 + 0.5 * unif(rng), M_PI * (1 + unif(rng)))
                                 : v2(M_PI * (1 + unif(rng)), M_PI * (1 + unif(rng)));
            Vec u = v2(unif(rng) + 1.2, unif(rng));
            u /= m->norm(x, u);
            GeodesicTrace tr =
                integrate_trace(*m, TangentVector(ChartPoint(x), u), m->diameter_bound());
            INFO(id);
            for (size_t j = 0; j < tr.grid.size(); j += 50) {
                double sp = m->norm(tr.points[j], tr.velocities[j]);
                CHECK(std::abs(sp - tr.speed) <= 1e-8 * tr.speed);
                Mat g = m->metric(tr.points[j]);
                Mat gram = tr.frames[j].transpose() * g * tr.frames[j];
                CHECK(max_abs(gram - Mat::Identity(2, 2)) <= 1e-8);
                // e1 aligned with normalized velocity
                CHECK((tr.frames[j].col(0) - tr.velocities[j] / sp).norm() <= 1e-8);
            }
            CHECK_NOTHROW(parallel_frame(*m, tr));
        }
    }
}

TEST_CASE("flat torus frame is constant") {
    auto m = make_builtin("torus_2pi");
    GeodesicTrace tr = integrate_trace(*m, tv(1, 2, 0.6, 0.8), 3.0);
    for (size_t j = 0; j < tr.grid.size(); j += 100)
        CHECK(max_abs(tr.frames[j] - tr.frames[0]) <= 1e-12);
}

TEST_CASE("sphere work chart keeps the geodesic on the equator") {
    auto m = std::dynamic_pointer_cast<Sphere>(make_builtin("sphere_r1"));
    // A geodesic through the pole in the global chart is harmless in the
    // work chart: theta stays at pi/2.
    TangentVector v = tv(0.3, 1.0, 1.0, 0.0);  // heading due north
    GeodesicTrace tr = integrate_trace(*m, v, 2 * M_PI);
    for (size_t j = 0; j < tr.grid.size(); j += 100)
        CHECK(std::abs(tr.points[j][0] - M_PI / 2) < 1e-6);
    // Normal frame vector in the work chart is the polar direction.
    for (size_t j = 0; j < tr.grid.size(); j += 500)
        CHECK(std::abs(std::abs(tr.frames[j](0, 1)) - 1.0) < 1e-6);
}

TEST_CASE("distance on analytic models") {
    auto torus = make_builtin("torus_2pi");
    auto r = distance(*torus, ChartPoint(0, 0), ChartPoint(3 * M_PI / 2, 0));
    CHECK(std::abs(r.value - M_PI / 2) < 1e-12);
    CHECK(r.converged);

    auto sph = make_builtin("sphere_r1");
    Vec x = v2(M_PI / 3, 0.7);
    auto anti = exp_map(*sph, TangentVector(ChartPoint(x), v2(1, 0)), M_PI).first;
    auto rs = distance(*sph, ChartPoint(x), anti);
    CHECK(std::abs(rs.value - M_PI) < 1e-9);
    CHECK(rs.cap_reached);  // continuum of minimizers, capped
}

TEST_CASE("torus distance reports wrap multiplicity") {
    auto m = make_builtin("torus_2pi");
    auto r = distance(*m, ChartPoint(0, 0), ChartPoint(M_PI, 0));
    CHECK(std::abs(r.value - M_PI) < 1e-12);
    CHECK(r.multiplicity == 2);  // both wraps tie
}

TEST_CASE("numeric distance matches dense shooting oracle on the dumbbell") {
    auto m = make_builtin("dumbbell");
    auto oracle_model = std::shared_ptr<const ManifoldModel>(m);
    DistanceOracle oracle(oracle_model);
    struct Pair {
        Vec x, y;
    };
    std::vector<Pair> pairs = {
        {v2(0.6, 0.3), v2(2.9, 2.4)},   // across the neck
        {v2(0.2, 1.0), v2(0.9, 4.0)},   // around the bulge
    };
    for (auto& pr : pairs) {
        double ref = oracles::dense_shooting_distance(*m, pr.x, pr.y);
        auto r = oracle.distance(pr.x, pr.y);
        INFO("x=" << pr.x.transpose() << " y=" << pr.y.transpose() << " ref=" << ref);
        REQUIRE(r.converged);
        CHECK(std::abs(r.value - ref) <= 1e-4);
        // Reported velocity really connects the pair.
        auto [q, u] = exp_map(*m, r.minimizer_velocity, 1.0);
        (void)u;
        CHECK(m->chart_delta(q.coords, m->reduce(pr.y)).norm() <= 1e-6);
        // Symmetry.
        auto rb = oracle.distance(pr.y, pr.x);
        REQUIRE(rb.converged);
        CHECK(std::abs(rb.value - r.value) <= 1e-6);
    }
}

TEST_CASE("short-range distance path agrees with the fan") {
    auto m = std::shared_ptr<const ManifoldModel>(make_builtin("dumbbell"));
    DistanceOracle oracle(m);
    Vec x = v2(1.0, 1.0), y = v2(1.3, 1.45);
    auto r = oracle.distance(x, y);  // short range: Newton path
    REQUIRE(r.converged);
    CHECK(r.multiplicity == 1);
    auto fan = oracle.fan_for(x);
    auto rf = fan->query(y);
    REQUIRE(rf.converged);
    CHECK(std::abs(r.value - rf.value) <= 1e-8);
}

TEST_CASE("distance never exceeds arc length") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> unif(0.2, 0.8);
    for (auto id : {"sphere_r1", "torus_2pi"}) {
        auto m = make_builtin(id);
        for (int trial = 0; trial < 10; ++trial) {
            Vec x = v2(M_PI * unif(rng) + (id[0] == 's' ? 0.0 : 2.0), 2 * M_PI * unif(rng));
            Vec u = v2(unif(rng), unif(rng));
            u /= m->norm(x, u);
            double t = 2.5 * unif(rng) + 0.1;
            auto y = exp_map(*m, TangentVector(ChartPoint(x), u), t).first;
            auto r = distance(*m, ChartPoint(x), y);
            CHECK(r.value <= t + 1e-9);
        }
    }
}

TEST_CASE("trace CSV export has the documented layout") {
    auto m = make_builtin("torus_2pi");
    GeodesicTrace tr = integrate_trace(*m, tv(0, 0, 1, 0), 0.01);
    std::string csv = trace_to_csv(tr);
    CHECK(csv.rfind("t,x0,x1,u0,u1,e0_0,e0_1,e1_0,e1_1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == (long)tr.grid.size() + 1);
}

TEST_CASE("chart guard aborts pole-bound integration on guarded models") {
    // A non-periodic revolution surface has a guarded u-range.
    RevolutionSurface open_surface(RevolutionSurface::Basis::Poly, {1.0, 0.5}, 0.0, 2.0, "cone");
    CHECK_THROWS_AS(
        integrate_trace(open_surface, TangentVector(ChartPoint(1.0, 0.0), v2(1.0, 0.0)), 5.0),
        ChartExitError);
}
