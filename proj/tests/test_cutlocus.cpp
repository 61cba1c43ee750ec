#include <catch2/catch_amalgamated.hpp>

#include "mtwgeo/cutlocus.hpp"

using namespace mtwgeo;

namespace {
Vec v2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

std::shared_ptr<const ManifoldModel> shared_model(const std::string& id) {
    return make_builtin(id);
}

TangentVector unit_dir(const ManifoldModel& m, const Vec& x, double angle) {
    Mat B = orthonormal_basis(m.metric(x));
    return TangentVector(ChartPoint(x), std::cos(angle) * B.col(0) + std::sin(angle) * B.col(1));
}
}  // namespace

TEST_CASE("sphere cut time: antipodal, focal, capped continuum") {
    auto m = shared_model("sphere_r1");
    DistanceOracle oracle(m);
    for (double ang : {0.0, 0.9, 2.4}) {
        Vec x = v2(1.2, 0.5);
        auto rep = cut_time(*m, oracle, ChartPoint(x), unit_dir(*m, x, ang));
        CHECK(std::abs(rep.t_cut - M_PI) <= 1e-6);
        CHECK(std::abs(rep.t_f - M_PI) <= 1e-6);
        CHECK(rep.cap_reached);
        CHECK(std::abs(rep.delta_v - 2 * M_PI) <= 1e-6);
        // Focal and multiplicity-degenerate at once: the spread is 2*pi, so
        // the velocity set is not a single point and purely_focal is false.
        CHECK_FALSE(rep.purely_focal);
    }
}

TEST_CASE("torus cut time: Voronoi faces and corners") {
    auto m = shared_model("torus_2pi");
    DistanceOracle oracle(m);
    Vec x = v2(0.0, 0.0);
    auto r0 = cut_time(*m, oracle, ChartPoint(x), unit_dir(*m, x, 0.0));
    CHECK(std::abs(r0.t_cut - M_PI) <= 1e-7);
    CHECK(r0.t_f == kInf);
    CHECK(r0.competing_velocities.size() == 2);
    CHECK(std::abs(r0.delta_v - 2 * M_PI) <= 1e-7);
    CHECK_FALSE(r0.purely_focal);

    auto r45 = cut_time(*m, oracle, ChartPoint(x), unit_dir(*m, x, M_PI / 4));
    CHECK(std::abs(r45.t_cut - M_PI * std::sqrt(2.0)) <= 1e-7);

    auto r30 = cut_time(*m, oracle, ChartPoint(x), unit_dir(*m, x, M_PI / 6));
    CHECK(std::abs(r30.t_cut - M_PI / std::cos(M_PI / 6)) <= 1e-6);
}

TEST_CASE("cut definition bracketing") {
    auto m = shared_model("torus_2pi");
    DistanceOracle oracle(m);
    Vec x = v2(1.0, 2.0);
    for (double ang : {0.2, 1.1}) {
        auto e = unit_dir(*m, x, ang);
        auto rep = cut_time(*m, oracle, ChartPoint(x), e);
        auto ylo = exp_map(*m, e, 0.99 * rep.t_cut).first;
        CHECK(std::abs(oracle.distance(x, ylo.coords).value - 0.99 * rep.t_cut) <= 1e-6);
        auto yhi = exp_map(*m, e, 1.01 * rep.t_cut).first;
        CHECK(oracle.distance(x, yhi.coords).value < 1.01 * rep.t_cut - 1e-8);
    }
}

TEST_CASE("torus domain sample is the analytic square") {
    auto m = shared_model("torus_2pi");
    DistanceOracle oracle(m);
    auto ds = domain_sample(*m, oracle, ChartPoint(0.3, 1.7), 120);
    CHECK_FALSE(ds.partial);
    double sup_err = 0.0;
    for (size_t k = 0; k < ds.angles.size(); ++k) {
        double a = ds.angles[k];
        double exact = M_PI / std::max(std::abs(std::cos(a)), std::abs(std::sin(a)));
        sup_err = std::max(sup_err, std::abs(ds.t_cut_values[k] - exact));
        CHECK(ds.t_f_values[k] == kInf);
    }
    CHECK(sup_err <= 1e-6);
}

TEST_CASE("sphere domain sample is the circle of radius pi") {
    auto m = shared_model("sphere_r1");
    DistanceOracle oracle(m);
    auto ds = domain_sample(*m, oracle, ChartPoint(1.9, 0.2), 90);
    CHECK_FALSE(ds.partial);
    for (size_t k = 0; k < ds.angles.size(); ++k) {
        CHECK(std::abs(ds.t_cut_values[k] - M_PI) <= 1e-6);
        CHECK(std::abs(ds.t_f_values[k] - M_PI) <= 1e-6);
    }
}

TEST_CASE("radial distance piecewise formula") {
    auto m = shared_model("torus_2pi");  // identity metric
    ChartPoint x(2.0, 3.0);
    auto tvx = [&](double a, double b) { return TangentVector(x, v2(a, b)); };
    CHECK(radial_distance(*m, tvx(1, 0), tvx(2, 0)) == 1.0);
    CHECK(radial_distance(*m, tvx(1, 0), tvx(0, 1)) == 2.0);
    CHECK(radial_distance(*m, tvx(1, 0), tvx(0, 0)) == 1.0);
    CHECK_THROWS_AS(
        radial_distance(*m, tvx(1, 0), TangentVector(ChartPoint(0.0, 0.0), v2(1, 0))),
        InconsistentInputError);
}

TEST_CASE("radial distance to the injectivity domain") {
    auto torus = shared_model("torus_2pi");
    DistanceOracle ot(torus);
    auto dst = domain_sample(*torus, ot, ChartPoint(0, 0), 360);
    CHECK(std::abs(radial_distance_to_domain(*torus, dst,
                                             TangentVector(dst.x, v2(M_PI + 0.5, 0))) -
                   0.5) <= 1e-6);
    CHECK(radial_distance_to_domain(*torus, dst, TangentVector(dst.x, v2(1.0, 0.5))) == 0.0);

    auto sph = shared_model("sphere_r1");
    DistanceOracle os(sph);
    auto dss = domain_sample(*sph, os, ChartPoint(1.3, 0.4), 90);
    Vec e = unit_dir(*sph, dss.x.coords, 0.37).components;
    CHECK(std::abs(radial_distance_to_domain(*sph, dss, TangentVector(dss.x, 4.0 * e)) -
                   (4.0 - M_PI)) <= 1e-6);
}

TEST_CASE("radial band bound around the cut boundary (two-sided models)") {
    auto torus = shared_model("torus_2pi");
    DistanceOracle ot(torus);
    auto dst = domain_sample(*torus, ot, ChartPoint(0, 0), 120);
    auto fit = verify_lem1(*torus, ot, dst, 0.2, 5);
    CHECK(fit.violations.empty());
    CHECK(fit.samples >= 120 * 5 - fit.skipped);
    CHECK(fit.K > 0.0);
    CHECK(std::isfinite(fit.K));

    auto sph = shared_model("sphere_r1");
    DistanceOracle os(sph);
    auto dss = domain_sample(*sph, os, ChartPoint(1.1, 2.2), 90);
    auto fits = verify_lem1(*sph, os, dss, 0.2, 5);
    CHECK(fits.violations.empty());
    CHECK(std::isfinite(fits.K));
    // Analytic check: lhs = pi*a, rhs = 4 pi^2 a => K ~ 1/(4 pi).
    CHECK(std::abs(fits.K - 1.0 / (4 * M_PI)) <= 1e-3);
}

TEST_CASE("endpoint comparability of radial distances") {
    auto torus = shared_model("torus_2pi");
    DistanceOracle ot(torus);
    auto dst = domain_sample(*torus, ot, ChartPoint(0, 0), 60);
    auto fit = verify_lem2(*torus, ot, dst, 0.2, 3, 6, 60);
    CHECK(fit.violations.empty());
    CHECK(fit.samples > 0);
    CHECK(std::isfinite(fit.K));
    CHECK(fit.K >= 1.0);
    CHECK(fit.K <= 1.0 + 1e-6);  // flat symmetry: exact ratio 1
}

TEST_CASE("cut time Lipschitz probes") {
    auto sph = shared_model("sphere_r1");
    DistanceOracle os(sph);
    Vec xs = v2(1.4, 0.9);
    for (auto mode :
         {CutProbeMode::GeodesicDirection, CutProbeMode::FocalKernel, CutProbeMode::Velocity}) {
        auto rep = cut_lipschitz_probe(*sph, os, ChartPoint(xs), unit_dir(*sph, xs, 0.8), mode,
                                       1e-3);
        CHECK(rep.skipped == 0);
        CHECK(rep.quotient <= 1e-4);
    }

    auto torus = shared_model("torus_2pi");
    DistanceOracle ot(torus);
    Vec xt = v2(0.0, 0.0);
    double th = M_PI / 8;
    auto rep = cut_lipschitz_probe(*torus, ot, ChartPoint(xt), unit_dir(*torus, xt, th),
                                   CutProbeMode::Velocity, 1e-4);
    double expect = M_PI * std::tan(th) / std::cos(th);
    CHECK(rep.skipped == 0);
    CHECK(std::abs(rep.quotient - expect) <= 0.05 * expect);
}

TEST_CASE("nonfocality verdicts") {
    auto torus = shared_model("torus_2pi");
    DistanceOracle ot(torus);
    std::vector<DomainSample> st{domain_sample(*torus, ot, ChartPoint(0, 0), 60)};
    auto rt = nonfocality_report(st);
    CHECK(rt.nonfocal);
    CHECK(rt.min_margin == kInf);
    CHECK(rt.delta_tm > 0.0);

    auto sph = shared_model("sphere_r1");
    DistanceOracle os(sph);
    std::vector<DomainSample> ss{domain_sample(*sph, os, ChartPoint(1.0, 0.3), 60)};
    auto rs = nonfocality_report(ss);
    CHECK_FALSE(rs.nonfocal);
    CHECK(std::abs(rs.min_margin) <= 1e-6);
    CHECK(std::abs(rs.delta_tm - 2 * M_PI) <= 1e-6);
}

TEST_CASE("dumbbell domain sample resolves and respects the focal bound") {
    auto db = shared_model("dumbbell");
    DistanceOracle oracle(db);
    auto ds = domain_sample(*db, oracle, ChartPoint(M_PI, 0.7), 16);
    int resolved = 0;
    for (size_t k = 0; k < ds.angles.size(); ++k) {
        if (!ds.resolved[k]) continue;
        resolved += 1;
        CHECK(ds.t_cut_values[k] <= ds.t_f_values[k] + ds.tolerance);
        CHECK(ds.t_cut_values[k] >= 0.9 * db->injectivity_hint());
        CHECK(ds.t_cut_values[k] <= db->diameter_bound());
    }
    CHECK(resolved >= 14);
}
