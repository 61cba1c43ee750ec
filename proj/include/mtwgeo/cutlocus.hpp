#ifndef MTWGEO_CUTLOCUS_HPP
#define MTWGEO_CUTLOCUS_HPP

#include "mtwgeo/jacobi.hpp"
#include "mtwgeo/parallel.hpp"

namespace mtwgeo {

struct CutOptions {
    double t_tol = 1e-8;        // bisection width in t
    double pred_slack = 1e-7;   // distance slack in the cut predicate
    double pf_tol = 1e-6;       // tolerance for t_cut = t_f and delta_v = 0
    double horizon_factor = 4.0;
    bool with_focal = true;     // integrate Jacobi data for t_f
    IntegrationOptions integ;
};

struct CutReport {
    double t_cut = 0.0;
    double t_f = kInf;
    std::vector<TangentVector> competing_velocities;
    double delta_v = 0.0;
    bool purely_focal = false;
    bool cap_reached = false;
};

// Largest t with d(x, exp_x(t e_v)) = t, by bisection of the predicate
// d >= t - slack between the injectivity hint and min(t_f, diameter bound).
inline CutReport cut_time(const ManifoldModel& m, const DistanceOracle& oracle,
                          const ChartPoint& x_in, const TangentVector& e_v,
                          const CutOptions& opts = {}) {
    Vec x = m.reduce(x_in.coords);
    if (std::abs(m.norm(x, e_v.components) - 1.0) > 1e-10)
        throw PreconditionError("cut_time requires a unit direction");
    CutReport rep;
    if (opts.with_focal) {
        auto sol = integrate_fundamental(m, TangentVector(ChartPoint(x), e_v.components),
                                         opts.horizon_factor * m.diameter_bound(), opts.integ);
        rep.t_f = focal_time(m, sol).t_f;
    }
    double lo = 0.9 * m.injectivity_hint();
    double hi = std::min(rep.t_f, m.diameter_bound());

    std::vector<Vec> seeds;
    auto predicate = [&](double t) {
        auto y = exp_map(m, TangentVector(ChartPoint(x), e_v.components), t, opts.integ).first;
        auto d = oracle.distance(x, y.coords, &seeds);
        if (!d.converged)
            throw UnresolvedCutError("distance oracle failed inside cut bracket at t=" +
                                     std::to_string(t));
        seeds = d.velocities;  // warm start for the next bisection probe
        return d.value >= t - opts.pred_slack;
    };

    if (!predicate(lo))
        throw UnresolvedCutError("cut predicate already false at the injectivity hint");
    if (predicate(hi)) {
        rep.t_cut = hi;
    } else {
        while (hi - lo > opts.t_tol) {
            double mid = 0.5 * (lo + hi);
            (predicate(mid) ? lo : hi) = mid;
        }
        rep.t_cut = 0.5 * (lo + hi);
    }

    auto y = exp_map(m, TangentVector(ChartPoint(x), e_v.components), rep.t_cut, opts.integ).first;
    auto d = oracle.distance(x, y.coords, &seeds);
    rep.cap_reached = d.cap_reached;
    for (auto& w : d.velocities) rep.competing_velocities.emplace_back(ChartPoint(x), w);
    Mat g = m.metric(x);
    for (size_t i = 0; i < d.velocities.size(); ++i)
        for (size_t j = i + 1; j < d.velocities.size(); ++j) {
            Vec diff = d.velocities[i] - d.velocities[j];
            rep.delta_v = std::max(rep.delta_v, std::sqrt(diff.dot(g * diff)));
        }
    rep.purely_focal =
        std::abs(rep.t_cut - rep.t_f) <= opts.pf_tol && rep.delta_v <= opts.pf_tol;
    return rep;
}

// Star-shaped boundary graphs of I(x) and NF(x): per-direction cut and focal
// times over a uniform angular grid in the g-orthonormal chart-aligned basis.
struct DomainSample {
    ChartPoint x;
    Mat basis;  // columns: the angular reference frame
    std::vector<double> angles;
    std::vector<Vec> directions;
    std::vector<double> t_cut_values;
    std::vector<double> t_f_values;
    std::vector<double> delta_v_values;
    std::vector<bool> purely_focal_flags;
    std::vector<bool> resolved;
    bool partial = false;
    double tolerance = 1e-6;

    // Piecewise-linear-in-angle cut time (t_cut is Lipschitz in direction).
    double t_cut_at_angle(double a) const {
        const int N = (int)angles.size();
        double step = 2.0 * M_PI / N;
        double s = std::fmod(a, 2.0 * M_PI);
        if (s < 0) s += 2.0 * M_PI;
        int k = (int)std::floor(s / step) % N;
        int k2 = (k + 1) % N;
        if (!resolved[k] || !resolved[k2])
            throw ResolutionError("direction falls in an unresolved sector");
        double w = (s - k * step) / step;
        return (1.0 - w) * t_cut_values[k] + w * t_cut_values[k2];
    }
};

inline DomainSample domain_sample(const ManifoldModel& m, const DistanceOracle& oracle,
                                  const ChartPoint& x_in, int N, const CutOptions& opts = {}) {
    if (N < 8) throw PreconditionError("domain_sample requires N >= 8");
    DomainSample ds;
    ds.x = ChartPoint(m.reduce(x_in.coords));
    ds.basis = orthonormal_basis(m.metric(ds.x.coords));
    ds.angles.resize(N);
    ds.directions.resize(N);
    ds.t_cut_values.assign(N, 0.0);
    ds.t_f_values.assign(N, kInf);
    ds.delta_v_values.assign(N, 0.0);
    ds.purely_focal_flags.assign(N, false);
    ds.resolved.assign(N, false);
    for (int k = 0; k < N; ++k) {
        ds.angles[k] = 2.0 * M_PI * k / N;
        ds.directions[k] =
            std::cos(ds.angles[k]) * ds.basis.col(0) + std::sin(ds.angles[k]) * ds.basis.col(1);
    }
    parallel_for(N, [&](int k) {
        try {
            auto rep = cut_time(m, oracle, ds.x, TangentVector(ds.x, ds.directions[k]), opts);
            ds.t_cut_values[k] = rep.t_cut;
            ds.t_f_values[k] = rep.t_f;
            ds.delta_v_values[k] = rep.delta_v;
            ds.purely_focal_flags[k] = rep.purely_focal;
            ds.resolved[k] = true;
        } catch (const Error&) {
            ds.resolved[k] = false;
        }
    });
    for (int k = 0; k < N; ++k) {
        if (!ds.resolved[k]) ds.partial = true;
        if (ds.resolved[k] && std::isfinite(ds.t_f_values[k]) &&
            ds.t_cut_values[k] > ds.t_f_values[k] + ds.tolerance)
            throw InconsistentInputError("t_cut exceeds t_f: domain sample invalid");
    }
    return ds;
}

// ---- radial distance ------------------------------------------------------

// rho_x(v, w): |v - w|_x on a common ray, |v|_x + |w|_x across rays.
inline double radial_distance(const ManifoldModel& m, const TangentVector& v,
                              const TangentVector& w) {
    Vec bx = m.reduce(v.base.coords), bw = m.reduce(w.base.coords);
    if (m.chart_delta(bx, bw).norm() > 1e-10)
        throw InconsistentInputError("radial distance requires a common base point");
    Mat g = m.metric(bx);
    double nv = std::sqrt(v.components.dot(g * v.components));
    double nw = std::sqrt(w.components.dot(g * w.components));
    double ip = v.components.dot(g * w.components);
    if (ip >= nv * nw - 1e-9 * std::max(1.0, nv * nw)) {
        Vec diff = v.components - w.components;
        return std::sqrt(diff.dot(g * diff));
    }
    return nv + nw;
}

// rho_x(v, I(x)) via the closed form max(0, |v| - t_cut(direction)).
inline double radial_distance_to_domain(const ManifoldModel& m, const DomainSample& sample,
                                        const TangentVector& v) {
    Vec x = m.reduce(v.base.coords);
    if (m.chart_delta(x, sample.x.coords).norm() > 1e-10)
        throw InconsistentInputError("vector not based at the sample's point");
    Mat g = m.metric(x);
    double nv = std::sqrt(v.components.dot(g * v.components));
    if (nv < 1e-14) return 0.0;
    // Angle in the sample's orthonormal basis.
    Vec coeff = Mat(sample.basis).fullPivLu().solve(v.components);
    double a = std::atan2(coeff[1], coeff[0]);
    return std::max(0.0, nv - sample.t_cut_at_angle(a));
}

// ---- quantitative suites --------------------------------------------------

struct FitReport {
    double K = 0.0;
    int samples = 0;
    int skipped = 0;
    std::vector<std::string> violations;
};

// Bound rho_x(v, I(x)) <= K (|v|^2 - d(x, exp_x v)^2) on a radial band
// {t * t_cut(theta) e_theta : t in [1-a, 1+a]} around the cut boundary.
inline FitReport verify_lem1(const ManifoldModel& m, const DistanceOracle& oracle,
                             const DomainSample& sample, double band = 0.2, int n_radial = 5,
                             bool assert_nonfocal = false, const CutOptions& opts = {}) {
    FitReport rep;
    const int N = (int)sample.angles.size();
    if (assert_nonfocal) {
        for (int k = 0; k < N; ++k)
            if (sample.resolved[k] && sample.delta_v_values[k] < 1e-6)
                throw InconsistentInputError(
                    "nonfocality asserted but a cut direction has vanishing delta(v)");
    }
    std::vector<std::vector<std::string>> viols(N);
    std::vector<std::array<double, 2>> fits(N, {0.0, 0.0});  // (max ratio, skipped count)
    parallel_for(N, [&](int k) {
        if (!sample.resolved[k]) {
            fits[k][1] = n_radial;
            return;
        }
        for (int j = 0; j < n_radial; ++j) {
            double t = 1.0 - band + 2.0 * band * j / (n_radial - 1);
            double len = t * sample.t_cut_values[k];
            Vec v = len * sample.directions[k];
            double lhs = std::max(0.0, len - sample.t_cut_values[k]);
            auto y = exp_map(m, TangentVector(sample.x, v), 1.0, opts.integ).first;
            auto d = oracle.distance(sample.x.coords, y.coords);
            if (!d.converged) {
                fits[k][1] += 1;
                continue;
            }
            double rhs = len * len - d.value * d.value;
            if (lhs <= 1e-9) continue;  // inside I(x): inequality trivial
            if (rhs <= 1e-12) {
                std::ostringstream os;
                os << "angle " << sample.angles[k] << " scale " << t
                   << ": rho positive but |v|^2 - d^2 = " << rhs;
                viols[k].push_back(os.str());
                continue;
            }
            fits[k][0] = std::max(fits[k][0], lhs / rhs);
        }
    });
    for (int k = 0; k < N; ++k) {
        rep.K = std::max(rep.K, fits[k][0]);
        rep.skipped += (int)fits[k][1];
        rep.samples += n_radial - (int)fits[k][1];
        for (auto& s : viols[k]) rep.violations.push_back(s);
    }
    return rep;
}

// Two-sided comparability of rho_x(v, I(x)) and rho_y(w, I(y)) with
// w = -(final velocity of the geodesic t -> exp_x(tv)).
inline FitReport verify_lem2(const ManifoldModel& m, const DistanceOracle& oracle,
                             const DomainSample& sample_x, double band = 0.2, int n_radial = 3,
                             int stride = 6, int N_y = 72, const CutOptions& opts = {}) {
    FitReport rep;
    const int N = (int)sample_x.angles.size();
    CutOptions yopts = opts;
    yopts.with_focal = false;  // only t_cut enters the radial distances
    struct Slot {
        double ratio = 0.0;
        int samples = 0, skipped = 0;
        std::vector<std::string> viol;
    };
    std::vector<Slot> slots(N / stride + 1);
    std::vector<int> ks;
    for (int k = 0; k < N; k += stride) ks.push_back(k);
    parallel_for((int)ks.size(), [&](int idx) {
        int k = ks[idx];
        Slot& sl = slots[idx];
        if (!sample_x.resolved[k]) {
            sl.skipped += n_radial;
            return;
        }
        for (int j = 0; j < n_radial; ++j) {
            double t = 1.0 - band + 2.0 * band * j / std::max(1, n_radial - 1);
            double len = t * sample_x.t_cut_values[k];
            Vec v = len * sample_x.directions[k];
            auto [y, uf] = exp_map(m, TangentVector(sample_x.x, v), 1.0, opts.integ);
            Vec w = -uf.components;
            double rho_x = std::max(0.0, len - sample_x.t_cut_values[k]);
            double rho_y;
            try {
                auto sample_y = domain_sample(m, oracle, y, N_y, yopts);
                rho_y = radial_distance_to_domain(m, sample_y, TangentVector(y, w));
            } catch (const Error&) {
                sl.skipped += 1;
                continue;
            }
            sl.samples += 1;
            bool zx = rho_x <= 1e-7, zy = rho_y <= 1e-7;
            if (zx != zy) {
                std::ostringstream os;
                os << "angle " << sample_x.angles[k] << " scale " << t << ": rho_x=" << rho_x
                   << " rho_y=" << rho_y << " (one vanishes, the other does not)";
                sl.viol.push_back(os.str());
            } else if (!zx) {
                sl.ratio = std::max({sl.ratio, rho_x / rho_y, rho_y / rho_x});
            }
        }
    });
    for (auto& sl : slots) {
        rep.K = std::max(rep.K, sl.ratio);
        rep.samples += sl.samples;
        rep.skipped += sl.skipped;
        for (auto& s : sl.viol) rep.violations.push_back(s);
    }
    if (rep.K == 0.0) rep.K = 1.0;  // all pairs vanished together
    return rep;
}

// ---- Lipschitz probe for the cut time -------------------------------------

enum class CutProbeMode { GeodesicDirection, FocalKernel, Velocity };

struct CutProbeReport {
    double quotient = 0.0;
    int skipped = 0;
};

inline CutProbeReport cut_lipschitz_probe(const ManifoldModel& m, const DistanceOracle& oracle,
                                          const ChartPoint& x_in, const TangentVector& e_v,
                                          CutProbeMode mode, double eps,
                                          const CutOptions& opts = {}) {
    Vec x = m.reduce(x_in.coords);
    auto base_rep = cut_time(m, oracle, ChartPoint(x), e_v, opts);
    double t0 = base_rep.t_cut;

    Vec pert_dir;
    bool perturb_base = true;
    switch (mode) {
        case CutProbeMode::GeodesicDirection:
            pert_dir = e_v.components;
            break;
        case CutProbeMode::FocalKernel: {
            // Direction spanning the near-kernel of J01 at the cut time,
            // mapped to chart coordinates through the initial frame.
            auto sol = integrate_fundamental(m, TangentVector(ChartPoint(x), e_v.components),
                                             std::min(t0 * 1.01, opts.horizon_factor *
                                                                     m.diameter_bound()),
                                             opts.integ);
            auto st = solution_state_at(m, sol, t0);
            Eigen::JacobiSVD<Mat> svd(st.J01, Eigen::ComputeFullV);
            Vec kernel = svd.matrixV().col(m.dim() - 1);
            pert_dir = sol.trace.frames.front() * kernel;
            break;
        }
        case CutProbeMode::Velocity: {
            perturb_base = false;
            Mat B = orthonormal_basis(m.metric(x));
            // Rotate within the unit sphere: perturb along the g-orthogonal
            // complement of e_v.
            Mat g = m.metric(x);
            Vec cand = B.col(0);
            cand -= cand.dot(g * e_v.components) * e_v.components;
            if (std::sqrt(cand.dot(g * cand)) < 1e-6) {
                cand = B.col(1);
                cand -= cand.dot(g * e_v.components) * e_v.components;
            }
            pert_dir = cand / std::sqrt(cand.dot(g * cand));
            break;
        }
    }

    CutProbeReport rep;
    for (double sgn : {1.0, -1.0}) {
        Vec xp = x, up = e_v.components;
        if (perturb_base)
            xp = m.reduce(x + sgn * eps * pert_dir);
        else
            up += sgn * eps * pert_dir;
        up /= m.norm(xp, up);
        try {
            auto r = cut_time(m, oracle, ChartPoint(xp), TangentVector(ChartPoint(xp), up), opts);
            rep.quotient = std::max(rep.quotient, std::abs(r.t_cut - t0) / eps);
        } catch (const Error&) {
            rep.skipped += 1;
        }
    }
    return rep;
}

// ---- nonfocality ----------------------------------------------------------

struct NonfocalityReport {
    bool nonfocal = false;
    double min_margin = kInf;  // min over directions of t_f - t_cut
    double delta_tm = kInf;    // min delta(v) over cut directions
    double tolerance = 1e-6;
    int unresolved = 0;
};

inline NonfocalityReport nonfocality_report(const std::vector<DomainSample>& samples) {
    NonfocalityReport rep;
    for (const auto& ds : samples) {
        for (size_t k = 0; k < ds.angles.size(); ++k) {
            if (!ds.resolved[k]) {
                rep.unresolved += 1;
                continue;
            }
            rep.min_margin = std::min(rep.min_margin, ds.t_f_values[k] - ds.t_cut_values[k]);
            rep.delta_tm = std::min(rep.delta_tm, ds.delta_v_values[k]);
        }
    }
    rep.nonfocal = rep.min_margin > rep.tolerance;
    return rep;
}

}  // namespace mtwgeo

#endif
