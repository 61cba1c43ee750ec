#ifndef MTWGEO_MTW_HPP
#define MTWGEO_MTW_HPP

#include "mtwgeo/cutlocus.hpp"

namespace mtwgeo {

struct MtwEvaluation {
    ChartPoint x;
    Vec v, xi, eta;
    double value = 0.0;
    double step_t = 0.0, step_s = 0.0;
    std::optional<double> richardson_estimate;  // two-level error estimate
    bool extended = false;
};

struct MtwOptions {
    double step = 1e-2;        // FD step in normalized tangent units
    bool richardson = true;    // one step-halving extrapolation level
    double safety_factor = 5.0;  // stencil must keep this many steps from TCL
    IntegrationOptions integ;
};

namespace detail {

// Mixed fourth derivative d2/dt2 d2/ds2 at (0,0) from a 3x3 stencil of f.
template <typename F>
double mixed_fourth(const F& f, double ht, double hs) {
    double c = f(0.0, 0.0);
    double sum = f(ht, hs) + f(ht, -hs) + f(-ht, hs) + f(-ht, -hs) -
                 2.0 * (f(ht, 0.0) + f(-ht, 0.0) + f(0.0, hs) + f(0.0, -hs)) + 4.0 * c;
    return sum / (ht * ht * hs * hs);
}

// Stencil admissibility: every second-argument vector v + s eta must stay
// safety_factor * step inside the sampled cut boundary, with the first-slot
// motion t|xi| added to the required margin.
inline void check_stencil_margin(const ManifoldModel& m, const DomainSample* sample, const Vec& x,
                                 const Vec& v, const Vec& xi, const Vec& eta, double step,
                                 double safety) {
    Mat g = m.metric(x);
    double margin = safety * step + step * std::sqrt(xi.dot(g * xi));
    auto needed = [&](const Vec& w) {
        double nw = std::sqrt(w.dot(g * w));
        if (sample) {
            Vec coeff = Mat(sample->basis).fullPivLu().solve(w);
            double tc = nw < 1e-12 ? sample->t_cut_values[0]
                                   : sample->t_cut_at_angle(std::atan2(coeff[1], coeff[0]));
            return tc - nw;
        }
        return m.injectivity_hint() - nw;
    };
    for (double s : {-1.0, 0.0, 1.0}) {
        if (needed(v + s * step * eta) < margin)
            throw StencilUnsafeError("finite-difference stencil too close to the cut locus");
    }
}

}  // namespace detail

// Cross-curvature tensor: -(3/2) d2/ds2 d2/dt2 of half the squared distance
// between exp_x(t xi) and exp_x(v + s eta), by mixed central differences with
// optional one-level step-halving extrapolation.
inline MtwEvaluation mtw_tensor(const ManifoldModel& m, const DistanceOracle& oracle,
                                const ChartPoint& x_in, const Vec& v, const Vec& xi,
                                const Vec& eta, const MtwOptions& opts = {},
                                const DomainSample* sample = nullptr) {
    Vec x = m.reduce(x_in.coords);
    detail::check_stencil_margin(m, sample, x, v, xi, eta, opts.step, opts.safety_factor);
    auto f = [&](double t, double s) {
        Vec xt = t == 0.0 ? x
                          : exp_map(m, TangentVector(ChartPoint(x), xi), t, opts.integ)
                                .first.coords;
        Vec ys = exp_map(m, TangentVector(ChartPoint(x), v + s * eta), 1.0, opts.integ)
                     .first.coords;
        auto d = oracle.distance(xt, ys);
        if (!d.converged) throw ResolutionError("distance oracle failed on MTW stencil");
        return 0.5 * d.value * d.value;
    };
    MtwEvaluation ev;
    ev.x = ChartPoint(x);
    ev.v = v;
    ev.xi = xi;
    ev.eta = eta;
    ev.step_t = ev.step_s = opts.step;
    double v1 = -1.5 * detail::mixed_fourth(f, opts.step, opts.step);
    if (opts.richardson) {
        double v2 = -1.5 * detail::mixed_fourth(f, opts.step / 2, opts.step / 2);
        ev.value = (4.0 * v2 - v1) / 3.0;
        ev.richardson_estimate = std::abs(v2 - v1) / 3.0;
    } else {
        ev.value = v1;
    }
    return ev;
}

// ---- extended cost --------------------------------------------------------

// Local inverse of (x', y') -> velocity, on the exponential branch through
// the anchor (x, v); defined inside the nonfocal neighborhood of the anchor.
class ExtendedCostContext {
public:
    ExtendedCostContext(std::shared_ptr<const ManifoldModel> m, ChartPoint x, Vec v,
                        double newton_tolerance = 1e-12, double neighborhood_radius = 0.5,
                        int substeps = 8, IntegrationOptions integ = {})
        : m_(std::move(m)),
          x_(m_->reduce(x.coords)),
          v_(std::move(v)),
          tol_(newton_tolerance),
          radius_(neighborhood_radius),
          substeps_(substeps),
          integ_(integ) {
        y_ = exp_map(*m_, TangentVector(ChartPoint(x_), v_), 1.0, integ_).first.coords;
        // Anchor admissibility: no focal time in (0, 1] along v.
        double sp = m_->norm(x_, v_);
        if (sp > 1e-12) {
            auto sol = integrate_fundamental(*m_, TangentVector(ChartPoint(x_), v_), 1.0, integ_);
            auto dets = sol.J10;
            for (size_t i = 1; i < sol.trace.grid.size(); ++i)
                if (sol.J10[i].determinant() <= 0.0)
                    throw PreconditionError("anchor velocity is focal: extended cost undefined");
        }
    }

    const ManifoldModel& model() const { return *m_; }
    const Vec& anchor_point() const { return x_; }
    const Vec& anchor_velocity() const { return v_; }
    const Vec& anchor_target() const { return y_; }

    // Velocity w' with exp_{x'}(w') = y' on the anchor branch, by Newton
    // path-following along the straight chart path from (x, y) to (x', y').
    Vec branch_velocity(const Vec& xq_raw, const Vec& yq_raw) const {
        Vec xq = m_->reduce(xq_raw), yq = m_->reduce(yq_raw);
        Vec dx = m_->chart_delta(xq, x_), dy = m_->chart_delta(yq, y_);
        DistanceOptions dopts;
        dopts.refine_tol = tol_;
        dopts.match_tol = std::max(1e-9, tol_ * 1e3);
        dopts.step = integ_.step;
        Vec w = v_;
        for (int k = 1; k <= substeps_; ++k) {
            double s = (double)k / substeps_;
            Vec xs = m_->reduce(x_ + s * dx), ys = m_->reduce(y_ + s * dy);
            auto sol = detail::solve_log(*m_, xs, ys, w, dopts);
            if (!sol) throw BranchError("Newton continuation diverged on the extended-cost path");
            Mat g = m_->metric(xs);
            Vec dw = *sol - w;
            if (std::sqrt(dw.dot(g * dw)) > radius_)
                throw BranchError("extended-cost continuation jumped branches");
            w = *sol;
        }
        return w;
    }

    double cost(const Vec& xq, const Vec& yq) const {
        Vec w = branch_velocity(xq, yq);
        double n = m_->norm(m_->reduce(xq), w);
        return 0.5 * n * n;
    }

private:
    std::shared_ptr<const ManifoldModel> m_;
    Vec x_, v_, y_;
    double tol_, radius_;
    int substeps_;
    IntegrationOptions integ_;
};

inline double extended_cost(const ExtendedCostContext& ctx, const ChartPoint& xq,
                            const ChartPoint& yq) {
    return ctx.cost(xq.coords, yq.coords);
}

// Extended tensor: same stencil as mtw_tensor with the branch cost in place
// of half the squared distance; coincides with it for anchors inside I(x).
inline MtwEvaluation extended_mtw_tensor(const ExtendedCostContext& ctx, const Vec& xi,
                                         const Vec& eta, const MtwOptions& opts = {}) {
    const ManifoldModel& m = ctx.model();
    const Vec& x = ctx.anchor_point();
    const Vec& v = ctx.anchor_velocity();
    auto f = [&](double t, double s) {
        Vec xt =
            t == 0.0 ? x : exp_map(m, TangentVector(ChartPoint(x), xi), t, opts.integ).first.coords;
        Vec ys =
            exp_map(m, TangentVector(ChartPoint(x), v + s * eta), 1.0, opts.integ).first.coords;
        return ctx.cost(xt, ys);
    };
    MtwEvaluation ev;
    ev.x = ChartPoint(x);
    ev.v = v;
    ev.xi = xi;
    ev.eta = eta;
    ev.step_t = ev.step_s = opts.step;
    ev.extended = true;
    double v1 = -1.5 * detail::mixed_fourth(f, opts.step, opts.step);
    if (opts.richardson) {
        double v2 = -1.5 * detail::mixed_fourth(f, opts.step / 2, opts.step / 2);
        ev.value = (4.0 * v2 - v1) / 3.0;
        ev.richardson_estimate = std::abs(v2 - v1) / 3.0;
    } else {
        ev.value = v1;
    }
    return ev;
}

// ---- condition scans ------------------------------------------------------

struct MtwGridSpec {
    std::vector<ChartPoint> x_samples;
    int n_dirs_v = 4;                              // tangent directions for v
    std::vector<double> radial_fractions = {0.0, 0.4};  // of the per-direction cut time
    int n_pairs = 4;  // (xi, eta) frame angles per (x, v)
    int domain_N = 36;  // direction resolution of the safety domain sample
    bool orthogonal_pairs = true;
};

struct MtwScanReport {
    double min_value = kInf;
    ChartPoint argmin_x;
    Vec argmin_v, argmin_xi, argmin_eta;
    bool pass = false;
    double tolerance = -5e-3;  // FD noise floor
    int evaluated = 0, skipped = 0;
    // Raw inequality data for the (K, C) and (C, D) fits.
    struct Entry {
        double value, inner, rho;
    };
    std::vector<Entry> entries;
};

inline MtwScanReport mtw_condition_scan(const ManifoldModel& m, const DistanceOracle& oracle,
                                        const MtwGridSpec& grid, const MtwOptions& opts = {},
                                        const CutOptions& cut_opts = {}) {
    MtwScanReport rep;
    for (const auto& xp : grid.x_samples) {
        DomainSample ds = domain_sample(m, oracle, xp, grid.domain_N, cut_opts);
        Mat B = ds.basis;
        Mat g = m.metric(ds.x.coords);
        struct Task {
            Vec v, xi, eta;
        };
        std::vector<Task> tasks;
        for (int kd = 0; kd < grid.n_dirs_v; ++kd) {
            double av = 2.0 * M_PI * kd / grid.n_dirs_v;
            Vec ev = std::cos(av) * B.col(0) + std::sin(av) * B.col(1);
            double tc = ds.t_cut_at_angle(av);
            for (double fr : grid.radial_fractions) {
                Vec v = fr * tc * ev;
                for (int kp = 0; kp < grid.n_pairs; ++kp) {
                    double ap = M_PI * kp / grid.n_pairs;
                    Vec xi = std::cos(ap) * B.col(0) + std::sin(ap) * B.col(1);
                    double shift = grid.orthogonal_pairs ? M_PI / 2 : M_PI / 2 + 0.35 * (kp % 3);
                    Vec eta = std::cos(ap + shift) * B.col(0) + std::sin(ap + shift) * B.col(1);
                    tasks.push_back({v, xi, eta});
                }
                if (fr == 0.0) break;  // v = 0 identical for every direction
            }
        }
        std::vector<std::optional<MtwEvaluation>> results(tasks.size());
        parallel_for((int)tasks.size(), [&](int i) {
            try {
                results[i] = mtw_tensor(m, oracle, ds.x, tasks[i].v, tasks[i].xi, tasks[i].eta,
                                        opts, &ds);
            } catch (const Error&) {
                results[i] = std::nullopt;
            }
        });
        for (size_t i = 0; i < tasks.size(); ++i) {
            if (!results[i]) {
                rep.skipped += 1;
                continue;
            }
            rep.evaluated += 1;
            const auto& ev = *results[i];
            double ip = std::abs(tasks[i].xi.dot(g * tasks[i].eta));
            rep.entries.push_back({ev.value, ip, 0.0});
            if (ev.value < rep.min_value) {
                rep.min_value = ev.value;
                rep.argmin_x = ds.x;
                rep.argmin_v = tasks[i].v;
                rep.argmin_xi = tasks[i].xi;
                rep.argmin_eta = tasks[i].eta;
            }
        }
    }
    rep.pass = rep.min_value >= rep.tolerance;
    return rep;
}

// Largest K (with accompanying smallest C >= 0) such that
// value >= -C * inner + K on the sampled inequalities (unit vectors).
struct KcFit {
    double K = -kInf;
    double C = 0.0;
    bool c_cap_hit = false;
    double c_cap = 0.0;
};

inline KcFit mtw_kc_fit(const MtwScanReport& scan, double c_cap = 100.0, int c_grid = 2001) {
    KcFit fit;
    fit.c_cap = c_cap;
    if (scan.entries.empty()) return fit;
    for (int j = 0; j < c_grid; ++j) {
        double C = c_cap * j / (c_grid - 1);
        double K = kInf;
        for (const auto& e : scan.entries) K = std::min(K, e.value + C * e.inner);
        if (K > fit.K + 1e-15) {
            fit.K = K;
            fit.C = C;
        }
    }
    fit.c_cap_hit = (fit.C >= c_cap - 1e-12);
    return fit;
}

// Smallest (C, D), C first, with value >= -C * inner - D * rho on the sample.
struct CdFit {
    double C = 0.0, D = 0.0;
    std::vector<std::string> violations;
    int samples = 0;
};

inline CdFit tenseurine_constants(const std::vector<MtwScanReport::Entry>& entries,
                                  double tol = 5e-3, double c_cap = 100.0, int c_grid = 2001) {
    CdFit fit;
    fit.samples = (int)entries.size();
    for (int j = 0; j < c_grid; ++j) {
        double C = c_cap * j / (c_grid - 1);
        bool feasible = true;
        double D = 0.0;
        for (const auto& e : entries) {
            double slack = e.value + C * e.inner;
            if (e.rho <= 1e-9) {
                if (slack < -tol) {
                    feasible = false;
                    break;
                }
            } else {
                D = std::max(D, std::max(0.0, -slack) / e.rho);
            }
        }
        if (feasible) {
            fit.C = C;
            fit.D = D;
            return fit;
        }
    }
    fit.C = c_cap;
    fit.D = kInf;
    for (const auto& e : entries)
        if (e.rho <= 1e-9 && e.value + c_cap * e.inner < -tol)
            fit.violations.push_back("interior sample violates the bound at the C cap: value=" +
                                     std::to_string(e.value));
    return fit;
}

}  // namespace mtwgeo

#endif
