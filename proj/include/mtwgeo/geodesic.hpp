#ifndef MTWGEO_GEODESIC_HPP
#define MTWGEO_GEODESIC_HPP

#include <algorithm>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "mtwgeo/manifold.hpp"

namespace mtwgeo {

struct IntegrationOptions {
    double step = 1e-3;            // geodesic-parameter step
    double chart_guard_margin = 1e-3;  // minimum distance to chart boundary
    bool apply_gauge = true;  // false: initial data are already work-chart coordinates
};

// Sampled geodesic with velocities and a parallel orthonormal frame, stored
// in the per-geodesic work chart (see ChartGauge).
struct GeodesicTrace {
    TangentVector initial;  // global chart
    ChartGauge gauge;
    double speed = 0.0;
    std::vector<double> grid;
    std::vector<Vec> points;      // work chart
    std::vector<Vec> velocities;  // work chart
    std::vector<Mat> frames;      // columns e_a, work chart; e_1 = normalized velocity

    Vec point_global(size_t i) const { return gauge.point_from_work(points[i]); }
    Vec velocity_global(size_t i) const { return gauge.vec_from_work(points[i], velocities[i]); }
};

namespace detail {

// One RK4 step of the joint geodesic + frame-transport system.
//   p' = u,  u'^k = -G^k_ij u^i u^j,  E'^k_a = -G^k_ij u^i E^j_a
template <typename Deriv, typename State>
State rk4_step(const Deriv& f, const State& s, double h) {
    State k1 = f(s);
    State k2 = f(s + (h / 2) * k1);
    State k3 = f(s + (h / 2) * k2);
    State k4 = f(s + h * k3);
    return s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
}

inline Eigen::VectorXd geodesic_rhs(const ManifoldModel& m, const Eigen::VectorXd& s, int n,
                                    int nframe) {
    Vec p = s.segment(0, n), u = s.segment(n, n);
    auto gam = m.christoffel(p);
    Eigen::VectorXd d(s.size());
    d.segment(0, n) = u;
    for (int k = 0; k < n; ++k) d[n + k] = -u.dot(gam[k] * u);
    for (int a = 0; a < nframe; ++a) {
        Vec e = s.segment(2 * n + a * n, n);
        for (int k = 0; k < n; ++k) d[2 * n + a * n + k] = -u.dot(gam[k] * e);
    }
    return d;
}

}  // namespace detail

// Frame at p with first column the normalized direction u, remaining columns
// g-orthonormal completions (deterministic Gram-Schmidt over the metric
// orthonormal basis).
inline Mat initial_frame(const ManifoldModel& m, const Vec& p, const Vec& u) {
    const int n = m.dim();
    Mat g = m.metric(p);
    double s = std::sqrt(u.dot(g * u));
    if (s <= 0) throw DegenerateInputError("zero-speed frame request");
    Mat B = orthonormal_basis(g);
    Mat F(n, n);
    F.col(0) = u / s;
    int filled = 1;
    for (int c = 0; c < n && filled < n; ++c) {
        Vec w = B.col(c);
        for (int j = 0; j < filled; ++j) w -= F.col(j).dot(g * w) * F.col(j);
        double wn = std::sqrt(std::max(0.0, w.dot(g * w)));
        if (wn > 1e-8) F.col(filled++) = w / wn;
    }
    if (filled < n) throw DegenerateInputError("frame completion failed");
    return F;
}

// Integrates the geodesic with initial data v for parameter t in [0, t_max],
// carrying the parallel frame, in the work chart of the model's gauge.
inline GeodesicTrace integrate_trace(const ManifoldModel& m, const TangentVector& v, double t_max,
                                     const IntegrationOptions& opts = {}) {
    const int n = m.dim();
    GeodesicTrace tr;
    tr.initial = v;
    tr.gauge = opts.apply_gauge ? m.geodesic_gauge(v.base.coords, v.components) : ChartGauge{};
    Vec p = tr.gauge.point_to_work(v.base.coords);
    Vec u = tr.gauge.vec_to_work(v.base.coords, v.components);
    tr.speed = m.norm(p, u);
    if (tr.speed <= 0) throw DegenerateInputError("zero-speed geodesic trace");

    Mat F = initial_frame(m, p, u);
    int steps = std::max(1, (int)std::ceil(t_max / opts.step));
    double h = t_max / steps;

    Eigen::VectorXd s(2 * n + n * n);
    s.segment(0, n) = p;
    s.segment(n, n) = u;
    for (int a = 0; a < n; ++a) s.segment(2 * n + a * n, n) = F.col(a);

    auto rhs = [&](const Eigen::VectorXd& st) { return detail::geodesic_rhs(m, st, n, n); };
    auto record = [&](double t, const Eigen::VectorXd& st) {
        tr.grid.push_back(t);
        tr.points.push_back(st.segment(0, n));
        tr.velocities.push_back(st.segment(n, n));
        Mat Fr(n, n);
        for (int a = 0; a < n; ++a) Fr.col(a) = st.segment(2 * n + a * n, n);
        tr.frames.push_back(Fr);
    };
    record(0.0, s);
    for (int i = 1; i <= steps; ++i) {
        s = detail::rk4_step(rhs, s, h);
        if (!s.allFinite()) throw IntegrationError("non-finite geodesic state");
        Vec q = s.segment(0, n);
        if (m.chart_guard(m.reduce(q)) < opts.chart_guard_margin)
            throw ChartExitError("geodesic entered chart guard band");
        record(i * h, s);
    }
    return tr;
}

// exp_x(t v) and the final velocity, in the global chart (reduced).
inline std::pair<ChartPoint, TangentVector> exp_map(const ManifoldModel& m,
                                                    const TangentVector& v, double t,
                                                    const IntegrationOptions& opts = {}) {
    if (t < 0) throw PreconditionError("exp_map requires t >= 0");
    Vec x = m.reduce(v.base.coords);
    double sp = m.norm(x, v.components);
    if (t * sp < 1e-14) return {ChartPoint(x), TangentVector(ChartPoint(x), v.components)};
    if (m.has_analytic_exp()) {
        auto [q, u] = m.analytic_exp(x, v.components, t);
        return {ChartPoint(q), TangentVector(ChartPoint(q), u)};
    }
    GeodesicTrace tr = integrate_trace(m, TangentVector(ChartPoint(x), v.components), t, opts);
    Vec q = m.reduce(tr.point_global(tr.points.size() - 1));
    Vec u = tr.velocity_global(tr.points.size() - 1);
    return {ChartPoint(q), TangentVector(ChartPoint(q), u)};
}

// Populates / re-derives the parallel frame of a trace (the integrator
// already carries it; this re-normalizes and validates).
inline GeodesicTrace parallel_frame(const ManifoldModel& m, GeodesicTrace trace) {
    if (trace.speed <= 0) throw DegenerateInputError("zero-speed trace");
    for (size_t i = 0; i < trace.points.size(); ++i) {
        Mat g = m.metric(trace.points[i]);
        Mat gram = trace.frames[i].transpose() * g * trace.frames[i];
        if (max_abs(gram - Mat::Identity(m.dim(), m.dim())) > 1e-6)
            throw IntegrationError("parallel frame lost orthonormality");
    }
    return trace;
}

// ---- distance oracle ------------------------------------------------------

struct DistanceOptions {
    int directions = 720;     // shooting fan resolution (dim 2)
    double step = 1e-3;       // integration step for refinement
    double fan_step = 5e-3;   // integration step for the coarse fan
    int fan_stride = 4;       // store every stride-th fan sample
    double refine_tol = 1e-10;  // endpoint residual target
    double match_tol = 1e-6;    // residual to accept a branch as connecting
    double gap = 1e-5;          // length gap for reported multiplicity
    int cap = 16;               // multiplicity cap
};

struct DistanceResult {
    double value = 0.0;
    TangentVector minimizer_velocity;
    int multiplicity = 0;
    bool converged = false;
    bool cap_reached = false;
    std::vector<Vec> velocities;  // all near-minimizing initial velocities
};

namespace detail {

// Damped Newton for exp_x(w) = y on the endpoint residual, seeded at w0.
// Residuals are wrap-aware chart differences. Returns the solved w.
inline std::optional<Vec> solve_log(const ManifoldModel& m, const Vec& x, const Vec& y, Vec w,
                                    const DistanceOptions& opts) {
    const int n = m.dim();
    IntegrationOptions io;
    io.step = opts.step;
    auto endpoint = [&](const Vec& vel) -> std::optional<Vec> {
        try {
            auto [q, u] = exp_map(m, TangentVector(ChartPoint(x), vel), 1.0, io);
            (void)u;
            return m.chart_delta(q.coords, y);
        } catch (const Error&) {
            return std::nullopt;
        }
    };
    auto r0 = endpoint(w);
    if (!r0) return std::nullopt;
    Vec F = *r0;
    for (int iter = 0; iter < 60; ++iter) {
        double res = F.norm();
        if (res <= opts.refine_tol) return w;
        // FD Jacobian of the endpoint w.r.t. the initial velocity.
        double fdh = 1e-6 * std::max(1.0, w.norm());
        Mat J(n, n);
        for (int k = 0; k < n; ++k) {
            Vec wp = w, wm = w;
            wp[k] += fdh;
            wm[k] -= fdh;
            auto rp = endpoint(wp), rm = endpoint(wm);
            if (!rp || !rm) return std::nullopt;
            J.col(k) = (*rp - *rm) / (2 * fdh);
        }
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible()) return std::nullopt;
        Vec dw = lu.solve(-F);
        double lambda = 1.0;
        bool ok = false;
        for (int bt = 0; bt < 12; ++bt) {
            auto rt = endpoint(w + lambda * dw);
            if (rt && rt->norm() < res) {
                w += lambda * dw;
                F = *rt;
                ok = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!ok) break;
    }
    return F.norm() <= opts.match_tol ? std::optional<Vec>(w) : std::nullopt;
}

}  // namespace detail

// Unit-speed geodesic fan from a fixed source: direction grid, sampled
// trajectories out to the diameter bound, used to seed branch refinement.
class GeodesicFan {
public:
    GeodesicFan(const ManifoldModel& m, Vec x, const DistanceOptions& opts)
        : m_(m), x_(std::move(x)), opts_(opts) {
        if (m_.dim() != 2)
            throw PreconditionError("shooting fan implemented for surfaces only");
        build();
    }

    const Vec& source() const { return x_; }

    // All geodesic branches from x to y found by fan seeding + Newton.
    DistanceResult query(const Vec& y, const std::vector<Vec>* extra_seeds = nullptr) const {
        Mat gy = m_.metric(y);
        // Approximate distance of every stored sample to y, per direction.
        std::vector<std::pair<double, double>> best(dirs_.size(), {kInf, 0.0});  // (approx, t)
        for (size_t k = 0; k < dirs_.size(); ++k) {
            for (size_t j = 0; j < samples_[k].size(); ++j) {
                Vec d = m_.chart_delta(samples_[k][j], y);
                double a = std::sqrt(d.dot(gy * d));
                if (a < best[k].first) best[k] = {a, sample_times_[j]};
            }
        }
        // Local minima over the direction index give one seed per branch.
        std::vector<Vec> seeds;
        double global_best = kInf;
        for (auto& b : best) global_best = std::min(global_best, b.first);
        const size_t K = dirs_.size();
        for (size_t k = 0; k < K; ++k) {
            double a = best[k].first;
            if (a > global_best + branch_slack_) continue;
            double prev = best[(k + K - 1) % K].first, next = best[(k + 1) % K].first;
            if (a <= prev && a <= next) seeds.push_back(best[k].second * dirs_[k]);
        }
        if (extra_seeds)
            for (auto& s : *extra_seeds) seeds.push_back(s);

        std::vector<Vec> sols;
        for (auto& s : seeds) {
            if (s.norm() < 1e-12) {
                sols.push_back(Vec::Zero(2));
                continue;
            }
            auto w = detail::solve_log(m_, x_, y, s, opts_);
            if (!w) continue;
            bool dup = false;
            for (auto& u : sols)
                if ((u - *w).norm() < 1e-6) dup = true;
            if (!dup) sols.push_back(*w);
        }
        DistanceResult out;
        if (sols.empty()) {
            out.converged = false;
            out.value = global_best;  // coarse fallback, flagged
            return out;
        }
        out.converged = true;
        out.value = kInf;
        for (auto& w : sols) out.value = std::min(out.value, m_.norm(x_, w));
        std::sort(sols.begin(), sols.end(), [&](const Vec& a, const Vec& b) {
            return m_.norm(x_, a) < m_.norm(x_, b);
        });
        for (auto& w : sols) {
            if (m_.norm(x_, w) > out.value + opts_.gap) break;
            if ((int)out.velocities.size() >= opts_.cap) {
                out.cap_reached = true;
                break;
            }
            out.velocities.push_back(w);
        }
        out.multiplicity = (int)out.velocities.size();
        out.minimizer_velocity = TangentVector(ChartPoint(x_), out.velocities.front());
        return out;
    }

private:
    void build() {
        Mat B = orthonormal_basis(m_.metric(x_));
        double L = m_.diameter_bound();
        int nsteps = std::max(2, (int)std::ceil(L / opts_.fan_step));
        double h = L / nsteps;
        for (int j = 0; j <= nsteps; j += opts_.fan_stride) sample_times_.push_back(j * h);
        IntegrationOptions io;
        io.step = h;
        for (int k = 0; k < opts_.directions; ++k) {
            double a = 2.0 * M_PI * k / opts_.directions;
            Vec u = std::cos(a) * B.col(0) + std::sin(a) * B.col(1);
            dirs_.push_back(u);
            std::vector<Vec> row;
            row.reserve(sample_times_.size());
            if (m_.has_analytic_exp()) {
                for (double t : sample_times_)
                    row.push_back(m_.analytic_exp(x_, u, t).first);
            } else {
                GeodesicTrace tr = integrate_trace(m_, TangentVector(ChartPoint(x_), u), L, io);
                for (int j = 0; j <= nsteps; j += opts_.fan_stride)
                    row.push_back(m_.reduce(tr.point_global(j)));
            }
            samples_.push_back(std::move(row));
        }
    }

    const ManifoldModel& m_;
    Vec x_;
    DistanceOptions opts_;
    std::vector<Vec> dirs_;
    std::vector<double> sample_times_;
    std::vector<std::vector<Vec>> samples_;
    double branch_slack_ = 0.5;
};

// Distance front end: analytic shortcut, short-range Newton gated by the
// injectivity hint, geodesic fan otherwise. Fans are cached per source.
class DistanceOracle {
public:
    DistanceOracle(std::shared_ptr<const ManifoldModel> m, DistanceOptions opts = {})
        : m_(std::move(m)), opts_(opts) {}

    const DistanceOptions& options() const { return opts_; }
    const ManifoldModel& model() const { return *m_; }

    DistanceResult distance(const Vec& x_raw, const Vec& y_raw,
                            const std::vector<Vec>* seeds = nullptr) const {
        Vec x = m_->reduce(x_raw), y = m_->reduce(y_raw);
        if (m_->has_analytic_distance()) {
            auto ad = m_->analytic_distance(x, y, opts_.gap, opts_.cap);
            DistanceResult out;
            out.value = ad.value;
            out.converged = true;
            out.cap_reached = ad.cap_reached;
            out.velocities = ad.velocities;
            out.multiplicity = (int)ad.velocities.size();
            if (!ad.velocities.empty())
                out.minimizer_velocity = TangentVector(ChartPoint(x), ad.velocities.front());
            return out;
        }
        // Short-range path: a connecting geodesic strictly below the
        // injectivity hint is the unique minimizer.
        double hint = m_->injectivity_hint();
        Vec w0 = m_->chart_delta(y, x);
        if (m_->norm(x, w0) < 0.7 * hint) {
            auto w = detail::solve_log(*m_, x, y, w0, opts_);
            if (w && m_->norm(x, *w) < 0.95 * hint) {
                DistanceResult out;
                out.value = m_->norm(x, *w);
                out.converged = true;
                out.multiplicity = 1;
                out.velocities = {*w};
                out.minimizer_velocity = TangentVector(ChartPoint(x), *w);
                return out;
            }
        }
        return fan_for(x)->query(y, seeds);
    }

    std::shared_ptr<const GeodesicFan> fan_for(const Vec& x_raw) const {
        Vec x = m_->reduce(x_raw);
        std::ostringstream key;
        key.precision(17);
        for (int i = 0; i < x.size(); ++i) key << x[i] << ",";
        std::scoped_lock lk(mu_);
        auto it = fans_.find(key.str());
        if (it != fans_.end()) return it->second;
        auto fan = std::make_shared<GeodesicFan>(*m_, x, opts_);
        if (fans_.size() > 64) fans_.clear();
        fans_.emplace(key.str(), fan);
        return fan;
    }

private:
    std::shared_ptr<const ManifoldModel> m_;
    DistanceOptions opts_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::string, std::shared_ptr<GeodesicFan>> fans_;
};

inline DistanceResult distance(const ManifoldModel& m, const ChartPoint& x, const ChartPoint& y,
                               const DistanceOptions& opts = {}) {
    // Non-owning alias; the throwaway oracle must not outlive this call.
    std::shared_ptr<const ManifoldModel> alias(&m, [](const ManifoldModel*) {});
    return DistanceOracle(alias, opts).distance(x.coords, y.coords);
}

// ---- trace export ---------------------------------------------------------

// Columns: t, point coords, velocity components, frame entries (column-major),
// all in the global chart.
inline std::string trace_to_csv(const GeodesicTrace& tr) {
    std::ostringstream os;
    os.precision(17);
    const int n = (int)tr.points.front().size();
    os << "t";
    for (int i = 0; i < n; ++i) os << ",x" << i;
    for (int i = 0; i < n; ++i) os << ",u" << i;
    for (int a = 0; a < n; ++a)
        for (int i = 0; i < n; ++i) os << ",e" << a << "_" << i;
    os << "\n";
    for (size_t j = 0; j < tr.grid.size(); ++j) {
        os << tr.grid[j];
        Vec p = tr.point_global(j), u = tr.velocity_global(j);
        for (int i = 0; i < n; ++i) os << "," << p[i];
        for (int i = 0; i < n; ++i) os << "," << u[i];
        for (int a = 0; a < n; ++a) {
            Vec e = tr.gauge.vec_from_work(tr.points[j], tr.frames[j].col(a));
            for (int i = 0; i < n; ++i) os << "," << e[i];
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace mtwgeo

#endif
