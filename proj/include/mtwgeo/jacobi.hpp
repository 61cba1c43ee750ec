#ifndef MTWGEO_JACOBI_HPP
#define MTWGEO_JACOBI_HPP

#include "mtwgeo/geodesic.hpp"

namespace mtwgeo {

// Fundamental matrix solutions of the Jacobi equation J'' + R(t) J = 0 in
// the parallel frame along a geodesic: J01 has (Id, 0) initial data, J10 has
// (0, Id). Every Jacobi field is J01 J(0) + J10 J'(0).
struct FundamentalSolutions {
    GeodesicTrace trace;
    std::vector<Mat> R;  // curvature operator in the frame, per grid time
    std::vector<Mat> J01, J01dot, J10, J10dot;

    // Full joint state per grid time (geodesic + frame + blocks), kept so
    // off-grid values can be produced by one partial integration step.
    std::vector<Eigen::VectorXd> states;
    double step = 0.0;

    struct State {
        Vec p, u;
        Mat frame, R;
        Mat J01, J01dot, J10, J10dot;
    };
};

namespace detail {

struct JacobiLayout {
    int n;
    int size() const { return 2 * n + 5 * n * n; }
    auto p(Eigen::VectorXd& s) const { return s.segment(0, n); }
    auto u(Eigen::VectorXd& s) const { return s.segment(n, n); }
    // blocks: frame, J01, J01dot, J10, J10dot (column-major n*n each)
    auto block(Eigen::VectorXd& s, int b) const { return s.segment(2 * n + b * n * n, n * n); }
    Mat mat(const Eigen::VectorXd& s, int b) const {
        return Eigen::Map<const Eigen::MatrixXd>(s.data() + 2 * n + b * n * n, n, n);
    }
    Vec cp(const Eigen::VectorXd& s) const { return s.segment(0, n); }
    Vec cu(const Eigen::VectorXd& s) const { return s.segment(n, n); }
};

// Curvature operator in the parallel frame: R_ij = <Riem(e_i, u)u, e_j>_g.
// Surfaces: exactly diag(0, K s^2) in the velocity-aligned frame.
inline Mat frame_curvature(const ManifoldModel& m, const Vec& p, const Vec& u, const Mat& F,
                           double speed) {
    const int n = m.dim();
    if (n == 2) {
        double K;
        if (auto Kg = m.gauss_curvature(m.reduce(p)))
            K = *Kg;
        else
            K = sectional_curvature(m, ChartPoint(m.reduce(p)), F.col(0), F.col(1));
        Mat R = Mat::Zero(2, 2);
        R(1, 1) = K * speed * speed;
        return R;
    }
    Mat g = m.metric(p);
    Mat R(n, n);
    for (int i = 0; i < n; ++i) {
        Vec w = riemann_xyz(m, p, F.col(i), u, u);
        for (int j = 0; j < n; ++j) R(i, j) = F.col(j).dot(g * w);
    }
    return 0.5 * (R + R.transpose());
}

inline Eigen::VectorXd jacobi_rhs(const ManifoldModel& m, const JacobiLayout& L,
                                  const Eigen::VectorXd& s, double speed) {
    const int n = L.n;
    Vec p = L.cp(s), u = L.cu(s);
    auto gam = m.christoffel(p);
    Mat F = L.mat(s, 0);
    Mat R = frame_curvature(m, p, u, F, speed);
    Eigen::VectorXd d(s.size());
    d.segment(0, n) = u;
    for (int k = 0; k < n; ++k) d[n + k] = -u.dot(gam[k] * u);
    for (int a = 0; a < n; ++a) {
        Vec e = F.col(a);
        for (int k = 0; k < n; ++k) d[2 * n + a * n + k] = -u.dot(gam[k] * e);
    }
    Mat J01 = L.mat(s, 1), J01d = L.mat(s, 2), J10 = L.mat(s, 3), J10d = L.mat(s, 4);
    Eigen::Map<Eigen::MatrixXd>(d.data() + 2 * n + 1 * n * n, n, n) = J01d;
    Eigen::Map<Eigen::MatrixXd>(d.data() + 2 * n + 2 * n * n, n, n) = -(R * J01).eval();
    Eigen::Map<Eigen::MatrixXd>(d.data() + 2 * n + 3 * n * n, n, n) = J10d;
    Eigen::Map<Eigen::MatrixXd>(d.data() + 2 * n + 4 * n * n, n, n) = -(R * J10).eval();
    return d;
}

inline FundamentalSolutions::State unpack_state(const ManifoldModel& m, const JacobiLayout& L,
                                                const Eigen::VectorXd& s, double speed) {
    FundamentalSolutions::State st;
    st.p = L.cp(s);
    st.u = L.cu(s);
    st.frame = L.mat(s, 0);
    st.J01 = L.mat(s, 1);
    st.J01dot = L.mat(s, 2);
    st.J10 = L.mat(s, 3);
    st.J10dot = L.mat(s, 4);
    st.R = frame_curvature(m, st.p, st.u, st.frame, speed);
    return st;
}

}  // namespace detail

// Integrates geodesic + parallel frame + fundamental Jacobi blocks jointly.
inline FundamentalSolutions integrate_fundamental(const ManifoldModel& m, const TangentVector& v,
                                                  double t_max,
                                                  const IntegrationOptions& opts = {}) {
    const int n = m.dim();
    detail::JacobiLayout L{n};
    FundamentalSolutions sol;
    sol.trace.initial = v;
    sol.trace.gauge = m.geodesic_gauge(v.base.coords, v.components);
    Vec p = sol.trace.gauge.point_to_work(v.base.coords);
    Vec u = sol.trace.gauge.vec_to_work(v.base.coords, v.components);
    double speed = m.norm(p, u);
    if (speed <= 0) throw DegenerateInputError("zero-speed Jacobi integration");
    sol.trace.speed = speed;

    Mat F = initial_frame(m, p, u);
    int steps = std::max(1, (int)std::ceil(t_max / opts.step));
    double h = t_max / steps;
    sol.step = h;

    Eigen::VectorXd s(L.size());
    s.segment(0, n) = p;
    s.segment(n, n) = u;
    for (int a = 0; a < n; ++a) s.segment(2 * n + a * n, n) = F.col(a);
    Eigen::Map<Eigen::MatrixXd>(s.data() + 2 * n + 1 * n * n, n, n) = Eigen::MatrixXd::Identity(n, n);
    Eigen::Map<Eigen::MatrixXd>(s.data() + 2 * n + 2 * n * n, n, n) = Eigen::MatrixXd::Zero(n, n);
    Eigen::Map<Eigen::MatrixXd>(s.data() + 2 * n + 3 * n * n, n, n) = Eigen::MatrixXd::Zero(n, n);
    Eigen::Map<Eigen::MatrixXd>(s.data() + 2 * n + 4 * n * n, n, n) = Eigen::MatrixXd::Identity(n, n);

    auto rhs = [&](const Eigen::VectorXd& st) { return detail::jacobi_rhs(m, L, st, speed); };
    auto record = [&](double t, const Eigen::VectorXd& st) {
        auto up = detail::unpack_state(m, L, st, speed);
        sol.trace.grid.push_back(t);
        sol.trace.points.push_back(up.p);
        sol.trace.velocities.push_back(up.u);
        sol.trace.frames.push_back(up.frame);
        sol.R.push_back(up.R);
        sol.J01.push_back(up.J01);
        sol.J01dot.push_back(up.J01dot);
        sol.J10.push_back(up.J10);
        sol.J10dot.push_back(up.J10dot);
        sol.states.push_back(st);
    };
    record(0.0, s);
    for (int i = 1; i <= steps; ++i) {
        s = detail::rk4_step(rhs, s, h);
        if (!s.allFinite()) throw IntegrationError("non-finite Jacobi state");
        Vec q = s.segment(0, n);
        if (m.chart_guard(m.reduce(q)) < opts.chart_guard_margin)
            throw ChartExitError("Jacobi integration entered chart guard band");
        record(i * h, s);
    }
    return sol;
}

// State at arbitrary t by one partial RK4 step from the nearest lower grid
// node (keeps off-grid queries consistent with the stored solution).
inline FundamentalSolutions::State solution_state_at(const ManifoldModel& m,
                                                     const FundamentalSolutions& sol, double t) {
    if (t < 0 || t > sol.trace.grid.back() + 1e-12)
        throw PreconditionError("query time outside integrated horizon");
    detail::JacobiLayout L{m.dim()};
    size_t i = std::min(sol.states.size() - 1, (size_t)std::floor(t / sol.step));
    double dt = t - sol.trace.grid[i];
    Eigen::VectorXd s = sol.states[i];
    if (std::abs(dt) > 1e-14) {
        auto rhs = [&](const Eigen::VectorXd& st) {
            return detail::jacobi_rhs(m, L, st, sol.trace.speed);
        };
        s = detail::rk4_step(rhs, s, dt);
    }
    return detail::unpack_state(m, L, s, sol.trace.speed);
}

// ---- symplectic structure -------------------------------------------------

inline Mat assemble_M(const Mat& J01, const Mat& J10, const Mat& J01dot, const Mat& J10dot) {
    const int n = (int)J01.rows();
    Mat M(2 * n, 2 * n);
    M.block(0, 0, n, n) = J01;
    M.block(0, n, n, n) = J10;
    M.block(n, 0, n, n) = J01dot;
    M.block(n, n, n, n) = J10dot;
    return M;
}

inline Mat symplectic_form(int n) {
    Mat Jm = Mat::Zero(2 * n, 2 * n);
    Jm.block(0, n, n, n) = Mat::Identity(n, n);
    Jm.block(n, 0, n, n) = -Mat::Identity(n, n);
    return Jm;
}

// max-abs norm of M(t)^T J M(t) - J; exactly preserved by the flow, so the
// defect is pure integrator error.
inline double symplectic_defect(const ManifoldModel& m, const FundamentalSolutions& sol,
                                double t) {
    auto st = solution_state_at(m, sol, t);
    Mat M = assemble_M(st.J01, st.J10, st.J01dot, st.J10dot);
    Mat Jm = symplectic_form(m.dim());
    return max_abs(M.transpose() * Jm * M - Jm);
}

// ---- focal detection ------------------------------------------------------

struct FocalReport {
    double t_f = kInf;                       // +inf marker: no focal time before horizon
    std::optional<Vec> focal_direction;      // right singular vector at the vanishing value
    std::vector<double> min_singular_trace;  // per grid time, smallest sigma of J10
    double bisection_width = 0.0;
};

// First singularity of J10: sign tracking of det between grid nodes, then
// bisection to width <= 1e-8.
inline FocalReport focal_time(const ManifoldModel& m, const FundamentalSolutions& sol,
                              double target_width = 1e-8) {
    FocalReport rep;
    const auto& grid = sol.trace.grid;
    std::vector<double> dets(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) {
        Eigen::JacobiSVD<Mat> svd(sol.J10[i]);
        rep.min_singular_trace.push_back(svd.singularValues().minCoeff());
        dets[i] = sol.J10[i].determinant();
    }
    size_t hit = 0;
    bool found = false;
    for (size_t i = 1; i < grid.size() && !found; ++i) {
        if (dets[i] == 0.0 || (dets[i] < 0) != (dets[i - 1] < 0)) {
            hit = i;
            found = true;
        } else if (i + 1 < grid.size() && rep.min_singular_trace[i] < 1e-8 &&
                   rep.min_singular_trace[i] <= rep.min_singular_trace[i - 1] &&
                   rep.min_singular_trace[i] <= rep.min_singular_trace[i + 1]) {
            throw ResolutionError(
                "J10 grazes singularity without det sign change; decrease the step");
        }
    }
    if (!found) return rep;  // t_f = +inf marker

    double lo = grid[hit - 1], hi = grid[hit];
    double dlo = dets[hit - 1];
    while (hi - lo > target_width) {
        double mid = 0.5 * (lo + hi);
        double dm = solution_state_at(m, sol, mid).J10.determinant();
        if (dm == 0.0) {
            lo = hi = mid;
            break;
        }
        if ((dm < 0) == (dlo < 0)) {
            lo = mid;
            dlo = dm;
        } else {
            hi = mid;
        }
    }
    rep.t_f = 0.5 * (lo + hi);
    rep.bisection_width = hi - lo;
    Eigen::JacobiSVD<Mat> svd(solution_state_at(m, sol, rep.t_f).J10, Eigen::ComputeFullV);
    rep.focal_direction = Vec(svd.matrixV().col(m.dim() - 1));
    return rep;
}

// ---- Jacobi field vs differential of the exponential ----------------------

// Compares J10(t) h (h in frame coordinates at t=0) against a central finite
// difference of the exponential family exp_x(t(v + s h)), evaluated in the
// work chart of the solution's gauge.
inline double verify_jacobi_vs_exp(const ManifoldModel& m, const FundamentalSolutions& sol,
                                   const Vec& h, double t, double fd_step = 1e-4) {
    if (t < 0 || t > sol.trace.grid.back()) throw PreconditionError("t outside grid");
    const Vec x_w = sol.trace.points.front();
    const Vec v_w = sol.trace.velocities.front();
    const Mat F0 = sol.trace.frames.front();
    Vec h_chart = F0 * h;

    IntegrationOptions io;
    io.step = sol.step;
    io.apply_gauge = false;  // inputs are already in the solution's work chart
    auto endpoint = [&](double sgn) {
        GeodesicTrace tr = integrate_trace(
            m, TangentVector(ChartPoint(x_w), v_w + sgn * fd_step * h_chart), t, io);
        return tr.points.back();
    };
    Vec fd = m.chart_delta(endpoint(1.0), endpoint(-1.0)) / (2.0 * fd_step);

    auto st = solution_state_at(m, sol, t);
    Vec fd_frame = Mat(st.frame).fullPivLu().solve(fd);
    return (st.J10 * h - fd_frame).norm() / std::max(1.0, h.norm());
}

// ---- Lagrangian graphs ----------------------------------------------------

struct LagrangianGraph {
    double t = 0.0;
    std::vector<int> splitting;  // frame indices whose (h,q) roles are swapped
    Mat S;                       // symmetric graph matrix
    double asymmetry_defect = 0.0;
};

struct Splitting {
    std::vector<int> swapped;
};

namespace detail {

// Applies the symplectic coordinate rotation (h_i, q_i) -> (q_i, -h_i) on the
// swapped indices to the columns of a (2n x k) basis.
inline Mat apply_splitting(const Mat& basis, int n, const std::vector<int>& swapped) {
    Mat out = basis;
    for (int i : swapped) {
        out.row(i) = basis.row(n + i);
        out.row(n + i) = -basis.row(i);
    }
    return out;
}

}  // namespace detail

// L_{t,v} = M(t)^{-1} (vertical subspace), represented as the graph
// {(S w, w)} over the vertical factor of the (possibly swapped) splitting.
inline LagrangianGraph lagrangian_graph(const ManifoldModel& m, const FundamentalSolutions& sol,
                                        double t, const Splitting* fixed = nullptr) {
    const int n = m.dim();
    auto st = solution_state_at(m, sol, t);
    Mat M = assemble_M(st.J01, st.J10, st.J01dot, st.J10dot);
    Mat vert = Mat::Zero(2 * n, n);
    vert.block(n, 0, n, n) = Mat::Identity(n, n);
    Mat basis = M.fullPivLu().solve(vert);

    auto try_split = [&](const std::vector<int>& swapped) -> std::optional<LagrangianGraph> {
        Mat rot = detail::apply_splitting(basis, n, swapped);
        Mat H = rot.topRows(n), Q = rot.bottomRows(n);
        Eigen::JacobiSVD<Mat> svd(Q);
        double smax = svd.singularValues().maxCoeff();
        if (svd.singularValues().minCoeff() < 1e-8 * std::max(1.0, smax)) return std::nullopt;
        Mat S = H * Q.inverse();
        LagrangianGraph g;
        g.t = t;
        g.splitting = swapped;
        g.asymmetry_defect = max_abs(S - S.transpose());
        g.S = 0.5 * (S + S.transpose());
        return g;
    };

    if (fixed) {
        auto g = try_split(fixed->swapped);
        if (!g) throw SplittingError("graph condition fails for the requested splitting");
        return *g;
    }
    if (auto g = try_split({})) return *g;
    // Swap the frame directions spanning the near-kernel of J01(t).
    Eigen::JacobiSVD<Mat> svd(st.J01, Eigen::ComputeFullV);
    std::vector<int> swapped;
    for (int k = 0; k < n; ++k) {
        if (svd.singularValues()[k] < 1e-6 * std::max(1.0, svd.singularValues().maxCoeff())) {
            Eigen::Index dom = 0;
            svd.matrixV().col(k).cwiseAbs().maxCoeff(&dom);
            swapped.push_back((int)dom);
        }
    }
    if (auto g = try_split(swapped)) return *g;
    throw SplittingError("no admissible graph splitting at the requested time");
}

// Finite-difference quadratic form <S'(t) w, w> against the symplectic
// identity value -|z|^2, where (0, z) = M(t) (S(t) w, w).
inline std::pair<double, double> sdot_probe(const ManifoldModel& m,
                                            const FundamentalSolutions& sol, double t,
                                            const Vec& w, double fd_step = 1e-5) {
    LagrangianGraph g0 = lagrangian_graph(m, sol, t);
    Splitting fix{g0.splitting};
    LagrangianGraph gp = lagrangian_graph(m, sol, t + fd_step, &fix);
    LagrangianGraph gm = lagrangian_graph(m, sol, t - fd_step, &fix);
    Mat Sdot = (gp.S - gm.S) / (2.0 * fd_step);
    double lhs = w.dot(Sdot * w);

    const int n = m.dim();
    auto st = solution_state_at(m, sol, t);
    Mat M = assemble_M(st.J01, st.J10, st.J01dot, st.J10dot);
    // Undo the splitting rotation to get genuine (h, q) coordinates.
    Eigen::VectorXd hq(2 * n);
    Vec h = g0.S * w, q = w;
    for (int i = 0; i < n; ++i) {
        hq[i] = h[i];
        hq[n + i] = q[i];
    }
    for (int i : g0.splitting) {
        hq[i] = -q[i];
        hq[n + i] = h[i];
    }
    Eigen::VectorXd img = M * hq;
    double rhs = -img.tail(n).squaredNorm();
    return {lhs, rhs};
}

// ---- Lipschitz / semiconcavity probes for the focal time ------------------

struct FocalLipschitzReport {
    double max_first_quotient = 0.0;
    double max_second_quotient = -kInf;  // upper (semiconcavity) probe
    bool complete = true;                // false if a perturbation hit the horizon
};

inline FocalLipschitzReport focal_lipschitz_probe(const ManifoldModel& m, const TangentVector& v,
                                                  int directions, double eps,
                                                  double horizon_factor = 4.0,
                                                  const IntegrationOptions& opts = {}) {
    double horizon = horizon_factor * m.diameter_bound();
    auto tf_of = [&](const TangentVector& w) -> double {
        auto sol = integrate_fundamental(m, w, horizon, opts);
        return focal_time(m, sol).t_f;
    };
    double tf0 = tf_of(v);
    if (!std::isfinite(tf0)) throw PreconditionError("base datum has no focal time in horizon");
    FocalLipschitzReport rep;
    Mat B = orthonormal_basis(m.metric(m.reduce(v.base.coords)));
    for (int k = 0; k < directions; ++k) {
        double a = 2.0 * M_PI * k / directions;
        Vec db = std::cos(a) * B.col(0) + std::sin(a) * B.col(1);
        // Alternate between base-point and velocity perturbations.
        bool perturb_base = (k % 2 == 0);
        // t_f is probed as a function on the fixed-speed sphere bundle: after
        // perturbing the base point or the direction, the velocity is rescaled
        // to the original speed at the perturbed point.
        double sp0 = m.norm(m.reduce(v.base.coords), v.components);
        auto shift = [&](double sgn) {
            Vec x = v.base.coords, u = v.components;
            if (perturb_base)
                x += sgn * eps * db;
            else
                u += sgn * eps * db;
            Vec xr = m.reduce(x);
            u *= sp0 / m.norm(xr, u);
            return TangentVector(ChartPoint(xr), u);
        };
        double tp = tf_of(shift(1.0)), tm = tf_of(shift(-1.0));
        if (!std::isfinite(tp) || !std::isfinite(tm)) {
            rep.complete = false;
            continue;
        }
        rep.max_first_quotient =
            std::max({rep.max_first_quotient, std::abs(tp - tf0) / eps, std::abs(tm - tf0) / eps});
        rep.max_second_quotient =
            std::max(rep.max_second_quotient, (tp + tm - 2 * tf0) / (eps * eps));
    }
    return rep;
}

// CSV export: t, vec(J01), vec(J10), vec(J01dot), vec(J10dot) column-major.
inline std::string fundamental_to_csv(const FundamentalSolutions& sol) {
    std::ostringstream os;
    os.precision(17);
    const int n = (int)sol.J01.front().rows();
    os << "t";
    for (const char* nm : {"J01", "J10", "J01dot", "J10dot"})
        for (int c = 0; c < n; ++c)
            for (int r = 0; r < n; ++r) os << "," << nm << "_" << r << c;
    os << "\n";
    for (size_t i = 0; i < sol.trace.grid.size(); ++i) {
        os << sol.trace.grid[i];
        for (const Mat* M : {&sol.J01[i], &sol.J10[i], &sol.J01dot[i], &sol.J10dot[i]})
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) os << "," << (*M)(r, c);
        os << "\n";
    }
    return os.str();
}

}  // namespace mtwgeo

#endif
