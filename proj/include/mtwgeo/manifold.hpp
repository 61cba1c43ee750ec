#ifndef MTWGEO_MANIFOLD_HPP
#define MTWGEO_MANIFOLD_HPP

#include <functional>
#include <memory>
#include <utility>

#include "mtwgeo/core.hpp"

namespace mtwgeo {

// Maps between the global chart and a per-geodesic work chart chosen so the
// trajectory stays clear of coordinate singularities (sphere poles).
struct ChartGauge {
    bool identity = true;
    std::function<Vec(const Vec&)> to_work, from_work;
    std::function<Vec(const Vec&, const Vec&)> to_work_vec;    // (point, vector), point in global chart
    std::function<Vec(const Vec&, const Vec&)> from_work_vec;  // (point, vector), point in work chart

    Vec point_to_work(const Vec& p) const { return identity ? p : to_work(p); }
    Vec point_from_work(const Vec& p) const { return identity ? p : from_work(p); }
    Vec vec_to_work(const Vec& p, const Vec& v) const { return identity ? v : to_work_vec(p, v); }
    Vec vec_from_work(const Vec& p, const Vec& v) const { return identity ? v : from_work_vec(p, v); }
};

class ManifoldModel {
public:
    virtual ~ManifoldModel() = default;

    virtual int dim() const = 0;
    virtual std::string name() const = 0;

    virtual bool in_domain(const Vec& p) const = 0;
    virtual Vec reduce(const Vec& p) const { return p; }
    // Minimal representative of a-b under the chart periodicities.
    virtual Vec chart_delta(const Vec& a, const Vec& b) const { return a - b; }
    // Chart-units distance to the nearest invalid region (pole, range end).
    virtual double chart_guard(const Vec&) const { return kInf; }

    virtual Mat metric(const Vec& p) const = 0;
    virtual std::vector<Mat> christoffel(const Vec& p) const { return christoffel_fd(p); }

    virtual double diameter_bound() const = 0;
    // Conservative lower bound on the injectivity radius; gates the
    // short-distance path of the distance solver and cut-time brackets.
    virtual double injectivity_hint() const = 0;

    virtual std::optional<double> gauss_curvature(const Vec&) const { return std::nullopt; }

    struct AnalyticDistance {
        double value = 0.0;
        std::vector<Vec> velocities;  // all minimizing initial velocities (up to cap)
        bool cap_reached = false;
    };
    virtual bool has_analytic_distance() const { return false; }
    virtual AnalyticDistance analytic_distance(const Vec&, const Vec&, double /*gap*/,
                                               int /*cap*/) const {
        throw Error("no analytic distance for " + name());
    }

    virtual bool has_analytic_exp() const { return false; }
    virtual std::pair<Vec, Vec> analytic_exp(const Vec&, const Vec&, double /*t*/) const {
        throw Error("no analytic exponential for " + name());
    }

    virtual ChartGauge geodesic_gauge(const Vec&, const Vec&) const { return ChartGauge{}; }

    // Central-difference Christoffels from the metric.
    std::vector<Mat> christoffel_fd(const Vec& p, double step = 1e-5) const {
        const int n = dim();
        std::vector<Mat> dg(n);  // dg[k](i,j) = d_k g_ij
        for (int k = 0; k < n; ++k) {
            Vec pp = p, pm = p;
            pp[k] += step;
            pm[k] -= step;
            if (!in_domain(reduce(pp)) || !in_domain(reduce(pm)))
                throw ChartDomainError("christoffel stencil exits chart");
            dg[k] = (metric(reduce(pp)) - metric(reduce(pm))) / (2.0 * step);
        }
        Mat ginv = metric(p).inverse();
        std::vector<Mat> gamma(n, Mat::Zero(n, n));
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double s = 0;
                    for (int l = 0; l < n; ++l)
                        s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                    gamma[k](i, j) = 0.5 * s;
                }
        return gamma;
    }

    double norm(const Vec& p, const Vec& v) const {
        return std::sqrt(std::max(0.0, v.dot(metric(p) * v)));
    }
    double inner(const Vec& p, const Vec& v, const Vec& w) const { return v.dot(metric(p) * w); }
};

// ---- operations on the manifold abstraction -------------------------------

inline Mat metric_at(const ManifoldModel& m, const ChartPoint& p) {
    Vec q = m.reduce(p.coords);
    if (!m.in_domain(q)) throw ChartDomainError("point outside chart domain");
    return m.metric(q);
}

inline std::vector<Mat> christoffel_at(const ManifoldModel& m, const ChartPoint& p) {
    Vec q = m.reduce(p.coords);
    if (!m.in_domain(q)) throw ChartDomainError("point outside chart domain");
    return m.christoffel(q);
}

// (R(X,Y)Z)^r = X^i Y^j Z^s [ d_i G^r_js - d_j G^r_is + G^r_il G^l_js - G^r_jl G^l_is ],
// with Christoffel derivatives by central differences. Chart coordinates in
// and out.
inline Vec riemann_xyz(const ManifoldModel& m, const Vec& q, const Vec& X, const Vec& Y,
                       const Vec& Z, double step = 1e-5) {
    const int n = m.dim();
    std::vector<Mat> gam = m.christoffel(q);
    std::vector<std::vector<Mat>> dgam(n);  // dgam[mu][r](i,j) = d_mu Gamma^r_ij
    for (int mu = 0; mu < n; ++mu) {
        Vec pp = q, pm = q;
        pp[mu] += step;
        pm[mu] -= step;
        auto gp = m.christoffel(m.reduce(pp));
        auto gm = m.christoffel(m.reduce(pm));
        dgam[mu].resize(n);
        for (int r = 0; r < n; ++r) dgam[mu][r] = (gp[r] - gm[r]) / (2.0 * step);
    }
    Vec out = Vec::Zero(n);
    for (int r = 0; r < n; ++r) {
        double acc = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int s = 0; s < n; ++s) {
                    double term = dgam[i][r](j, s) - dgam[j][r](i, s);
                    for (int l = 0; l < n; ++l)
                        term += gam[r](i, l) * gam[l](j, s) - gam[r](j, l) * gam[l](i, s);
                    acc += X[i] * Y[j] * Z[s] * term;
                }
        out[r] = acc;
    }
    return out;
}

// Full curvature tensor route from Christoffel central differences; surfaces
// with an analytic Gauss curvature take the short path.
inline double sectional_curvature(const ManifoldModel& m, const ChartPoint& p, const Vec& xi,
                                  const Vec& eta, double step = 1e-5) {
    Vec q = m.reduce(p.coords);
    if (!m.in_domain(q)) throw ChartDomainError("point outside chart domain");
    Mat g = m.metric(q);
    double gram = xi.dot(g * xi) * eta.dot(g * eta) - std::pow(xi.dot(g * eta), 2);
    double scale = xi.dot(g * xi) * eta.dot(g * eta);
    if (gram <= 1e-12 * std::max(scale, 1e-300))
        throw DegenerateInputError("sectional curvature of a degenerate plane");

    if (m.dim() == 2) {
        if (auto K = m.gauss_curvature(q)) return *K;
    }
    Vec rxyz = riemann_xyz(m, q, xi, eta, eta, step);
    return xi.dot(g * rxyz) / gram;
}

// ---- built-in models ------------------------------------------------------

// Round sphere of radius r in spherical chart (theta, phi); geodesic work
// charts are rotated so the trajectory runs along the equator.
class Sphere final : public ManifoldModel {
public:
    explicit Sphere(double radius = 1.0, double pole_guard = 1e-6)
        : r_(radius), guard_(pole_guard) {
        if (radius <= 0) throw PreconditionError("sphere radius must be positive");
    }

    int dim() const override { return 2; }
    std::string name() const override { return "sphere"; }
    double radius() const { return r_; }

    bool in_domain(const Vec& p) const override { return p[0] > 0.0 && p[0] < M_PI; }
    double chart_guard(const Vec& p) const override { return std::min(p[0], M_PI - p[0]); }

    Vec reduce(const Vec& p) const override {
        double th = p[0], ph = p[1];
        th = std::fmod(th, 2.0 * M_PI);
        if (th < 0) th += 2.0 * M_PI;
        if (th > M_PI) {
            th = 2.0 * M_PI - th;
            ph += M_PI;
        }
        Vec out(2);
        out << th, wrap_angle(ph);
        return out;
    }

    Vec chart_delta(const Vec& a, const Vec& b) const override {
        Vec d = a - b;
        d[1] = std::remainder(d[1], 2.0 * M_PI);
        return d;
    }

    Mat metric(const Vec& p) const override {
        Mat g = Mat::Zero(2, 2);
        double s = std::sin(p[0]);
        g(0, 0) = r_ * r_;
        g(1, 1) = r_ * r_ * s * s;
        return g;
    }

    std::vector<Mat> christoffel(const Vec& p) const override {
        double th = p[0];
        std::vector<Mat> gam(2, Mat::Zero(2, 2));
        gam[0](1, 1) = -std::sin(th) * std::cos(th);
        double cot = std::cos(th) / std::sin(th);
        gam[1](0, 1) = gam[1](1, 0) = cot;
        return gam;
    }

    std::optional<double> gauss_curvature(const Vec&) const override { return 1.0 / (r_ * r_); }

    double diameter_bound() const override { return M_PI * r_; }
    double injectivity_hint() const override { return M_PI * r_; }

    Eigen::Vector3d embed(const Vec& p) const {
        double th = p[0], ph = p[1];
        return r_ * Eigen::Vector3d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                                    std::cos(th));
    }
    Vec unembed(const Eigen::Vector3d& X) const {
        Vec p(2);
        p << std::acos(std::clamp(X[2] / r_, -1.0, 1.0)), std::atan2(X[1], X[0]);
        return reduce(p);
    }
    // Embedding Jacobian (3x2).
    Eigen::Matrix<double, 3, 2> embed_jac(const Vec& p) const {
        double th = p[0], ph = p[1];
        Eigen::Matrix<double, 3, 2> J;
        J.col(0) = r_ * Eigen::Vector3d(std::cos(th) * std::cos(ph), std::cos(th) * std::sin(ph),
                                        -std::sin(th));
        J.col(1) =
            r_ * Eigen::Vector3d(-std::sin(th) * std::sin(ph), std::sin(th) * std::cos(ph), 0.0);
        return J;
    }
    Eigen::Vector3d push(const Vec& p, const Vec& v) const { return embed_jac(p) * v; }
    Vec pull(const Vec& p, const Eigen::Vector3d& V) const {
        auto J = embed_jac(p);
        Eigen::Matrix2d JtJ = J.transpose() * J;
        Eigen::Vector2d w = JtJ.ldlt().solve(J.transpose() * V);
        Vec out(2);
        out << w[0], w[1];
        return out;
    }

    bool has_analytic_exp() const override { return true; }
    std::pair<Vec, Vec> analytic_exp(const Vec& x, const Vec& v, double t) const override {
        double sp = norm(x, v);
        Eigen::Vector3d P = embed(x);
        if (sp * t < 1e-300) return {x, v};
        Eigen::Vector3d T = push(x, v).normalized();
        double a = sp * t / r_;
        Eigen::Vector3d Q = std::cos(a) * P + std::sin(a) * r_ * T;
        Eigen::Vector3d Tq = -std::sin(a) * P / r_ + std::cos(a) * T;
        Vec q = unembed(Q);
        return {q, pull(q, sp * Tq)};
    }

    bool has_analytic_distance() const override { return true; }
    AnalyticDistance analytic_distance(const Vec& x, const Vec& y, double gap,
                                       int cap) const override {
        Eigen::Vector3d P = embed(x), Q = embed(y);
        double cosang = std::clamp(P.dot(Q) / (r_ * r_), -1.0, 1.0);
        double ang = std::acos(cosang);
        AnalyticDistance out;
        out.value = r_ * ang;
        double antipode_excess = r_ * (M_PI - ang);
        Mat g = metric(x);
        Mat basis = orthonormal_basis(g);
        if (antipode_excess <= gap) {
            // Continuum of minimizers: report an evenly spaced capped set.
            out.cap_reached = true;
            for (int k = 0; k < cap; ++k) {
                double alpha = 2.0 * M_PI * k / cap;
                Vec dir = std::cos(alpha) * basis.col(0) + std::sin(alpha) * basis.col(1);
                out.velocities.push_back(M_PI * r_ * dir);
            }
        } else if (ang < 1e-14) {
            out.velocities.push_back(Vec::Zero(2));
        } else {
            Eigen::Vector3d T = (Q / r_ - cosang * P / r_).normalized();
            Vec dir = pull(x, T);
            dir /= norm(x, dir);
            out.velocities.push_back(out.value * dir);
        }
        return out;
    }

    ChartGauge geodesic_gauge(const Vec& x, const Vec& v) const override {
        Eigen::Vector3d P = embed(x).normalized();
        Eigen::Vector3d T;
        if (norm(x, v) > 1e-14) {
            T = push(x, v);
            T = (T - T.dot(P) * P).normalized();
        } else {
            // Arbitrary tangent for zero velocity.
            Eigen::Vector3d a = std::abs(P[2]) < 0.9 ? Eigen::Vector3d::UnitZ()
                                                     : Eigen::Vector3d::UnitX();
            T = (a - a.dot(P) * P).normalized();
        }
        Eigen::Vector3d N = P.cross(T);
        // Rows map (P,T,N) to (x-hat, y-hat, z-hat): geodesic becomes the equator.
        Eigen::Matrix3d R;
        R.row(0) = P;
        R.row(1) = T;
        R.row(2) = N;
        Eigen::Matrix3d Rinv = R.transpose();
        auto self = this;
        ChartGauge gg;
        gg.identity = false;
        gg.to_work = [self, R](const Vec& p) { return self->unembed(R * self->embed(p)); };
        gg.from_work = [self, Rinv](const Vec& p) { return self->unembed(Rinv * self->embed(p)); };
        gg.to_work_vec = [self, R](const Vec& p, const Vec& w) {
            return self->pull(self->unembed(R * self->embed(p)), R * self->push(p, w));
        };
        gg.from_work_vec = [self, Rinv](const Vec& p, const Vec& w) {
            return self->pull(self->unembed(Rinv * self->embed(p)), Rinv * self->push(p, w));
        };
        return gg;
    }

private:
    double r_;
    double guard_;
};

// Flat square torus R^2 / (L Z)^2.
class FlatTorus final : public ManifoldModel {
public:
    explicit FlatTorus(double period = 2.0 * M_PI) : L_(period) {
        if (period <= 0) throw PreconditionError("torus period must be positive");
    }

    int dim() const override { return 2; }
    std::string name() const override { return "flat_torus"; }
    double period() const { return L_; }

    bool in_domain(const Vec&) const override { return true; }
    Vec reduce(const Vec& p) const override {
        Vec q = p;
        for (int i = 0; i < 2; ++i) {
            q[i] = std::fmod(q[i], L_);
            if (q[i] < 0) q[i] += L_;
        }
        return q;
    }
    Vec chart_delta(const Vec& a, const Vec& b) const override {
        Vec d = a - b;
        for (int i = 0; i < 2; ++i) d[i] = std::remainder(d[i], L_);
        return d;
    }

    Mat metric(const Vec&) const override { return Mat::Identity(2, 2); }
    std::vector<Mat> christoffel(const Vec&) const override {
        return std::vector<Mat>(2, Mat::Zero(2, 2));
    }
    std::optional<double> gauss_curvature(const Vec&) const override { return 0.0; }

    double diameter_bound() const override { return L_ * std::sqrt(2.0) / 2.0; }
    double injectivity_hint() const override { return L_ / 2.0; }

    bool has_analytic_exp() const override { return true; }
    std::pair<Vec, Vec> analytic_exp(const Vec& x, const Vec& v, double t) const override {
        return {reduce(x + t * v), v};
    }

    bool has_analytic_distance() const override { return true; }
    AnalyticDistance analytic_distance(const Vec& x, const Vec& y, double gap,
                                       int /*cap*/) const override {
        Vec d0 = y - x;
        AnalyticDistance out;
        out.value = kInf;
        std::vector<Vec> cands;
        for (int i = -1; i <= 1; ++i)
            for (int j = -1; j <= 1; ++j) {
                Vec d(2);
                d << std::remainder(d0[0], L_) + i * L_, std::remainder(d0[1], L_) + j * L_;
                cands.push_back(d);
                out.value = std::min(out.value, d.norm());
            }
        for (auto& d : cands)
            if (d.norm() <= out.value + gap) out.velocities.push_back(d);
        return out;
    }

private:
    double L_;
};

// Surface of revolution with profile radius r(u): metric
// (1 + r'(u)^2) du^2 + r(u)^2 dphi^2. A periodic (Fourier) profile yields a
// closed surface; a polynomial profile is chart-guarded at the u-range ends.
class RevolutionSurface final : public ManifoldModel {
public:
    enum class Basis { Poly, Fourier };

    RevolutionSurface(Basis basis, std::vector<double> coeffs, double u_min, double u_max,
                      std::string label = "revolution")
        : basis_(basis), c_(std::move(coeffs)), a_(u_min), b_(u_max), label_(std::move(label)) {
        if (!(u_max > u_min)) throw PreconditionError("empty u range");
        periodic_ = (basis_ == Basis::Fourier);
        omega_ = 2.0 * M_PI / (b_ - a_);
        calibrate();
    }

    int dim() const override { return 2; }
    std::string name() const override { return label_; }
    bool periodic_profile() const { return periodic_; }

    double profile(double u, int deriv = 0) const {
        double s = 0;
        if (basis_ == Basis::Poly) {
            // c_[k] * u^k, differentiated deriv times
            for (size_t k = deriv; k < c_.size(); ++k) {
                double f = 1;
                for (int j = 0; j < deriv; ++j) f *= double(k - j);
                s += c_[k] * f * std::pow(u, double(k - deriv));
            }
        } else {
            // c_[0] + sum_m c_[2m-1] cos(m w u) + c_[2m] sin(m w u)
            if (deriv == 0) s += c_[0];
            for (size_t i = 1; i < c_.size(); ++i) {
                size_t m = (i + 1) / 2;
                double w = m * omega_;
                bool is_cos = (i % 2 == 1);
                double ph = w * u;
                double val;
                switch (deriv % 4) {
                    case 0: val = is_cos ? std::cos(ph) : std::sin(ph); break;
                    case 1: val = is_cos ? -std::sin(ph) : std::cos(ph); break;
                    case 2: val = is_cos ? -std::cos(ph) : -std::sin(ph); break;
                    default: val = is_cos ? std::sin(ph) : -std::cos(ph); break;
                }
                s += c_[i] * std::pow(w, double(deriv)) * val;
            }
        }
        return s;
    }

    bool in_domain(const Vec& p) const override {
        if (periodic_) return true;
        return p[0] > a_ && p[0] < b_;
    }
    double chart_guard(const Vec& p) const override {
        if (periodic_) return kInf;
        return std::min(p[0] - a_, b_ - p[0]);
    }
    Vec reduce(const Vec& p) const override {
        Vec q = p;
        if (periodic_) {
            q[0] = a_ + std::fmod(q[0] - a_, b_ - a_);
            if (q[0] < a_) q[0] += b_ - a_;
        }
        q[1] = wrap_angle(q[1]);
        return q;
    }
    Vec chart_delta(const Vec& x, const Vec& y) const override {
        Vec d = x - y;
        if (periodic_) d[0] = std::remainder(d[0], b_ - a_);
        d[1] = std::remainder(d[1], 2.0 * M_PI);
        return d;
    }

    Mat metric(const Vec& p) const override {
        double r = profile(p[0]), rp = profile(p[0], 1);
        if (r <= 0) throw ChartDomainError("profile radius nonpositive");
        Mat g = Mat::Zero(2, 2);
        g(0, 0) = 1.0 + rp * rp;
        g(1, 1) = r * r;
        return g;
    }

    std::vector<Mat> christoffel(const Vec& p) const override {
        double r = profile(p[0]), rp = profile(p[0], 1), rpp = profile(p[0], 2);
        double E = 1.0 + rp * rp;
        std::vector<Mat> gam(2, Mat::Zero(2, 2));
        gam[0](0, 0) = rp * rpp / E;
        gam[0](1, 1) = -r * rp / E;
        gam[1](0, 1) = gam[1](1, 0) = rp / r;
        return gam;
    }

    std::optional<double> gauss_curvature(const Vec& p) const override {
        double r = profile(p[0]), rp = profile(p[0], 1), rpp = profile(p[0], 2);
        double E = 1.0 + rp * rp;
        return -rpp / (r * E * E);
    }

    double diameter_bound() const override { return diameter_; }
    double injectivity_hint() const override { return inj_hint_; }

private:
    void calibrate() {
        const int N = 2048;
        double rmin = kInf, rmax = 0, len = 0, kmax = 0;
        for (int i = 0; i < N; ++i) {
            double u = a_ + (b_ - a_) * (i + 0.5) / N;
            double r = profile(u), rp = profile(u, 1);
            if (r <= 0) throw PreconditionError("profile radius must stay positive on u range");
            rmin = std::min(rmin, r);
            rmax = std::max(rmax, r);
            len += std::sqrt(1.0 + rp * rp) * (b_ - a_) / N;
            Vec p(2);
            p << u, 0.0;
            kmax = std::max(kmax, std::abs(*gauss_curvature(p)));
        }
        diameter_ = 0.5 * len + M_PI * rmax;
        double conj = kmax > 1e-12 ? M_PI / std::sqrt(kmax) : kInf;
        double loop = periodic_ ? std::min(2.0 * M_PI * rmin, len) : 2.0 * M_PI * rmin;
        inj_hint_ = 0.45 * std::min(loop, std::min(conj, len));
    }

    Basis basis_;
    std::vector<double> c_;
    double a_, b_, omega_;
    bool periodic_;
    std::string label_;
    double diameter_ = 0, inj_hint_ = 0;
};

// ---- builtin registry -----------------------------------------------------

inline std::shared_ptr<ManifoldModel> make_builtin(const std::string& id) {
    if (id == "sphere_r1") return std::make_shared<Sphere>(1.0);
    if (id == "sphere_r2") return std::make_shared<Sphere>(2.0);
    if (id == "torus_2pi") return std::make_shared<FlatTorus>(2.0 * M_PI);
    if (id == "dumbbell")
        return std::make_shared<RevolutionSurface>(RevolutionSurface::Basis::Fourier,
                                                   std::vector<double>{1.0, 0.6}, 0.0,
                                                   2.0 * M_PI, "dumbbell");
    if (id == "wavy_torus")
        return std::make_shared<RevolutionSurface>(RevolutionSurface::Basis::Fourier,
                                                   std::vector<double>{1.0, 0.25}, 0.0,
                                                   2.0 * M_PI, "wavy_torus");
    throw PreconditionError("unknown builtin manifold: " + id);
}

}  // namespace mtwgeo

#endif
