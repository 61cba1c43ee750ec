#ifndef MTWGEO_CORE_HPP
#define MTWGEO_CORE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtwgeo {

// Stack-allocated up to dim 8; the shipped models are surfaces but the
// engine stays dimension-generic.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct ChartPoint {
    Vec coords;
    ChartPoint() = default;
    explicit ChartPoint(Vec c) : coords(std::move(c)) {}
    ChartPoint(double a, double b) : coords(2) { coords << a, b; }
};

struct TangentVector {
    ChartPoint base;
    Vec components;
    TangentVector() = default;
    TangentVector(ChartPoint b, Vec c) : base(std::move(b)), components(std::move(c)) {}
};

// ---- error taxonomy -------------------------------------------------------

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct ChartDomainError : Error { using Error::Error; };
struct ChartExitError : Error { using Error::Error; };
struct DegenerateInputError : Error { using Error::Error; };
struct IntegrationError : Error { using Error::Error; };
struct ResolutionError : Error { using Error::Error; };
struct SplittingError : Error { using Error::Error; };
struct BranchError : Error { using Error::Error; };
struct StencilUnsafeError : Error { using Error::Error; };
struct PreconditionError : Error { using Error::Error; };
struct UnresolvedCutError : Error { using Error::Error; };
struct InconsistentInputError : Error { using Error::Error; };

// ---- small helpers --------------------------------------------------------

inline double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

// Columns form a g-orthonormal basis of the tangent space (g = L L^T,
// basis = L^{-T}).
inline Mat orthonormal_basis(const Mat& g) {
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success)
        throw DegenerateInputError("metric not positive definite");
    Mat L = llt.matrixL();
    return L.transpose().inverse();
}

inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a < 0) a += 2.0 * M_PI;
    return a;
}

}  // namespace mtwgeo

#endif
