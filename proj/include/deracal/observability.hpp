#pragma once

// Structural observability via recursive Lie derivatives. The stack
// [h, L_f h, ..., L_f^K h] and its Jacobian are computed together by
// propagating Taylor jets whose coefficients carry gradients: the k-th
// Taylor coefficient of an output along the flow is L_f^k h / k!.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deracal/ad.hpp"
#include "deracal/augmented.hpp"
#include "deracal/errors.hpp"

namespace deracal {

struct LieOptions {
    int max_order = -1;     // -1: min(dim - 1, cap_order)
    int cap_order = 8;      // beyond ~8 orders the SVD tolerance dominates
    double svd_safety = 1e3;
    bool scale_rows = true; // per-order block normalization before rank/weights
};

inline int resolve_order(const LieOptions& opt, int dim) {
    if (opt.max_order > 0) return opt.max_order;
    return std::min(dim - 1 > 1 ? dim - 1 : 1, opt.cap_order);
}

struct LieResult {
    Eigen::VectorXd stack; // p*(K+1) entries, order-major
    Eigen::MatrixXd O;     // Jacobian of the stack, raw scaling
};

// One jet pass yields both the stack values and the observability matrix.
template <class Sys>
LieResult lie_expand(const Sys& sys, const Eigen::VectorXd& x0, int max_order) {
    if (max_order < 1) throw InvalidArgument("lie_expand: max_order must be >= 1");
    using Jet = ad::Series<ad::Grad>;
    const int n = sys.dim();
    const int p = sys.n_outputs();
    const int K = max_order;
    if (x0.size() != n) throw InvalidArgument("lie_expand: point dimension mismatch");

    const auto mk = [&](double v) { return Jet(std::size_t(K + 1), ad::Grad(v)); };
    std::vector<Jet> X;
    X.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        Jet j(std::size_t(K + 1));
        j.c[0] = ad::Grad::seeded(x0(i), n, i);
        X.push_back(std::move(j));
    }
    for (int m = 0; m < K; ++m) {
        const auto F = sys.f_selected(X, mk);
        for (int i = 0; i < n; ++i) X[std::size_t(i)].c[std::size_t(m) + 1] =
            F[std::size_t(i)].c[std::size_t(m)] / double(m + 1);
    }
    const auto Y = sys.h_selected(X, mk);

    LieResult r;
    r.stack.resize(p * (K + 1));
    r.O = Eigen::MatrixXd::Zero(p * (K + 1), n);
    double factorial = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k > 0) factorial *= double(k);
        for (int j = 0; j < p; ++j) {
            const ad::Grad& c = Y[std::size_t(j)].c[std::size_t(k)];
            if (!std::isfinite(c.v))
                throw NumericalFault("lie_expand: non-finite Lie derivative at order " +
                                     std::to_string(k) + ", output " + std::to_string(j));
            r.stack(k * p + j) = factorial * c.v;
            if (c.g.size()) r.O.row(k * p + j) = factorial * c.g.transpose();
        }
    }
    return r;
}

template <class Sys>
Eigen::VectorXd lie_derivative_stack(const Sys& sys, const Eigen::VectorXd& x0, int max_order) {
    return lie_expand(sys, x0, max_order).stack;
}

template <class Sys>
Eigen::MatrixXd observability_matrix(const Sys& sys, const Eigen::VectorXd& x0, int max_order) {
    return lie_expand(sys, x0, max_order).O;
}

// Normalize each Lie-order block by its own infinity norm so high orders do
// not drown the low ones.
Eigen::MatrixXd scale_order_blocks(const Eigen::MatrixXd& O, int n_outputs);

// sigma_i counts as nonzero iff sigma_i > max(rows, cols) * sigma_max * eps * safety.
int rank_from_singular_values(const Eigen::VectorXd& sv, Eigen::Index rows, Eigen::Index cols,
                              double safety);

struct PointObservability {
    int rank = 0;
    Eigen::VectorXd sv_scaled; // descending, from the block-scaled matrix
    Eigen::VectorXd sv_raw;    // descending, raw scaling
    // Row norms of the weak subspace basis (null directions plus the
    // smallest nonzero direction), normalized to sum 1.
    Eigen::VectorXd weak_abs;
};

template <class Sys>
PointObservability analyze_point(const Sys& sys, const Eigen::VectorXd& x0,
                                 const LieOptions& opt = {}) {
    const int K = resolve_order(opt, sys.dim());
    const LieResult lr = lie_expand(sys, x0, K);
    const Eigen::MatrixXd Os = opt.scale_rows ? scale_order_blocks(lr.O, sys.n_outputs()) : lr.O;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd_s(Os, Eigen::ComputeThinV);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd_r(lr.O);
    if (svd_s.info() != Eigen::Success || svd_r.info() != Eigen::Success)
        throw NumericalFault("analyze_point: SVD failed");

    PointObservability pt;
    pt.sv_scaled = svd_s.singularValues();
    pt.sv_raw = svd_r.singularValues();
    pt.rank = rank_from_singular_values(pt.sv_scaled, Os.rows(), Os.cols(), opt.svd_safety);
    const int n = sys.dim();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    for (int c = std::max(0, pt.rank - 1); c < n; ++c)
        w += svd_s.matrixV().col(c).cwiseAbs2();
    w = w.cwiseSqrt();
    pt.weak_abs = w / w.sum();
    return pt;
}

struct ObservabilityReport {
    int dim = 0;
    // Rank of the trajectory-stacked (block-scaled) observability matrix:
    // a direction only excited on part of the record still counts.
    int rank = 0;
    bool is_full_rank = false;
    int order_used = 0;
    std::size_t points_evaluated = 0;
    std::vector<std::string> entry_names;                    // states then parameters
    std::vector<double> singular_values;                     // stacked-matrix spectrum
    std::vector<double> weights_all;                         // weakest-direction |v|, sums to 1
    std::map<std::string, double> weakest_direction_weights; // restriction to parameters
    // Per-point raw-mode statistics of the smallest nonzero singular value.
    double sigma_min_mean = 0.0;
    double sigma_min_std = 0.0;
    Eigen::VectorXd evaluation_point; // point with the best single-point rank
};

struct SamplePoint {
    double t = 0.0;
    StateVec<double> x{};
    DeraInputs u{};
};

ObservabilityReport analyze(const AugmentedSpec& spec, const DeraParameters& base,
                            const std::vector<SamplePoint>& trajectory,
                            const LieOptions& opt = {});

struct SelectionResult {
    AugmentedSpec spec;
    ObservabilityReport report;
    std::vector<std::string> audit;
    bool irreducible = false; // could not reach full rank
};

// Removes the parameter most aligned with the weakest observable direction
// until the matrix is full rank. Threshold-type parameters are dropped up
// front when pin_thresholds is set; only parameters with weight >=
// weight_threshold are eligible for iterative removal.
SelectionResult select_estimable(const AugmentedSpec& spec, const DeraParameters& base,
                                 const std::vector<SamplePoint>& trajectory,
                                 double weight_threshold = 0.0, bool pin_thresholds = true,
                                 const LieOptions& opt = {});

std::string format_report(const ObservabilityReport& report);

} // namespace deracal
