#include "deracal/observability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace deracal {

Eigen::MatrixXd scale_order_blocks(const Eigen::MatrixXd& O, int n_outputs) {
    Eigen::MatrixXd S = O;
    for (Eigen::Index r0 = 0; r0 < S.rows(); r0 += n_outputs) {
        const auto block = S.middleRows(r0, n_outputs);
        const double norm = block.cwiseAbs().maxCoeff();
        if (norm > 0.0) S.middleRows(r0, n_outputs) /= norm;
    }
    return S;
}

int rank_from_singular_values(const Eigen::VectorXd& sv, Eigen::Index rows, Eigen::Index cols,
                              double safety) {
    if (sv.size() == 0) return 0;
    const double tol = double(std::max(rows, cols)) * sv(0) *
                       std::numeric_limits<double>::epsilon() * safety;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++rank;
    return rank;
}

ObservabilityReport analyze(const AugmentedSpec& spec, const DeraParameters& base,
                            const std::vector<SamplePoint>& trajectory, const LieOptions& opt) {
    if (trajectory.empty()) throw InvalidArgument("analyze: empty trajectory");
    AugmentedSystem sys(spec, base);

    ObservabilityReport rep;
    rep.dim = sys.dim();
    rep.order_used = resolve_order(opt, sys.dim());
    rep.points_evaluated = trajectory.size();
    rep.entry_names = spec.states;
    rep.entry_names.insert(rep.entry_names.end(), spec.parameters.begin(),
                           spec.parameters.end());

    // Per-point matrices are stacked: information that only exists on parts
    // of the trajectory (droop legs, initialization transients) still counts
    // toward the joint rank, which is what a filter running over the whole
    // record sees.
    const int n = sys.dim();
    const int rows_per_point = sys.n_outputs() * (rep.order_used + 1);
    Eigen::MatrixXd stacked(rows_per_point * Eigen::Index(trajectory.size()), n);

    double smin_sum = 0.0, smin_sq = 0.0;
    int best_rank = -1;
    Eigen::VectorXd best_point;
    Eigen::Index r0 = 0;
    for (const auto& pt : trajectory) {
        sys.set_background(pt.x);
        sys.set_inputs(pt.u);
        const Eigen::VectorXd x0 = sys.selected_point();
        const LieResult lr = lie_expand(sys, x0, rep.order_used);
        const Eigen::MatrixXd Os =
            opt.scale_rows ? scale_order_blocks(lr.O, sys.n_outputs()) : lr.O;
        stacked.middleRows(r0, rows_per_point) = Os;
        r0 += rows_per_point;

        // Raw-mode statistics: smallest singular value still counted nonzero
        // under the tolerance rule.
        Eigen::JacobiSVD<Eigen::MatrixXd> svd_raw(lr.O);
        const int rank_raw = rank_from_singular_values(svd_raw.singularValues(), lr.O.rows(),
                                                       lr.O.cols(), opt.svd_safety);
        const double smin = rank_raw > 0 ? svd_raw.singularValues()(rank_raw - 1) : 0.0;
        smin_sum += smin;
        smin_sq += smin * smin;

        Eigen::JacobiSVD<Eigen::MatrixXd> svd_s(Os);
        const int rank_pt = rank_from_singular_values(svd_s.singularValues(), Os.rows(),
                                                      Os.cols(), opt.svd_safety);
        if (rank_pt > best_rank) {
            best_rank = rank_pt;
            best_point = x0;
        }
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericalFault("analyze: stacked SVD failed");
    const Eigen::VectorXd sv = svd.singularValues();
    rep.rank = rank_from_singular_values(sv, stacked.rows(), stacked.cols(), opt.svd_safety);
    rep.is_full_rank = (rep.rank == n);
    rep.singular_values.assign(sv.data(), sv.data() + sv.size());
    rep.evaluation_point = best_point;

    const double npts = double(trajectory.size());
    rep.sigma_min_mean = smin_sum / npts;
    rep.sigma_min_std =
        std::sqrt(std::max(0.0, smin_sq / npts - rep.sigma_min_mean * rep.sigma_min_mean));

    // Weak-subspace weights: the null directions together with the smallest
    // nonzero one (row norms of that basis). A structurally absent parameter
    // then shows up even though its singular value is exactly zero.
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    const int lo = std::max(0, rep.rank - 1);
    for (int c = lo; c < n; ++c) w += svd.matrixV().col(c).cwiseAbs2();
    w = w.cwiseSqrt();
    w /= w.sum();
    rep.weights_all.assign(w.data(), w.data() + w.size());
    for (std::size_t j = 0; j < spec.parameters.size(); ++j)
        rep.weakest_direction_weights[spec.parameters[j]] = w(Eigen::Index(spec.states.size() + j));
    return rep;
}

SelectionResult select_estimable(const AugmentedSpec& spec, const DeraParameters& base,
                                 const std::vector<SamplePoint>& trajectory,
                                 double weight_threshold, bool pin_thresholds,
                                 const LieOptions& opt) {
    SelectionResult res;
    res.spec = spec;

    if (pin_thresholds) {
        std::vector<std::string> kept;
        for (const auto& q : res.spec.parameters) {
            if (is_threshold_parameter(q))
                res.audit.push_back("pre-excluded (threshold/saturation): " + q);
            else
                kept.push_back(q);
        }
        res.spec.parameters = kept;
    }

    for (;;) {
        res.report = analyze(res.spec, base, trajectory, opt);
        if (res.report.is_full_rank) {
            res.audit.push_back("full rank " + std::to_string(res.report.rank) + " reached with " +
                                std::to_string(res.spec.parameters.size()) + " parameters");
            return res;
        }
        // Remove the parameter with the largest weakest-direction weight.
        std::string worst;
        double wmax = -1.0;
        for (const auto& [name, w] : res.report.weakest_direction_weights) {
            if (w > wmax) {
                wmax = w;
                worst = name;
            }
        }
        if (worst.empty() || wmax < weight_threshold) {
            res.irreducible = true;
            res.audit.push_back("irreducible rank deficiency: rank " +
                                std::to_string(res.report.rank) + " of " +
                                std::to_string(res.report.dim));
            return res;
        }
        res.audit.push_back("removed " + worst + " (weakest-direction weight " +
                            std::to_string(wmax) + ")");
        auto& ps = res.spec.parameters;
        ps.erase(std::remove(ps.begin(), ps.end(), worst), ps.end());
    }
}

std::string format_report(const ObservabilityReport& rep) {
    std::ostringstream os;
    os << "dimension = " << rep.dim << "\n";
    os << "lie_order = " << rep.order_used << "\n";
    os << "points_evaluated = " << rep.points_evaluated << "\n";
    os << "rank = " << rep.rank << "\n";
    os << "verdict = " << (rep.is_full_rank
                               ? "full rank (" + std::to_string(rep.rank) + ")"
                               : "rank-deficient (rank " + std::to_string(rep.rank) + " < " +
                                     std::to_string(rep.dim) + ")")
       << "\n";
    os << "sigma_min_mean = " << rep.sigma_min_mean << "\n";
    os << "sigma_min_std = " << rep.sigma_min_std << "\n";
    os << "\n[singular_spectrum]\n";
    for (std::size_t i = 0; i < rep.singular_values.size(); ++i)
        os << i + 1 << " " << rep.singular_values[i] << "\n";
    os << "\n[weakest_direction_weights]\n";
    std::vector<std::pair<std::string, double>> rows(rep.weakest_direction_weights.begin(),
                                                     rep.weakest_direction_weights.end());
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [name, w] : rows) os << name << " " << w << "\n";
    return os.str();
}

} // namespace deracal
