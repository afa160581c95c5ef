#pragma once

// Laplace-approximate restricted log-likelihood for smoothing parameter
// selection, integrating out the penalized coefficients:
//
//   l_r(lambda) = l(b) - 1/2 b' S b + 1/2 log|S_PP|_+ - 1/2 log|(X'WX + S)_PP|
//                 + M_p/2 log(2 pi)
//
// where P indexes penalized columns and M_p is the dimension of the joint
// penalty null space inside P. Smoothing parameters are chosen by a
// Nelder-Mead search on log(lambda), started from the best point of a coarse
// grid.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "pamm/design.hpp"
#include "pamm/error.hpp"
#include "pamm/pirls.hpp"

namespace pamm {

// log|S_lambda|_+ over the penalized columns. Penalties of distinct terms
// occupy disjoint blocks, so the determinant factorizes by term. The null
// space dimension of each block is fixed from the unit-lambda sum.
class PenaltyLogDet {
public:
    explicit PenaltyLogDet(const Design& d) {
        for (std::size_t k = 0; k < d.penalties.size(); ++k) {
            const auto term = d.penalties[k].term;
            auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.term == term; });
            if (it == blocks_.end()) {
                blocks_.push_back({term, {}, {}, 0, -1, {}});
                it = blocks_.end() - 1;
            }
            it->penalty_index.push_back(k);
            it->matrices.push_back(d.penalties[k].penalty.matrix);
        }
        for (auto& b : blocks_) {
            const Eigen::Index dim = b.matrices.front().rows();
            Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
            for (const auto& m : b.matrices) sum += m;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sum, Eigen::EigenvaluesOnly);
            const double top = es.eigenvalues().maxCoeff();
            b.null = 0;
            for (Eigen::Index i = 0; i < dim; ++i)
                if (!(es.eigenvalues()[i] > 1e-10 * top)) ++b.null;
            null_dim_ += b.null;
            // closed forms: single penalty, or a penalty plus identity
            if (b.matrices.size() == 1) {
                b.identity_slot = -1;
                b.eigen = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.matrices[0], Eigen::EigenvaluesOnly).eigenvalues();
            } else if (b.matrices.size() == 2) {
                for (int s = 0; s < 2; ++s)
                    if (b.matrices[static_cast<std::size_t>(s)].isIdentity(0.0)) b.identity_slot = s;
                if (b.identity_slot >= 0)
                    b.eigen = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                  b.matrices[static_cast<std::size_t>(1 - b.identity_slot)], Eigen::EigenvaluesOnly)
                                  .eigenvalues();
            }
        }
    }

    int null_dim() const { return null_dim_; }

    double operator()(const Eigen::VectorXd& lambdas) const {
        double total = 0.0;
        for (const auto& b : blocks_) {
            Eigen::VectorXd ev;
            if (b.matrices.size() == 1) {
                ev = lambdas[static_cast<Eigen::Index>(b.penalty_index[0])] * b.eigen;
            } else if (b.matrices.size() == 2 && b.identity_slot >= 0) {
                const auto id = static_cast<std::size_t>(b.identity_slot);
                const double li = lambdas[static_cast<Eigen::Index>(b.penalty_index[id])];
                const double lo = lambdas[static_cast<Eigen::Index>(b.penalty_index[1 - id])];
                ev = (lo * b.eigen).array() + li;
            } else {
                Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(b.matrices.front().rows(), b.matrices.front().cols());
                for (std::size_t s = 0; s < b.matrices.size(); ++s)
                    sum += lambdas[static_cast<Eigen::Index>(b.penalty_index[s])] * b.matrices[s];
                ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sum, Eigen::EigenvaluesOnly).eigenvalues();
            }
            std::sort(ev.data(), ev.data() + ev.size());
            for (Eigen::Index i = b.null; i < ev.size(); ++i) {
                if (!(ev[i] > 0.0)) throw NumericError("penalty log-determinant: nonpositive range eigenvalue");
                total += std::log(ev[i]);
            }
        }
        return total;
    }

private:
    struct Block {
        std::size_t term;
        std::vector<std::size_t> penalty_index;
        std::vector<Eigen::MatrixXd> matrices;
        int null = 0;
        int identity_slot = -1;
        Eigen::VectorXd eigen;
    };
    std::vector<Block> blocks_;
    int null_dim_ = 0;
};

struct RemlEvaluation {
    double value = 0.0;
    PirlsResult fit;
};

// Evaluates the criterion given a converged PIRLS fit at `lambdas`.
inline double reml_from_fit(const Design& d, const PirlsResult& fit, const Eigen::VectorXd& lambdas,
                            const PenaltyLogDet& logdet) {
    const auto P = d.penalized_columns();
    double value = fit.loglik - 0.5 * fit.penalty_value;
    if (P.empty()) return value;
    const auto np = static_cast<Eigen::Index>(P.size());
    Eigen::MatrixXd A(np, np);
    const Eigen::MatrixXd full = fit.XtWX + fit.penalty;
    for (Eigen::Index a = 0; a < np; ++a)
        for (Eigen::Index b = 0; b < np; ++b) A(a, b) = full(P[static_cast<std::size_t>(a)], P[static_cast<std::size_t>(b)]);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw NumericError("reml: penalized block not positive definite");
    const double logdet_a = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    value += 0.5 * logdet(lambdas) - 0.5 * logdet_a +
             0.5 * static_cast<double>(logdet.null_dim()) * std::log(2.0 * std::numbers::pi);
    if (!std::isfinite(value)) throw NumericError("reml: non-finite criterion");
    return value;
}

inline RemlEvaluation reml_evaluate(const Design& d, const Eigen::VectorXd& lambdas, const PirlsOptions& opt = {},
                                    const Eigen::VectorXd* start = nullptr) {
    RemlEvaluation ev;
    ev.fit = pirls(d, lambdas, opt, start);
    ev.value = reml_from_fit(d, ev.fit, lambdas, PenaltyLogDet(d));
    return ev;
}

inline double reml_criterion(const Design& d, const Eigen::VectorXd& lambdas, const PirlsOptions& opt = {}) {
    return reml_evaluate(d, lambdas, opt).value;
}

struct NelderMeadResult {
    Eigen::VectorXd x;
    double value = 0.0; // maximized
    int evaluations = 0;
    bool converged = false;
};

// Maximizes f by the Nelder-Mead simplex. Stops when the simplex diameter
// falls below `tol` (infinity-norm) or after max_evals. Trial points are
// projected onto the box [lower, upper], so vertices can settle on a bound.
inline NelderMeadResult nelder_mead_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x0, double step, double tol, int max_evals,
                                        double lower = -std::numeric_limits<double>::infinity(),
                                        double upper = std::numeric_limits<double>::infinity()) {
    const Eigen::Index n = x0.size();
    std::vector<Eigen::VectorXd> pts;
    std::vector<double> val;
    NelderMeadResult out;
    auto eval = [&](Eigen::VectorXd& x) {
        x = x.cwiseMax(lower).cwiseMin(upper);
        ++out.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    };
    Eigen::VectorXd first = x0;
    val.push_back(eval(first));
    pts.push_back(first);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd x = first;
        // step inward when the start sits on the upper bound
        x[i] += x[i] + step > upper ? -step : step;
        pts.push_back(x);
        val.push_back(eval(x));
    }
    std::vector<std::size_t> order(pts.size());
    auto sort_simplex = [&] {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        // best first; ties broken by index for determinism
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] > val[b]; });
        std::vector<Eigen::VectorXd> p2;
        std::vector<double> v2;
        for (auto i : order) {
            p2.push_back(pts[i]);
            v2.push_back(val[i]);
        }
        pts = std::move(p2);
        val = std::move(v2);
    };
    auto diameter = [&] {
        double dmax = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i) dmax = std::max(dmax, (pts[i] - pts[0]).lpNorm<Eigen::Infinity>());
        return dmax;
    };
    sort_simplex();
    while (out.evaluations < max_evals) {
        if (diameter() < tol) {
            out.converged = true;
            break;
        }
        const std::size_t worst = pts.size() - 1;
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < worst; ++i) centroid += pts[i];
        centroid /= static_cast<double>(n);
        Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr > val[0]) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            if (fe > fr) {
                pts[worst] = xe;
                val[worst] = fe;
            } else {
                pts[worst] = xr;
                val[worst] = fr;
            }
        } else if (fr > val[worst - 1]) {
            pts[worst] = xr;
            val[worst] = fr;
        } else {
            const bool outside = fr > val[worst];
            Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                         : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
            const double fc = eval(xc);
            if (fc > (outside ? fr : val[worst])) {
                pts[worst] = xc;
                val[worst] = fc;
            } else {
                for (std::size_t i = 1; i < pts.size(); ++i) {
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
                    val[i] = eval(pts[i]);
                }
            }
        }
        sort_simplex();
    }
    out.x = pts[0];
    out.value = val[0];
    return out;
}

struct SmoothingOptions {
    std::vector<double> grid{1e-3, 1.0, 1e3};
    double simplex_tolerance = 1e-4; // diameter in log(lambda)
    double initial_step = 1.0;
    int max_evaluations = 600;
    double min_log_lambda = std::log(1e-8);
    double max_log_lambda = std::log(1e12);
    PirlsOptions pirls;
};

struct SmoothingResult {
    Eigen::VectorXd lambdas;
    double reml = 0.0;
    int evaluations = 0;
    bool converged = false;
    std::vector<std::pair<Eigen::VectorXd, double>> grid; // starting candidates and their criterion
    PirlsResult fit;                                      // at the selected lambdas
};

inline SmoothingResult optimize_smoothing(const Design& d, const SmoothingOptions& opt = {}) {
    const auto m = static_cast<Eigen::Index>(d.penalties.size());
    const PenaltyLogDet logdet(d);
    SmoothingResult out;
    if (m == 0) {
        out.fit = pirls(d, Eigen::VectorXd(), opt.pirls);
        out.lambdas = Eigen::VectorXd();
        out.reml = reml_from_fit(d, out.fit, out.lambdas, logdet);
        out.evaluations = 1;
        out.converged = true;
        return out;
    }

    Eigen::VectorXd warm = pirls_start(d);
    double best_value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_rho;
    PirlsResult best_fit;
    bool have_best = false;
    auto criterion = [&](const Eigen::VectorXd& rho) -> double {
        ++out.evaluations;
        // the box keeps the search away from numerically flat extremes
        const Eigen::VectorXd clamped = rho.cwiseMax(opt.min_log_lambda).cwiseMin(opt.max_log_lambda);
        const Eigen::VectorXd lambdas = clamped.array().exp();
        try {
            PirlsResult fit = pirls(d, lambdas, opt.pirls, have_best ? &warm : nullptr);
            const double v = reml_from_fit(d, fit, lambdas, logdet);
            if (v > best_value) {
                best_value = v;
                best_rho = clamped;
                warm = fit.beta;
                best_fit = std::move(fit);
                have_best = true;
            }
            return v;
        } catch (const NumericError&) {
            return -std::numeric_limits<double>::infinity();
        }
    };

    // coarse grid over all combinations
    const auto g = static_cast<Eigen::Index>(opt.grid.size());
    Eigen::Index combos = 1;
    for (Eigen::Index k = 0; k < m; ++k) combos *= g;
    Eigen::VectorXd start_rho;
    double start_value = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < combos; ++c) {
        Eigen::VectorXd rho(m);
        Eigen::Index rest = c;
        for (Eigen::Index k = 0; k < m; ++k) {
            rho[k] = std::log(opt.grid[static_cast<std::size_t>(rest % g)]);
            rest /= g;
        }
        const double v = criterion(rho);
        out.grid.emplace_back(rho.array().exp(), v);
        if (v > start_value) {
            start_value = v;
            start_rho = rho;
        }
    }
    if (!std::isfinite(start_value)) throw NumericError("optimize_smoothing: every starting point failed");

    const auto nm = nelder_mead_max(criterion, start_rho, opt.initial_step, opt.simplex_tolerance,
                                    opt.max_evaluations, opt.min_log_lambda, opt.max_log_lambda);
    out.converged = nm.converged;
    out.lambdas = best_rho.array().exp();
    out.reml = best_value;
    out.fit = std::move(best_fit);
    return out;
}

} // namespace pamm
