#pragma once

// Penalized IRLS for the log-link Poisson model with offset,
//   maximize  l(beta) - 1/2 beta' S_lambda beta,
//   l(beta) = sum_r [ delta_r (eta_r + o_r) - exp(eta_r + o_r) ],
// using full Newton steps (canonical link: observed = expected information)
// with step halving so the penalized log-likelihood never decreases.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "pamm/design.hpp"
#include "pamm/error.hpp"

namespace pamm {

struct PirlsOptions {
    int max_iterations = 200;
    int max_halvings = 50;
    double relative_tolerance = 1e-9; // on the penalized deviance
    double gradient_tolerance = 1e-7; // max-norm of the penalized score
};

struct PirlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd mu;      // fitted means = working weights
    Eigen::MatrixXd XtWX;    // at beta
    Eigen::MatrixXd penalty; // S_lambda
    double loglik = 0.0;
    double penalty_value = 0.0; // beta' S beta
    int iterations = 0;
    bool converged = false;
    std::vector<double> penalized_deviance; // per accepted iterate, starting value first

    double penalized_loglik() const { return loglik - 0.5 * penalty_value; }
};

namespace detail {

inline Eigen::VectorXd fitted_means(const Design& d, const Eigen::VectorXd& beta, Eigen::VectorXd* eta_out = nullptr) {
    Eigen::VectorXd eta = d.linear_predictor(beta) + d.offset;
    Eigen::VectorXd mu = eta.array().min(700.0).exp().matrix();
    if (eta_out) *eta_out = std::move(eta);
    return mu;
}

inline double poisson_loglik(const Eigen::VectorXd& response, const Eigen::VectorXd& eta, const Eigen::VectorXd& mu) {
    double ll = 0.0;
    for (Eigen::Index r = 0; r < eta.size(); ++r) ll += response[r] * eta[r] - mu[r];
    return ll;
}

// Solves A step = grad after symmetric diagonal scaling, with two rounds of
// iterative refinement; large smoothing parameters make A badly conditioned.
inline Eigen::VectorXd newton_step(const Eigen::MatrixXd& A, const Eigen::VectorXd& grad) {
    const Eigen::VectorXd dinv = A.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd As = dinv.asDiagonal() * A * dinv.asDiagonal();
    auto refine = [&](const auto& solver) {
        Eigen::VectorXd y = solver.solve(dinv.cwiseProduct(grad));
        for (int k = 0; k < 2; ++k) y += solver.solve(dinv.cwiseProduct(grad) - As * y);
        return Eigen::VectorXd(dinv.cwiseProduct(y));
    };
    Eigen::LLT<Eigen::MatrixXd> llt(As);
    if (llt.info() == Eigen::Success) return refine(llt);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(As);
    if (ldlt.info() != Eigen::Success) throw NumericError("pirls: singular penalized information");
    return refine(ldlt);
}

} // namespace detail

// X' diag(w) X, accumulated over the sparse raw rows or the product form.
inline Eigen::MatrixXd weighted_crossprod(const Design& d, const Eigen::VectorXd& w) {
    Eigen::MatrixXd H;
    if (!d.product.empty()) {
        H = d.product.crossprod(w, d.cols());
    } else {
        const Eigen::Index p = d.cols();
        H = Eigen::MatrixXd::Zero(p, p);
        const auto* outer = d.raw.outerIndexPtr();
        const auto* inner = d.raw.innerIndexPtr();
        const auto* vals = d.raw.valuePtr();
        double* h = H.data();
        for (Eigen::Index r = 0; r < d.raw.rows(); ++r) {
            const double wr = w[r];
            const auto b = outer[r], e = outer[r + 1];
            for (auto a = b; a < e; ++a) {
                const double wa = wr * vals[a];
                const Eigen::Index ca = inner[a];
                // column-major lower triangle: H(ca, cb) with cb <= ca
                for (auto c = b; c <= a; ++c) h[inner[c] * p + ca] += wa * vals[c];
            }
        }
        H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
    }
    if (d.has_transform()) return d.transform.transpose() * H * d.transform;
    return H;
}

// Score and X'WX at the same fitted means, fused when the product form exists.
inline void score_and_information(const Design& d, const Eigen::VectorXd& mu, Eigen::VectorXd& score,
                                  Eigen::MatrixXd& H) {
    if (d.product.empty()) {
        score = d.transpose_times(d.response - mu);
        H = weighted_crossprod(d, mu);
        return;
    }
    const Eigen::VectorXd resid = d.response - mu;
    Eigen::VectorXd g;
    d.product.crossprod(mu, &resid, d.cols(), H, &g);
    if (d.has_transform()) {
        score = d.transform.transpose() * g;
        H = d.transform.transpose() * H * d.transform;
    } else {
        score = std::move(g);
    }
}

inline Eigen::VectorXd poisson_score(const Design& d, const Eigen::VectorXd& mu) {
    return d.transpose_times(d.response - mu);
}

inline double poisson_loglik(const Design& d, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta;
    const Eigen::VectorXd mu = detail::fitted_means(d, beta, &eta);
    return detail::poisson_loglik(d.response, eta, mu);
}

// Standard start: zero except intercept = log((sum delta + 0.5) / sum exposure).
inline Eigen::VectorXd pirls_start(const Design& d) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.cols());
    for (const auto& c : d.columns) {
        if (c.kind != TermKind::Intercept) continue;
        const double events = d.response.sum();
        const double exposure = d.offset.array().exp().sum();
        beta[c.begin] = std::log((events + 0.5) / exposure);
    }
    return beta;
}

inline PirlsResult pirls(const Design& d, const Eigen::VectorXd& lambdas, const PirlsOptions& opt = {},
                         const Eigen::VectorXd* start = nullptr) {
    for (Eigen::Index k = 0; k < lambdas.size(); ++k)
        if (!(lambdas[k] >= 0.0) || !std::isfinite(lambdas[k]))
            throw InputError("smoothing parameters must be finite and nonnegative");
    PirlsResult res;
    res.penalty = d.penalty_sum(lambdas);
    const Eigen::MatrixXd& S = res.penalty;
    Eigen::VectorXd beta = start ? *start : pirls_start(d);
    if (beta.size() != d.cols()) throw InputError("pirls: start vector has wrong length");

    auto evaluate = [&](const Eigen::VectorXd& b, Eigen::VectorXd& mu, double& ll, double& pen) {
        Eigen::VectorXd eta;
        mu = detail::fitted_means(d, b, &eta);
        ll = detail::poisson_loglik(d.response, eta, mu);
        pen = d.penalty_value(lambdas, b);
        return ll - 0.5 * pen;
    };

    Eigen::VectorXd mu;
    double ll = 0.0, pen = 0.0;
    double obj = evaluate(beta, mu, ll, pen);
    if (!std::isfinite(obj)) throw NumericError("pirls: non-finite starting objective");
    res.penalized_deviance.push_back(-2.0 * obj);

    Eigen::MatrixXd H;
    for (int it = 0; it < opt.max_iterations; ++it) {
        res.iterations = it + 1;
        Eigen::VectorXd grad;
        score_and_information(d, mu, grad, H);
        grad -= d.penalty_gradient(lambdas, beta);
        if (grad.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
            res.converged = true;
            break;
        }
        const Eigen::VectorXd step = detail::newton_step(H + S, grad);
        if (!step.allFinite()) throw NumericError("pirls: non-finite Newton step");

        double scale = 1.0;
        Eigen::VectorXd cand, cand_mu;
        double cand_ll = 0.0, cand_pen = 0.0, cand_obj = 0.0;
        int halvings = 0;
        const double slack = 1e-12 * (std::abs(obj) + 1.0);
        for (;;) {
            cand = beta + scale * step;
            cand_obj = evaluate(cand, cand_mu, cand_ll, cand_pen);
            if (std::isfinite(cand_obj) && cand_obj >= obj - slack) break;
            if (++halvings > opt.max_halvings) throw NumericError("pirls: step halving exhausted");
            scale *= 0.5;
        }
        const double change = std::abs(cand_obj - obj) / (std::abs(cand_obj) + 0.1);
        beta = std::move(cand);
        mu = std::move(cand_mu);
        ll = cand_ll;
        pen = cand_pen;
        obj = cand_obj;
        res.penalized_deviance.push_back(-2.0 * obj);
        if (change < opt.relative_tolerance) {
            H = weighted_crossprod(d, mu);
            res.converged = true;
            break;
        }
    }
    if (!res.converged)
        throw NumericError("pirls: no convergence within " + std::to_string(opt.max_iterations) + " iterations");
    if (Eigen::LLT<Eigen::MatrixXd>(H + S).info() != Eigen::Success)
        throw NumericError("pirls: penalized information not positive definite at convergence");
    res.beta = std::move(beta);
    res.mu = std::move(mu);
    res.XtWX = std::move(H);
    res.loglik = ll;
    res.penalty_value = pen;
    return res;
}

} // namespace pamm
