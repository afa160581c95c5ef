#pragma once

// Model fitting pipeline and prediction.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pamm/design.hpp"
#include "pamm/error.hpp"
#include "pamm/pirls.hpp"
#include "pamm/reml.hpp"

namespace pamm {

struct FitOptions {
    SmoothingOptions smoothing;
    bool check_rank = true;
    double rank_tolerance = 1e-8;
};

struct FitDiagnostics {
    int inner_iterations = 0;  // PIRLS iterations of the final fit
    int outer_evaluations = 0; // REML evaluations
    bool outer_converged = true;
    double score_norm = 0.0;   // max-norm of the penalized score at beta
};

struct FittedModel {
    ResolvedModel model;
    Eigen::VectorXd beta;
    Eigen::VectorXd lambdas;
    Eigen::MatrixXd V; // (X'WX + S)^{-1}
    double edf_total = 0.0;
    std::vector<std::pair<std::string, double>> edf_per_term; // penalized terms
    double loglik = 0.0;
    double reml = 0.0;
    FitDiagnostics diagnostics;

    double term_edf(const std::string& label) const {
        for (const auto& [l, e] : edf_per_term)
            if (l == label) return e;
        throw InputError("no penalized term '" + label + "'");
    }
};

// Fills V, EDF and likelihood summaries from a converged PIRLS fit.
inline void summarize_fit(FittedModel& fm, const Design& d, const PirlsResult& fit) {
    const Eigen::MatrixXd A = fit.XtWX + fit.penalty;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw NumericError("fit: penalized information not positive definite");
    fm.beta = fit.beta;
    fm.V = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    fm.V = 0.5 * (fm.V + fm.V.transpose());
    const Eigen::MatrixXd F = llt.solve(fit.XtWX);
    fm.edf_total = F.trace();
    fm.edf_per_term.clear();
    for (const auto& c : d.columns)
        if (c.penalized) fm.edf_per_term.emplace_back(c.label, F.diagonal().segment(c.begin, c.count).sum());
    fm.loglik = fit.loglik;
    fm.diagnostics.inner_iterations = fit.iterations;
    fm.diagnostics.score_norm = (poisson_score(d, fit.mu) - fit.penalty * fit.beta).lpNorm<Eigen::Infinity>();
}

// Fit with smoothing parameters held fixed.
inline FittedModel fit_fixed(const PedDataset& ped, const ModelSpec& spec, const Eigen::VectorXd& lambdas,
                             const FitOptions& opt = {}) {
    auto built = build_design(ped, spec, opt.check_rank, opt.rank_tolerance);
    FittedModel fm;
    fm.model = std::move(built.model);
    const PirlsResult fit = pirls(built.design, lambdas, opt.smoothing.pirls);
    fm.lambdas = lambdas;
    summarize_fit(fm, built.design, fit);
    // a zero smoothing parameter leaves the criterion undefined
    fm.reml = (lambdas.array() > 0.0).all() ? reml_from_fit(built.design, fit, lambdas, PenaltyLogDet(built.design))
                                            : std::numeric_limits<double>::quiet_NaN();
    fm.diagnostics.outer_evaluations = 0;
    return fm;
}

inline FittedModel fit_design(ResolvedModel model, const Design& design, const FitOptions& opt = {}) {
    FittedModel fm;
    fm.model = std::move(model);
    const auto sel = optimize_smoothing(design, opt.smoothing);
    fm.lambdas = sel.lambdas;
    fm.reml = sel.reml;
    summarize_fit(fm, design, sel.fit);
    fm.diagnostics.outer_evaluations = sel.evaluations;
    fm.diagnostics.outer_converged = sel.converged;
    return fm;
}

inline FittedModel fit(const PedDataset& ped, const ModelSpec& spec, const FitOptions& opt = {}) {
    auto built = build_design(ped, spec, opt.check_rank, opt.rank_tolerance);
    return fit_design(std::move(built.model), built.design, opt);
}

// Hazard of one covariate profile on the model's intervals.
class SurvivalCurve {
public:
    SurvivalCurve(const FittedModel& fm, const SurvivalRecord& profile) : cuts_(fm.model.cuts) {
        const auto J = cuts_.intervals();
        std::vector<PedRow> rows(J);
        for (std::size_t j = 1; j <= J; ++j) {
            auto& r = rows[j - 1];
            r.interval = j;
            r.t_start = cuts_.start(j);
            r.t_end = cuts_.end(j);
            r.t_rep = representative_time(cuts_, j, fm.model.spec.t_convention);
            r.covariates = profile.covariates;
            r.factors = profile.factors;
            r.group = profile.group;
        }
        if (profile.covariates.size() != fm.model.schema.covariates.size() ||
            profile.factors.size() != fm.model.schema.factors.size())
            throw InputError("prediction profile does not match the model schema");
        (void)fm.model.schema.group_index(profile.group);
        const SparseRowMatrix raw = fm.model.raw_matrix(rows);
        const Eigen::MatrixXd T = fm.model.transform();
        const Eigen::VectorXd coef = T.size() ? Eigen::VectorXd(T * fm.beta) : fm.beta;
        const Eigen::VectorXd eta = raw * coef;
        hazard_.resize(J);
        cumulative_.assign(J + 1, 0.0);
        for (std::size_t j = 0; j < J; ++j) {
            hazard_[j] = std::exp(eta[static_cast<Eigen::Index>(j)]);
            cumulative_[j + 1] = cumulative_[j] + hazard_[j] * (cuts_.end(j + 1) - cuts_.start(j + 1));
        }
    }

    // t in (0, kappa_J]
    double hazard(double t) const {
        if (!(t > 0.0) || t > cuts_.horizon()) throw InputError("hazard: t outside (0, kappa_J]");
        return hazard_[cuts_.interval_of(t) - 1];
    }

    // t in [0, kappa_J]
    double cumulative_hazard(double t) const {
        if (t < 0.0 || t > cuts_.horizon()) throw InputError("cumulative hazard: t outside [0, kappa_J]");
        if (t == 0.0) return 0.0;
        const auto j = cuts_.interval_of(t);
        return cumulative_[j - 1] + hazard_[j - 1] * (t - cuts_.start(j));
    }

    double survival(double t) const { return std::exp(-cumulative_hazard(t)); }

    const std::vector<double>& interval_hazards() const { return hazard_; }

private:
    CutPoints cuts_;
    std::vector<double> hazard_;
    std::vector<double> cumulative_;
};

inline double predict_hazard(const FittedModel& fm, const SurvivalRecord& profile, double t) {
    return SurvivalCurve(fm, profile).hazard(t);
}
inline double cumulative_hazard(const FittedModel& fm, const SurvivalRecord& profile, double t) {
    return SurvivalCurve(fm, profile).cumulative_hazard(t);
}
inline double survival_prob(const FittedModel& fm, const SurvivalRecord& profile, double t) {
    return SurvivalCurve(fm, profile).survival(t);
}

struct CoefficientRow {
    std::string term;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 0.0;
};

// Two-sided normal p-value.
inline double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Wald z-tests for the intercept, linear and factor coefficients.
inline std::vector<CoefficientRow> coefficient_table(const FittedModel& fm) {
    std::vector<CoefficientRow> out;
    const auto names = fm.model.coefficient_names();
    for (const auto& rt : fm.model.terms) {
        const auto k = rt.term.kind;
        if (k != TermKind::Intercept && k != TermKind::Linear && k != TermKind::Factor) continue;
        for (Eigen::Index c = rt.begin; c < rt.begin + rt.count; ++c) {
            CoefficientRow row;
            row.term = names[static_cast<std::size_t>(c)];
            row.estimate = fm.beta[c];
            row.se = std::sqrt(fm.V(c, c));
            row.z = row.estimate / row.se;
            row.p = wald_p_value(row.z);
            out.push_back(row);
        }
    }
    return out;
}

struct CurvePoint {
    std::string group;
    double t = 0.0;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

// Evaluates a time-varying term on an equidistant grid with pointwise
// +-2 SE bands. For Fre terms one curve per group; Smooth and
// VaryingCoefficient terms produce a single curve labelled "all".
inline std::vector<CurvePoint> term_curves(const FittedModel& fm, const std::string& label, int grid = 200) {
    const ResolvedTerm* rt = nullptr;
    for (const auto& t : fm.model.terms)
        if (t.label == label) rt = &t;
    if (!rt) throw InputError("no term '" + label + "'");
    const auto kind = rt->term.kind;
    if (kind != TermKind::Fre && kind != TermKind::Smooth && kind != TermKind::VaryingCoefficient)
        throw InputError("term '" + label + "' is not a function of time");
    const int dim = rt->knots.dimension();
    const std::vector<std::string> groups = kind == TermKind::Fre ? rt->levels : std::vector<std::string>{"all"};
    std::vector<CurvePoint> out;
    std::vector<double> vals(static_cast<std::size_t>(rt->knots.degree() + 1));
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const Eigen::Index base = rt->begin + (kind == TermKind::Fre ? static_cast<Eigen::Index>(g) * dim : 0);
        for (int i = 0; i < grid; ++i) {
            const double t = rt->knots.lower() +
                             (rt->knots.upper() - rt->knots.lower()) * static_cast<double>(i) / static_cast<double>(grid - 1);
            Eigen::VectorXd b = Eigen::VectorXd::Zero(fm.beta.size());
            const int first = bspline_nonzero(t, rt->knots, vals.data());
            for (int k = 0; k <= rt->knots.degree(); ++k) {
                const int col = first + k;
                if (col < rt->count) b[base + col] = vals[static_cast<std::size_t>(k)];
            }
            if (rt->center.size()) b.segment(rt->begin, rt->count) -= rt->center;
            const double est = b.dot(fm.beta);
            const double se = std::sqrt(std::max(0.0, b.dot(fm.V * b)));
            out.push_back({groups[g], t, est, est - 2.0 * se, est + 2.0 * se});
        }
    }
    return out;
}

} // namespace pamm
