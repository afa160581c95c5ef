#pragma once

// FittedModel <-> JSON. The document carries everything prediction needs:
// spec, schema, cut points, knots, centering, coefficients and V.

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pamm/fit.hpp"
#include "pamm/model_spec.hpp"

namespace pamm {

namespace detail {

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace detail

inline nlohmann::json schema_to_json(const Schema& s) {
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : s.factors) factors.push_back({{"name", f.name}, {"levels", f.levels}});
    return {{"covariates", s.covariates}, {"factors", factors}, {"group_levels", s.group_levels}};
}

inline Schema schema_from_json(const nlohmann::json& j) {
    Schema s;
    s.covariates = j.at("covariates").get<std::vector<std::string>>();
    for (const auto& f : j.at("factors"))
        s.factors.push_back({f.at("name").get<std::string>(), f.at("levels").get<std::vector<std::string>>()});
    s.group_levels = j.at("group_levels").get<std::vector<std::string>>();
    return s;
}

inline nlohmann::json to_json(const FittedModel& fm) {
    using nlohmann::json;
    json terms = json::array();
    for (const auto& rt : fm.model.terms) {
        json t{{"label", rt.label}, {"begin", rt.begin}, {"count", rt.count}};
        if (!rt.levels.empty()) t["levels"] = rt.levels;
        if (rt.term.kind == TermKind::Factor) t["reference"] = rt.reference;
        if (rt.term.kind == TermKind::Smooth || rt.term.kind == TermKind::Fre ||
            rt.term.kind == TermKind::VaryingCoefficient) {
            t["knots"] = {{"degree", rt.knots.degree()},
                          {"interior", rt.knots.interior()},
                          {"lower", rt.knots.lower()},
                          {"upper", rt.knots.upper()}};
        }
        if (rt.center.size()) t["center"] = detail::vector_json(rt.center);
        terms.push_back(t);
    }
    json V = json::array();
    for (Eigen::Index r = 0; r < fm.V.rows(); ++r) V.push_back(detail::vector_json(fm.V.row(r).transpose()));
    json edf = json::object();
    for (const auto& [l, e] : fm.edf_per_term) edf[l] = e;
    return {{"format", "pamm-model/1"},
            {"spec", to_json(fm.model.spec)},
            {"schema", schema_to_json(fm.model.schema)},
            {"cuts", fm.model.cuts.kappas()},
            {"terms", terms},
            {"coefficient_names", fm.model.coefficient_names()},
            {"beta", detail::vector_json(fm.beta)},
            {"lambdas", detail::vector_json(fm.lambdas)},
            {"V", V},
            {"edf_total", fm.edf_total},
            {"edf_per_term", edf},
            {"loglik", fm.loglik},
            {"reml", std::isfinite(fm.reml) ? nlohmann::json(fm.reml) : nlohmann::json()},
            {"diagnostics",
             {{"inner_iterations", fm.diagnostics.inner_iterations},
              {"outer_evaluations", fm.diagnostics.outer_evaluations},
              {"outer_converged", fm.diagnostics.outer_converged},
              {"score_norm", fm.diagnostics.score_norm}}}};
}

inline FittedModel fitted_model_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "pamm-model/1") throw InputError("not a pamm model document");
        FittedModel fm;
        auto& m = fm.model;
        m.spec = model_spec_from_json(j.at("spec"));
        m.schema = schema_from_json(j.at("schema"));
        m.cuts = CutPoints(j.at("cuts").get<std::vector<double>>());
        m.spec.validate(m.schema);
        const auto& terms = j.at("terms");
        if (terms.size() != m.spec.terms.size()) throw InputError("model document: term count mismatch");
        for (std::size_t k = 0; k < terms.size(); ++k) {
            const auto& tj = terms[k];
            ResolvedTerm rt;
            rt.term = m.spec.terms[k];
            rt.label = tj.at("label").get<std::string>();
            rt.begin = tj.at("begin").get<Eigen::Index>();
            rt.count = tj.at("count").get<Eigen::Index>();
            if (!rt.term.covariate.empty() && rt.term.kind != TermKind::Factor)
                rt.covariate = m.schema.covariate_index(rt.term.covariate);
            if (rt.term.kind == TermKind::Intercept) m.intercept_column = rt.begin;
            if (tj.contains("levels")) rt.levels = tj.at("levels").get<std::vector<std::string>>();
            if (rt.term.kind == TermKind::Factor) {
                rt.on_group = rt.term.covariate == "group";
                if (!rt.on_group) rt.factor = m.schema.factor_index(rt.term.covariate);
                rt.reference = tj.at("reference").get<std::size_t>();
            }
            if (tj.contains("knots")) {
                const auto& kj = tj.at("knots");
                rt.knots = KnotVector(kj.at("degree").get<int>(), kj.at("interior").get<std::vector<double>>(),
                                      kj.at("lower").get<double>(), kj.at("upper").get<double>());
            }
            if (tj.contains("center")) rt.center = detail::vector_from(tj.at("center"));
            attach_penalties(rt);
            m.p = std::max(m.p, rt.begin + rt.count);
            m.terms.push_back(std::move(rt));
        }
        fm.beta = detail::vector_from(j.at("beta"));
        fm.lambdas = detail::vector_from(j.at("lambdas"));
        const auto& V = j.at("V");
        fm.V.resize(static_cast<Eigen::Index>(V.size()), static_cast<Eigen::Index>(V.size()));
        for (std::size_t r = 0; r < V.size(); ++r) fm.V.row(static_cast<Eigen::Index>(r)) = detail::vector_from(V[r]).transpose();
        if (fm.beta.size() != m.p || fm.V.rows() != m.p) throw InputError("model document: dimension mismatch");
        fm.edf_total = j.at("edf_total").get<double>();
        for (const auto& rt : m.terms)
            if (j.at("edf_per_term").contains(rt.label))
                fm.edf_per_term.emplace_back(rt.label, j.at("edf_per_term").at(rt.label).get<double>());
        fm.loglik = j.at("loglik").get<double>();
        fm.reml = j.at("reml").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("reml").get<double>();
        const auto& dj = j.at("diagnostics");
        fm.diagnostics.inner_iterations = dj.at("inner_iterations").get<int>();
        fm.diagnostics.outer_evaluations = dj.at("outer_evaluations").get<int>();
        fm.diagnostics.outer_converged = dj.at("outer_converged").get<bool>();
        fm.diagnostics.score_norm = dj.at("score_norm").get<double>();
        return fm;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model document: ") + e.what());
    }
}

} // namespace pamm
