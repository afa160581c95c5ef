#pragma once

// Declarative description of a PAMM predictor and its JSON form.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "pamm/basis.hpp"
#include "pamm/error.hpp"
#include "pamm/ped.hpp"

namespace pamm {

enum class KnotPlacement { Quantile, Equidistant };

struct SplineOptions {
    int degree = 3;
    int interior_knots = 9;
    KnotPlacement placement = KnotPlacement::Quantile;
    int diff_order = 1;
};

// One additive predictor component. `covariate` is the linear/factor
// variable, or the `by` variable of Fre, RandomEffect and VaryingCoefficient
// terms (empty means no multiplier). The name "group" refers to the grouping
// variable.
struct Term {
    TermKind kind = TermKind::Intercept;
    std::string covariate;
    std::string reference; // factor reference level; empty = first level
    SplineOptions spline;
    bool centered = true; // Smooth only
    std::string label;    // empty = generated

    static Term intercept() { return {}; }
    static Term linear(std::string x) {
        Term t;
        t.kind = TermKind::Linear;
        t.covariate = std::move(x);
        return t;
    }
    static Term factor(std::string f, std::string reference = {}) {
        Term t;
        t.kind = TermKind::Factor;
        t.covariate = std::move(f);
        t.reference = std::move(reference);
        return t;
    }
    // Log-baseline f(t).
    static Term smooth(SplineOptions opts = {}, bool centered = true) {
        Term t;
        t.kind = TermKind::Smooth;
        t.spline = opts;
        t.centered = centered;
        return t;
    }
    // f_g(t) * by: one penalized time curve per group.
    static Term fre(std::string by, SplineOptions opts = {}) {
        Term t;
        t.kind = TermKind::Fre;
        t.covariate = std::move(by);
        t.spline = opts;
        return t;
    }
    // gamma_g * by: i.i.d. group effects with a ridge penalty.
    static Term random_effect(std::string by = {}) {
        Term t;
        t.kind = TermKind::RandomEffect;
        t.covariate = std::move(by);
        return t;
    }
    // f(t) * by: one penalized time curve shared by all groups.
    static Term varying(std::string by, SplineOptions opts = {}) {
        Term t;
        t.kind = TermKind::VaryingCoefficient;
        t.covariate = std::move(by);
        t.spline = opts;
        return t;
    }

    std::string display_label() const {
        if (!label.empty()) return label;
        const std::string by = covariate.empty() ? "" : ":" + covariate;
        switch (kind) {
        case TermKind::Intercept: return "(Intercept)";
        case TermKind::Linear: return covariate;
        case TermKind::Factor: return covariate;
        case TermKind::Smooth: return "s(t)";
        case TermKind::Fre: return "fre(group,t)" + by;
        case TermKind::RandomEffect: return "re(group)" + by;
        case TermKind::VaryingCoefficient: return "s(t)" + by;
        }
        return "?";
    }
};

struct ModelSpec {
    std::vector<Term> terms;
    TimeConvention t_convention = TimeConvention::End;

    // Structural rules plus name resolution against a schema.
    void validate(const Schema& schema) const {
        int intercepts = 0, baselines = 0;
        std::vector<std::string> labels;
        for (const auto& t : terms) {
            if (t.kind == TermKind::Intercept) ++intercepts;
            if (t.kind == TermKind::Smooth) ++baselines;
            const auto lab = t.display_label();
            for (const auto& l : labels)
                if (l == lab) throw InputError("duplicate term label '" + lab + "'");
            labels.push_back(lab);

            const bool needs_numeric = t.kind == TermKind::Linear ||
                                       ((t.kind == TermKind::Fre || t.kind == TermKind::RandomEffect ||
                                         t.kind == TermKind::VaryingCoefficient) &&
                                        !t.covariate.empty());
            if (t.kind == TermKind::VaryingCoefficient && t.covariate.empty())
                throw InputError("varying-coefficient term needs a 'by' covariate");
            if (needs_numeric && schema.covariate_index(t.covariate) == Schema::npos)
                throw InputError("unknown covariate '" + t.covariate + "'");
            if (t.kind == TermKind::Factor) {
                const bool is_group = t.covariate == "group";
                if (!is_group && schema.factor_index(t.covariate) == Schema::npos)
                    throw InputError("unknown factor '" + t.covariate + "'");
                const auto& levels =
                    is_group ? schema.group_levels : schema.factors[schema.factor_index(t.covariate)].levels;
                if (levels.size() < 2) throw InputError("factor '" + t.covariate + "' needs two or more levels");
                if (!t.reference.empty() &&
                    std::find(levels.begin(), levels.end(), t.reference) == levels.end())
                    throw InputError("unknown reference level '" + t.reference + "'");
            }
            if (t.kind == TermKind::Smooth || t.kind == TermKind::Fre || t.kind == TermKind::VaryingCoefficient) {
                if (t.spline.degree < 0 || t.spline.interior_knots < 0)
                    throw InputError("invalid spline options");
                const int dim = t.spline.interior_knots + t.spline.degree + 1;
                if (t.spline.diff_order < 1 || dim <= t.spline.diff_order)
                    throw InputError("difference order must be >= 1 and below the basis dimension");
            }
            if ((t.kind == TermKind::Fre || t.kind == TermKind::RandomEffect) && schema.group_levels.empty())
                throw InputError("group term needs group levels");
        }
        if (intercepts != 1) throw InputError("model needs exactly one intercept");
        if (baselines > 1) throw InputError("model allows at most one smooth baseline");
    }
};

inline std::string to_string(TermKind k) {
    switch (k) {
    case TermKind::Intercept: return "intercept";
    case TermKind::Linear: return "linear";
    case TermKind::Factor: return "factor";
    case TermKind::Smooth: return "smooth";
    case TermKind::Fre: return "fre";
    case TermKind::RandomEffect: return "random";
    case TermKind::VaryingCoefficient: return "varying";
    }
    return "?";
}

inline TermKind parse_term_kind(const std::string& s) {
    for (auto k : {TermKind::Intercept, TermKind::Linear, TermKind::Factor, TermKind::Smooth, TermKind::Fre,
                   TermKind::RandomEffect, TermKind::VaryingCoefficient})
        if (to_string(k) == s) return k;
    throw InputError("unknown term type '" + s + "'");
}

inline nlohmann::json to_json(const Term& t) {
    nlohmann::json j{{"type", to_string(t.kind)}};
    if (!t.covariate.empty()) j[t.kind == TermKind::Linear || t.kind == TermKind::Factor ? "covariate" : "by"] = t.covariate;
    if (!t.reference.empty()) j["reference"] = t.reference;
    if (!t.label.empty()) j["label"] = t.label;
    if (t.kind == TermKind::Smooth || t.kind == TermKind::Fre || t.kind == TermKind::VaryingCoefficient) {
        j["degree"] = t.spline.degree;
        j["knots"] = t.spline.interior_knots;
        j["placement"] = t.spline.placement == KnotPlacement::Quantile ? "quantile" : "equidistant";
        j["diff_order"] = t.spline.diff_order;
    }
    if (t.kind == TermKind::Smooth) j["centered"] = t.centered;
    return j;
}

inline Term term_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("type")) throw InputError("model term must be an object with 'type'");
    Term t;
    t.kind = parse_term_kind(j.at("type").get<std::string>());
    if (j.contains("covariate")) t.covariate = j.at("covariate").get<std::string>();
    if (j.contains("by")) t.covariate = j.at("by").get<std::string>();
    t.reference = j.value("reference", std::string{});
    t.label = j.value("label", std::string{});
    t.spline.degree = j.value("degree", 3);
    t.spline.interior_knots = j.value("knots", 9);
    const auto placement = j.value("placement", std::string{"quantile"});
    if (placement == "quantile") t.spline.placement = KnotPlacement::Quantile;
    else if (placement == "equidistant") t.spline.placement = KnotPlacement::Equidistant;
    else throw InputError("unknown knot placement '" + placement + "'");
    t.spline.diff_order = j.value("diff_order", 1);
    t.centered = j.value("centered", true);
    if ((t.kind == TermKind::Linear || t.kind == TermKind::Factor) && t.covariate.empty())
        throw InputError("linear/factor term needs 'covariate'");
    return t;
}

inline nlohmann::json to_json(const ModelSpec& spec) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : spec.terms) terms.push_back(to_json(t));
    return {{"terms", terms}, {"t_convention", to_string(spec.t_convention)}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    try {
        for (const auto& t : j.at("terms")) spec.terms.push_back(term_from_json(t));
        spec.t_convention = parse_time_convention(j.value("t_convention", std::string{"end"}));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("model spec: ") + e.what());
    }
    return spec;
}

} // namespace pamm
