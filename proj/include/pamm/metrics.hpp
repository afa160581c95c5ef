#pragma once

// Fit measures: Poisson log-likelihood on PED, EDF-based AIC, Kaplan-Meier,
// and the IPCW Brier score with its time integral.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pamm/error.hpp"
#include "pamm/fit.hpp"
#include "pamm/ped.hpp"

namespace pamm {

// Right-continuous step function.
struct StepFunction {
    std::vector<double> times; // strictly increasing jump times
    std::vector<double> values; // value at and after each jump
    double initial = 1.0;

    double operator()(double t) const {
        auto it = std::upper_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return initial;
        return values[static_cast<std::size_t>(it - times.begin()) - 1];
    }

    double left_limit(double t) const {
        auto it = std::lower_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return initial;
        return values[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

// Product-limit estimator; ties are aggregated per distinct time.
inline StepFunction kaplan_meier(const std::vector<double>& times, const std::vector<int>& events) {
    if (times.empty()) throw InputError("kaplan_meier: empty input");
    if (times.size() != events.size()) throw InputError("kaplan_meier: length mismatch");
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    for (double t : times)
        if (!(t > 0.0)) throw InputError("kaplan_meier: times must be positive");
    StepFunction s;
    double surv = 1.0;
    std::size_t at_risk = times.size();
    for (std::size_t i = 0; i < order.size();) {
        const double t = times[order[i]];
        std::size_t d = 0, m = 0;
        while (i + m < order.size() && times[order[i + m]] == t) {
            d += events[order[i + m]] ? 1 : 0;
            ++m;
        }
        if (d > 0) {
            surv *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
            s.times.push_back(t);
            s.values.push_back(surv);
        }
        at_risk -= m;
        i += m;
    }
    return s;
}

// Kaplan-Meier of the censoring distribution (event indicators flipped).
inline StepFunction censoring_survival(const std::vector<SurvivalRecord>& data) {
    std::vector<double> t;
    std::vector<int> c;
    for (const auto& r : data) {
        t.push_back(r.time);
        c.push_back(r.event ? 0 : 1);
    }
    return kaplan_meier(t, c);
}

// Poisson log-likelihood sum [delta log mu - mu], mu = exp(eta + offset).
inline double model_loglik(const FittedModel& fm, const PedDataset& ped) {
    if (!(ped.cuts == fm.model.cuts)) throw InputError("model_loglik: data cut points differ from the model's");
    if (ped.convention != fm.model.spec.t_convention) throw InputError("model_loglik: t convention mismatch");
    const Design d = fm.model.design(ped);
    return poisson_loglik(d, fm.beta);
}

inline double aic(double loglik, double edf) { return -2.0 * loglik + 2.0 * edf; }
inline double aic(const FittedModel& fm) { return aic(fm.loglik, fm.edf_total); }

struct BrierResult {
    double value = 0.0;
    std::size_t dropped = 0; // subjects skipped for a zero censoring weight
};

// Brier score at t from per-subject predicted survival at t.
inline BrierResult brier_score(const std::vector<SurvivalRecord>& data, const std::vector<double>& predicted,
                               double t, const StepFunction& censoring) {
    if (data.size() != predicted.size()) throw InputError("brier_score: length mismatch");
    if (data.empty()) throw InputError("brier_score: empty data");
    BrierResult out;
    const double g_t = censoring(t);
    double sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& r = data[i];
        const double s = predicted[i];
        if (r.time <= t && r.event) {
            const double g = censoring.left_limit(r.time);
            if (g > 0.0) sum += s * s / g;
            else ++out.dropped;
        } else if (r.time > t) {
            if (g_t > 0.0) sum += (1.0 - s) * (1.0 - s) / g_t;
            else ++out.dropped;
        }
    }
    out.value = sum / static_cast<double>(data.size());
    return out;
}

inline std::vector<SurvivalCurve> survival_curves(const FittedModel& fm, const std::vector<SurvivalRecord>& data) {
    std::vector<SurvivalCurve> curves;
    curves.reserve(data.size());
    for (const auto& r : data) curves.emplace_back(fm, r);
    return curves;
}

inline BrierResult brier_score(const FittedModel& fm, const std::vector<SurvivalRecord>& data, double t,
                               const StepFunction& censoring) {
    std::vector<double> pred;
    for (const auto& r : data) pred.push_back(SurvivalCurve(fm, r).survival(t));
    return brier_score(data, pred, t, censoring);
}

struct IbsResult {
    double ibs = 0.0;
    double tau = 0.0;
    std::vector<double> times;
    std::vector<double> brier;
    std::size_t dropped = 0; // summed over grid points
};

inline double largest_event_time(const std::vector<SurvivalRecord>& data) {
    double tau = 0.0;
    for (const auto& r : data)
        if (r.event) tau = std::max(tau, r.time);
    return tau;
}

// Trapezoid integral of BS(t) over an equidistant grid on [0, tau], divided
// by tau. `predict(i, t)` returns subject i's predicted survival at t.
template <class Predict>
IbsResult integrated_brier(const std::vector<SurvivalRecord>& data, double tau, int grid_size, Predict&& predict) {
    if (grid_size < 2) throw InputError("ibs: grid needs at least two points");
    if (!(tau > 0.0)) throw InputError("ibs: tau must be positive");
    double max_time = 0.0;
    for (const auto& r : data) max_time = std::max(max_time, r.time);
    if (tau > max_time) throw InputError("ibs: tau beyond follow-up");
    const StepFunction censoring = censoring_survival(data);
    IbsResult out;
    out.tau = tau;
    std::vector<double> pred(data.size());
    for (int k = 0; k < grid_size; ++k) {
        // the last node is tau itself, not a rounded multiple of it
        const double t = k == grid_size - 1 ? tau : tau * static_cast<double>(k) / static_cast<double>(grid_size - 1);
        for (std::size_t i = 0; i < data.size(); ++i) pred[i] = predict(i, t);
        const auto bs = brier_score(data, pred, t, censoring);
        out.times.push_back(t);
        out.brier.push_back(bs.value);
        out.dropped += bs.dropped;
    }
    const double h = tau / static_cast<double>(grid_size - 1);
    double integral = 0.0;
    for (std::size_t k = 1; k < out.brier.size(); ++k) integral += 0.5 * h * (out.brier[k - 1] + out.brier[k]);
    out.ibs = integral / tau;
    return out;
}

inline IbsResult ibs(const FittedModel& fm, const std::vector<SurvivalRecord>& data, double tau = 0.0,
                     int grid_size = 200) {
    if (tau == 0.0) tau = largest_event_time(data);
    const auto curves = survival_curves(fm, data);
    return integrated_brier(data, tau, grid_size, [&](std::size_t i, double t) { return curves[i].survival(t); });
}

struct FitReport {
    std::string model;
    std::string dataset;
    double loglik = 0.0;
    double edf = 0.0;
    double aic = 0.0;
    double ibs = 0.0;
    std::vector<double> brier_times;
    std::vector<double> brier;
};

struct EvaluateOptions {
    double tau = 0.0; // 0 = largest event time
    int grid_size = 200;
};

// Log-likelihood, AIC and IBS of a fitted model on survival data.
inline FitReport evaluate(const FittedModel& fm, const SurvivalData& data, const EvaluateOptions& opt = {}) {
    if (!(data.schema == fm.model.schema)) throw InputError("evaluate: data schema differs from the model's");
    FitReport rep;
    const PedDataset ped = as_ped(data, fm.model.cuts, fm.model.spec.t_convention);
    rep.loglik = model_loglik(fm, ped);
    rep.edf = fm.edf_total;
    rep.aic = aic(rep.loglik, rep.edf);
    const auto res = ibs(fm, data.records, opt.tau, opt.grid_size);
    rep.ibs = res.ibs;
    rep.brier_times = res.times;
    rep.brier = res.brier;
    return rep;
}

inline void write_fit_report_csv(std::ostream& out, const std::vector<FitReport>& reports) {
    csv::write_row(out, {"model", "dataset", "loglik", "edf", "aic", "ibs"});
    for (const auto& r : reports)
        csv::write_row(out, {r.model, r.dataset, csv::format_real(r.loglik), csv::format_real(r.edf),
                             csv::format_real(r.aic), csv::format_real(r.ibs)});
}

} // namespace pamm
