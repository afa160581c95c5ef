#pragma once

// Simulation of survival data with heterogeneously time-varying effects and
// the four-scenario comparison harness.
//
// Hazard: lambda(t | x1, x2, g) = exp(3t + 3 x1 + f(x2, t, g)), g in {1..4}.
//   (I)   f = f_g(t) x2, f_g(t) = a_g + b_g t + c_g sin(pi t / t_max)
//   (II)  f = 1/2 f_III + 1/2 f_IV
//   (III) f = a_g x2
//   (IV)  f = f_1(t) x2
// Survival times are drawn by inverting the cumulative hazard at -log(U).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pamm/error.hpp"
#include "pamm/fit.hpp"
#include "pamm/metrics.hpp"
#include "pamm/ped.hpp"

namespace pamm::sim {

enum class Scenario { I = 1, II = 2, III = 3, IV = 4 };

inline std::string to_string(Scenario s) {
    switch (s) {
    case Scenario::I: return "I";
    case Scenario::II: return "II";
    case Scenario::III: return "III";
    case Scenario::IV: return "IV";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s) {
    for (auto sc : {Scenario::I, Scenario::II, Scenario::III, Scenario::IV})
        if (to_string(sc) == s) return sc;
    throw InputError("unknown scenario '" + s + "'");
}

inline constexpr int kGroups = 4;
inline constexpr double kTimeMax = 0.8;

// Scenario I curve coefficients per group.
inline constexpr std::array<double, kGroups> kLevel = {0.0, 1.0, -1.0, 0.5};
inline constexpr std::array<double, kGroups> kSlope = {1.5, -1.5, 0.75, 0.0};
inline constexpr std::array<double, kGroups> kWave = {0.0, 0.0, 0.0, 1.5};

inline void check_group(int g) {
    if (g < 1 || g > kGroups) throw InputError("group must be in 1..4");
}

// f_g(t) of scenario I.
inline double group_curve(int g, double t) {
    check_group(g);
    const auto k = static_cast<std::size_t>(g - 1);
    return kLevel.at(k) + kSlope.at(k) * t + kWave.at(k) * std::sin(std::numbers::pi * t / kTimeMax);
}

inline double effect(Scenario s, double x2, double t, int g) {
    check_group(g);
    switch (s) {
    case Scenario::I: return group_curve(g, t) * x2;
    case Scenario::IV: return group_curve(1, t) * x2;
    case Scenario::III: return kLevel.at(static_cast<std::size_t>(g - 1)) * x2;
    case Scenario::II: return 0.5 * effect(Scenario::III, x2, t, g) + 0.5 * effect(Scenario::IV, x2, t, g);
    }
    return 0.0;
}

inline double dgp_hazard(Scenario s, double x1, double x2, int g, double t) {
    if (t < 0.0) throw InputError("dgp_hazard: negative time");
    return std::exp(3.0 * t + 3.0 * x1 + effect(s, x2, t, g));
}

// SplitMix64 step; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Stream key (base seed, scenario, replication, purpose) -> engine seed.
inline std::uint64_t stream_seed(std::uint64_t base, int scenario, std::uint64_t replication, std::uint64_t purpose = 0) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ static_cast<std::uint64_t>(scenario));
    h = splitmix64(h ^ replication);
    return splitmix64(h ^ purpose);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    // Uniform on the open interval (0, 1) from the top 53 bits.
    double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

private:
    std::mt19937_64 engine_;
};

namespace detail {

inline double simpson(double fa, double fm, double fb, double a, double b) { return (b - a) / 6.0 * (fa + 4.0 * fm + fb); }

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                               double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(fa, flm, fm, a, m), right = simpson(fm, frm, fb, m, b);
    const double diff = left + right - whole;
    if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

} // namespace detail

// Integral of f over [a, b] by adaptive Simpson, halving intervals until the
// Richardson error estimate is below rel_tol of the integral.
inline double integrate(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-8) {
    if (b <= a) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    if (!std::isfinite(fa) || !std::isfinite(fb) || !std::isfinite(fm))
        throw NumericError("integrate: non-finite hazard evaluation");
    const double whole = detail::simpson(fa, fm, fb, a, b);
    const double tol = rel_tol * std::max(std::abs(whole), 1e-300);
    const double v = detail::adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 40);
    if (!std::isfinite(v)) throw NumericError("integrate: non-finite hazard evaluation");
    return v;
}

struct SampledTime {
    double time = 0.0;
    bool truncated = false;  // -log U exceeded the cumulative hazard at t_max
    double residual = 0.0;   // |Lambda(T) + log U|
};

// Solves Lambda(T) = target on [0, t_max] by bisection.
inline SampledTime invert_cumulative_hazard(const std::function<double(double)>& hazard, double target, double t_max,
                                            double tol = 1e-8) {
    SampledTime out;
    const double total = integrate(hazard, 0.0, t_max);
    if (total < target) {
        out.time = t_max;
        out.truncated = true;
        return out;
    }
    double lo = 0.0, hi = t_max, cum_lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double cum_mid = cum_lo + integrate(hazard, lo, mid);
        const double r = cum_mid - target;
        if (std::abs(r) < tol || hi - lo < 4.0 * std::numeric_limits<double>::epsilon() * t_max) {
            out.time = mid;
            out.residual = std::abs(r);
            return out;
        }
        if (r < 0.0) {
            lo = mid;
            cum_lo = cum_mid;
        } else {
            hi = mid;
        }
    }
    throw NumericError("invert_cumulative_hazard: bisection did not converge");
}

inline SampledTime sample_survival_time(const std::function<double(double)>& hazard, Rng& rng, double t_max) {
    const double u = rng.uniform();
    return invert_cumulative_hazard(hazard, -std::log(u), t_max);
}

struct SimConfig {
    Scenario scenario = Scenario::I;
    std::size_t n = 400;
    double censoring_target = 0.105;
    std::size_t replications = 1;
    std::uint64_t seed = 1;
};

inline Schema simulation_schema() {
    Schema s;
    s.covariates = {"x1", "x2"};
    for (int g = 1; g <= kGroups; ++g) s.group_levels.push_back(std::to_string(g));
    return s;
}

namespace detail {
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kCalibrationStream = 2;
} // namespace detail

// Draws n subjects (n/4 per group) with exponential censoring at `censoring_rate`
// and administrative censoring at t_max.
inline SurvivalData sample_dataset(const SimConfig& cfg, std::size_t replication, double censoring_rate) {
    if (cfg.n == 0 || cfg.n % kGroups != 0) throw InputError("n must be a positive multiple of 4");
    if (!(censoring_rate >= 0.0)) throw InputError("censoring rate must be nonnegative");
    Rng rng(stream_seed(cfg.seed, static_cast<int>(cfg.scenario), replication, detail::kDataStream));
    SurvivalData data;
    data.schema = simulation_schema();
    const std::size_t per_group = cfg.n / kGroups;
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const int g = static_cast<int>(i / per_group) + 1;
        const double x1 = rng.uniform();
        const double x2 = rng.uniform();
        const auto t = sample_survival_time(
            [&](double s) { return dgp_hazard(cfg.scenario, x1, x2, g, s); }, rng, kTimeMax);
        const double uc = rng.uniform();
        const double c = censoring_rate > 0.0 ? -std::log(uc) / censoring_rate : std::numeric_limits<double>::infinity();
        SurvivalRecord r;
        r.id = std::to_string(i + 1);
        r.covariates = {x1, x2};
        r.group = std::to_string(g);
        if (t.truncated || c < t.time) {
            r.time = std::min(c, kTimeMax);
            r.event = false;
        } else {
            r.time = t.time;
            r.event = true;
        }
        data.records.push_back(std::move(r));
    }
    return data;
}

inline double censoring_proportion(const SurvivalData& data) {
    std::size_t c = 0;
    for (const auto& r : data.records) c += r.event ? 0 : 1;
    return static_cast<double>(c) / static_cast<double>(data.records.size());
}

struct CalibrationOptions {
    std::size_t subjects = 10000;
    double tolerance = 0.005;
    std::uint64_t seed = 1;
};

// Exponential censoring rate reaching `target` censored proportion, by
// bisection on Monte Carlo estimates with common random numbers.
inline double calibrate_censoring(Scenario scenario, double target, const CalibrationOptions& opt = {}) {
    if (!(target >= 0.0 && target < 1.0)) throw InputError("censoring target must be in [0, 1)");
    Rng rng(stream_seed(opt.seed, static_cast<int>(scenario), 0, detail::kCalibrationStream));
    std::vector<double> event_time(opt.subjects), cens_u(opt.subjects);
    std::vector<char> truncated(opt.subjects);
    for (std::size_t i = 0; i < opt.subjects; ++i) {
        const int g = static_cast<int>(i % kGroups) + 1;
        const double x1 = rng.uniform(), x2 = rng.uniform();
        const auto t = sample_survival_time([&](double s) { return dgp_hazard(scenario, x1, x2, g, s); }, rng, kTimeMax);
        event_time[i] = t.time;
        truncated[i] = t.truncated ? 1 : 0;
        cens_u[i] = rng.uniform();
    }
    auto proportion = [&](double rate) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < opt.subjects; ++i) {
            if (truncated[i]) {
                ++c;
                continue;
            }
            if (rate > 0.0 && -std::log(cens_u[i]) / rate < event_time[i]) ++c;
        }
        return static_cast<double>(c) / static_cast<double>(opt.subjects);
    };
    const double base = proportion(0.0);
    if (target == 0.0 || std::abs(base - target) < opt.tolerance) {
        if (base > target + opt.tolerance) throw NumericError("calibrate_censoring: administrative censoring exceeds target");
        return 0.0;
    }
    if (base > target) throw NumericError("calibrate_censoring: administrative censoring exceeds target");
    double lo = 0.0, hi = 1.0;
    int doublings = 0;
    while (proportion(hi) < target) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 60) throw NumericError("calibrate_censoring: bracket failure");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double p = proportion(mid);
        if (std::abs(p - target) < opt.tolerance) return mid;
        (p < target ? lo : hi) = mid;
    }
    throw NumericError("calibrate_censoring: bisection did not converge");
}

enum class CompetingModel { FunctionalRandom = 1, RandomPlusVarying = 2, RandomSlope = 3, VaryingOnly = 4 };

inline std::string to_string(CompetingModel m) {
    switch (m) {
    case CompetingModel::FunctionalRandom: return "i";
    case CompetingModel::RandomPlusVarying: return "ii";
    case CompetingModel::RandomSlope: return "iii";
    case CompetingModel::VaryingOnly: return "iv";
    }
    return "?";
}

inline CompetingModel parse_model(const std::string& s) {
    for (auto m : {CompetingModel::FunctionalRandom, CompetingModel::RandomPlusVarying, CompetingModel::RandomSlope,
                   CompetingModel::VaryingOnly})
        if (to_string(m) == s) return m;
    throw InputError("unknown model '" + s + "' (expected i|ii|iii|iv)");
}

// Baseline smooth + linear x1, plus the model's x2 effect.
inline ModelSpec competing_spec(CompetingModel m, SplineOptions spline = {}) {
    ModelSpec spec;
    spec.terms = {Term::intercept(), Term::smooth(spline), Term::linear("x1")};
    switch (m) {
    case CompetingModel::FunctionalRandom: spec.terms.push_back(Term::fre("x2", spline)); break;
    case CompetingModel::RandomPlusVarying:
        spec.terms.push_back(Term::random_effect());
        spec.terms.push_back(Term::varying("x2", spline));
        break;
    case CompetingModel::RandomSlope: spec.terms.push_back(Term::random_effect("x2")); break;
    case CompetingModel::VaryingOnly: spec.terms.push_back(Term::varying("x2", spline)); break;
    }
    return spec;
}

struct HarnessConfig {
    std::vector<Scenario> scenarios{Scenario::I, Scenario::II, Scenario::III, Scenario::IV};
    std::vector<std::size_t> sizes{400};
    std::vector<CompetingModel> models{CompetingModel::FunctionalRandom, CompetingModel::RandomPlusVarying,
                                       CompetingModel::RandomSlope, CompetingModel::VaryingOnly};
    std::size_t replications = 1;
    std::uint64_t seed = 1;
    double censoring_target = 0.105;
    CutStrategy cuts = UniqueTimes{};
    SplineOptions spline{};
    int ibs_grid = 200;
    unsigned threads = 1;
    FitOptions fit{};
};

struct ResultRow {
    Scenario scenario = Scenario::I;
    std::size_t n = 0;
    std::size_t rep = 0;
    CompetingModel model = CompetingModel::FunctionalRandom;
    double loglik = std::numeric_limits<double>::quiet_NaN();
    double ibs = std::numeric_limits<double>::quiet_NaN();
    double aic = std::numeric_limits<double>::quiet_NaN();
    double edf = std::numeric_limits<double>::quiet_NaN();
    double x2_edf = std::numeric_limits<double>::quiet_NaN(); // EDF of the penalized x2 terms
    bool converged = false;
    std::string error;
};

struct DatasetRow {
    Scenario scenario = Scenario::I;
    std::size_t n = 0;
    std::size_t rep = 0;
    double censoring = 0.0;
    std::size_t events = 0;
};

struct HarnessResult {
    std::vector<ResultRow> rows;
    std::vector<DatasetRow> datasets;
    std::map<Scenario, double> censoring_rates;
};

// Fits one competing model and scores it in-sample.
inline ResultRow evaluate_model(const SurvivalData& data, const PedDataset& ped, CompetingModel m,
                                const HarnessConfig& cfg) {
    ResultRow row;
    row.model = m;
    try {
        const auto spec = competing_spec(m, cfg.spline);
        const FittedModel fm = fit(ped, spec, cfg.fit);
        row.loglik = fm.loglik;
        row.edf = fm.edf_total;
        row.aic = aic(fm);
        row.x2_edf = 0.0;
        for (const auto& [label, e] : fm.edf_per_term)
            if (label.find("x2") != std::string::npos) row.x2_edf += e;
        row.ibs = ibs(fm, data.records, 0.0, cfg.ibs_grid).ibs;
        row.converged = fm.diagnostics.outer_converged;
    } catch (const std::exception& e) {
        row.error = e.what();
        row.converged = false;
    }
    return row;
}

inline HarnessResult run_scenarios(const HarnessConfig& cfg) {
    HarnessResult out;
    for (auto s : cfg.scenarios) {
        CalibrationOptions co;
        co.seed = cfg.seed;
        out.censoring_rates[s] = calibrate_censoring(s, cfg.censoring_target, co);
    }
    struct Job {
        Scenario s;
        std::size_t n, rep;
    };
    std::vector<Job> jobs;
    for (auto s : cfg.scenarios)
        for (auto n : cfg.sizes)
            for (std::size_t r = 0; r < cfg.replications; ++r) jobs.push_back({s, n, r});

    std::vector<std::vector<ResultRow>> rows(jobs.size());
    std::vector<DatasetRow> datasets(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) {
            const auto& job = jobs[k];
            SimConfig sc;
            sc.scenario = job.s;
            sc.n = job.n;
            sc.seed = cfg.seed;
            const SurvivalData data = sample_dataset(sc, job.rep, out.censoring_rates.at(job.s));
            auto& ds = datasets[k];
            ds = {job.s, job.n, job.rep, censoring_proportion(data), 0};
            for (const auto& r : data.records) ds.events += r.event ? 1 : 0;
            PedDataset ped;
            std::string ped_error;
            try {
                ped = as_ped(data, make_cut_points(data.records, cfg.cuts), TimeConvention::End);
            } catch (const std::exception& e) {
                ped_error = e.what();
            }
            for (auto m : cfg.models) {
                ResultRow row;
                if (ped_error.empty()) {
                    row = evaluate_model(data, ped, m, cfg);
                } else {
                    row.model = m;
                    row.error = ped_error;
                }
                row.scenario = job.s;
                row.n = job.n;
                row.rep = job.rep;
                rows[k].push_back(std::move(row));
            }
        }
    };
    const unsigned nt = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(jobs.size())));
    if (nt == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& r : rows)
        for (auto& x : r) out.rows.push_back(std::move(x));
    out.datasets = std::move(datasets);
    auto key = [](const ResultRow& r) { return std::make_tuple(static_cast<int>(r.scenario), r.n, r.rep, static_cast<int>(r.model)); };
    std::sort(out.rows.begin(), out.rows.end(), [&](const ResultRow& a, const ResultRow& b) { return key(a) < key(b); });
    return out;
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    csv::write_row(out, {"scenario", "n", "rep", "model", "loglik", "ibs", "aic", "edf", "converged"});
    for (const auto& r : rows)
        csv::write_row(out, {to_string(r.scenario), std::to_string(r.n), std::to_string(r.rep + 1), to_string(r.model),
                             csv::format_real(r.loglik), csv::format_real(r.ibs), csv::format_real(r.aic),
                             csv::format_real(r.edf), r.converged ? "1" : "0"});
}

inline void write_datasets_csv(std::ostream& out, const std::vector<DatasetRow>& rows) {
    csv::write_row(out, {"scenario", "n", "rep", "censoring", "events"});
    for (const auto& r : rows)
        csv::write_row(out, {to_string(r.scenario), std::to_string(r.n), std::to_string(r.rep + 1),
                             csv::format_real(r.censoring), std::to_string(r.events)});
}

} // namespace pamm::sim
