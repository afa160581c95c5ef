// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Exit status is nonzero when any required criterion fails. Criterion 9
// needs the case-study export and runs only when PAMM_CASE_STUDY_CSV names it.
// PAMM_ACCEPTANCE_ONLY="1,3" restricts the run to the listed criteria.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "commands.hpp"
#include "test_support.hpp"

using namespace pamm;

namespace {

struct Outcome {
    enum class Status { Pass, Fail, Skip } status = Status::Fail;
    std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Outcome::Status::Pass : Outcome::Status::Fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1. likelihood proportionality

Outcome likelihood_proportionality() {
    constexpr double kTol = 1e-10;
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        const int n = 5 + static_cast<int>(rng() % 26);             // 5..30 subjects
        const std::size_t intervals = 1 + rng() % 4;                 // at most 5 cut points
        const auto data = test::random_survival(rng, n, 2);
        const auto conv = inst % 2 ? TimeConvention::Mid : TimeConvention::End;
        const auto ped = as_ped(data, make_cut_points(data.records, EquidistantCuts{intervals}), conv);
        SplineOptions o;
        o.interior_knots = 2;
        ModelSpec spec;
        spec.t_convention = conv;
        spec.terms = {Term::intercept(), Term::linear("x1"), Term::factor("f"), Term::smooth(o), Term::fre("x2", o)};
        const auto built = build_design(ped, spec, false);
        FittedModel fm;
        fm.model = built.model;
        fm.beta = test::random_vector(rng, built.design.cols(), 0.5);
        // the Poisson form carries the coefficient-free constant sum(delta * offset)
        double constants = 0.0;
        for (const auto& r : ped.rows) constants += r.delta * r.offset;
        const double poisson = poisson_loglik(built.design, fm.beta) - constants;
        double survival = 0.0;
        for (const auto& r : data.records)
            survival += test::survival_loglik_oracle(r.time, r.event, ped.cuts.kappas(), SurvivalCurve(fm, r).interval_hazards());
        worst = std::max(worst, std::abs(poisson - survival));
    }
    return pass_if(worst < kTol, "50 instances, max |difference| " + fmt("%.3g", worst) + " (tol 1e-10)");
}

// ---- 2. fitter oracles

Outcome fitter_oracles() {
    constexpr double kBetaTol = 1e-6, kRemlTol = 1e-8;
    std::mt19937_64 rng(202);
    double plain = 0.0, penalized = 0.0, reml = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        const auto pr = test::random_problem(rng, 60, 4);
        const auto d = Design::from_dense(pr.X, pr.offset, pr.y);
        const Eigen::VectorXd oracle = test::newton_oracle(pr.X, pr.offset, pr.y, Eigen::MatrixXd::Zero(4, 4), Eigen::VectorXd::Zero(4));
        plain = std::max(plain, (pirls(d, Eigen::VectorXd()).beta - oracle).lpNorm<Eigen::Infinity>());
    }
    for (int rep = 0; rep < 10; ++rep) {
        const auto pr = test::random_problem(rng, 150, 10);
        const auto d = test::penalized_design(pr);
        for (const Eigen::VectorXd& lambdas : {Eigen::VectorXd(Eigen::Vector3d(1.0, 1.0, 1.0)),
                                               Eigen::VectorXd(Eigen::Vector3d(0.02, 30.0, 4.0))}) {
            const Eigen::MatrixXd S = test::dense_penalty(d, lambdas);
            const auto res = pirls(d, lambdas);
            const Eigen::VectorXd oracle = test::newton_oracle(pr.X, pr.offset, pr.y, S, Eigen::VectorXd::Zero(10));
            penalized = std::max(penalized, (res.beta - oracle).lpNorm<Eigen::Infinity>());
            const double value = reml_from_fit(d, res, lambdas, PenaltyLogDet(d));
            const double dense = test::reml_oracle(pr.X, pr.offset, pr.y, S, d.penalized_columns(), res.beta);
            reml = std::max(reml, std::abs(value - dense));
        }
    }
    return pass_if(plain < kBetaTol && penalized < kBetaTol && reml < kRemlTol,
                   "unpenalized " + fmt("%.3g", plain) + ", penalized " + fmt("%.3g", penalized) +
                       " (tol 1e-6 max-norm); REML " + fmt("%.3g", reml) + " (tol 1e-8 absolute)");
}

// ---- 3. score vs central differences

Outcome gradient_check() {
    constexpr double kStep = 1e-5, kTol = 1e-4;
    std::mt19937_64 rng(303);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const auto pr = test::random_problem(rng, 80, 10);
        const auto d = test::penalized_design(pr);
        const Eigen::VectorXd lambdas = test::random_vector(rng, 3).cwiseAbs();
        const Eigen::MatrixXd S = test::dense_penalty(d, lambdas);
        const Eigen::VectorXd beta = test::random_vector(rng, 10, 0.3);
        const Eigen::VectorXd mu = (pr.X * beta + pr.offset).array().exp().matrix();
        const Eigen::VectorXd analytic = poisson_score(d, mu) - d.penalty_gradient(lambdas, beta);
        Eigen::VectorXd fd(10);
        for (Eigen::Index j = 0; j < 10; ++j) {
            Eigen::VectorXd bp = beta, bm = beta;
            bp[j] += kStep;
            bm[j] -= kStep;
            fd[j] = (test::penalized_loglik(pr.X, pr.offset, pr.y, S, bp) - test::penalized_loglik(pr.X, pr.offset, pr.y, S, bm)) /
                    (2 * kStep);
        }
        worst = std::max(worst, (analytic - fd).lpNorm<Eigen::Infinity>() / fd.lpNorm<Eigen::Infinity>());
    }
    return pass_if(worst < kTol, "20 designs, max relative error " + fmt("%.3g", worst) +
                                     " (max-norm ratio, tol 1e-4)");
}

// ---- 4. sampler

Outcome sampler() {
    int passed = 0;
    for (std::uint64_t meta = 0; meta < 20; ++meta) {
        sim::Rng rng(sim::stream_seed(404, 0, meta));
        const double c = 0.5 + 0.25 * static_cast<double>(meta % 4);
        std::vector<double> draws(10000);
        for (auto& d : draws) d = sim::sample_survival_time([c](double) { return c; }, rng, 200.0).time;
        const double ks = test::ks_statistic(draws, [c](double x) { return 1.0 - std::exp(-c * x); });
        if (ks < test::ks_critical(0.01, draws.size())) ++passed;
    }
    const auto s = sim::invert_cumulative_hazard([](double t) { return std::exp(3.0 * t); }, 1.0, 2.0);
    const double err = std::abs(s.time - std::log(4.0) / 3.0);
    return pass_if(passed >= 19 && err < 1e-6, "KS at 1%: " + std::to_string(passed) + "/20 (need 19); inversion error " +
                                                    fmt("%.3g", err) + " (tol 1e-6)");
}

// ---- 5. intercept recovery

Outcome recovery() {
    const double c = 0.5;
    int covered = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        sim::Rng rng(sim::stream_seed(505, 0, seed));
        SurvivalData d;
        d.schema.group_levels = {"all"};
        for (int i = 0; i < 1000; ++i) {
            SurvivalRecord r;
            r.id = std::to_string(i);
            r.time = -std::log(1.0 - rng.uniform()) / c;
            r.event = true;
            r.group = "all";
            d.records.push_back(r);
        }
        const auto ped = as_ped(d, make_cut_points(d.records, EquidistantCuts{10}), TimeConvention::End);
        ModelSpec s;
        s.terms = {Term::intercept()};
        const auto fm = fit(ped, s);
        if (std::abs(fm.beta[0] - std::log(c)) < 3.0 * std::sqrt(fm.V(0, 0))) ++covered;
    }
    return pass_if(covered >= 93, std::to_string(covered) + "/100 within 3 SE (need 93)");
}

// ---- 6. simulation ordering

Outcome simulation_ordering() {
    using sim::CompetingModel;
    using sim::Scenario;
    sim::HarnessConfig cfg;
    cfg.replications = 100;
    cfg.sizes = {400};
    cfg.seed = 2024;
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    const auto res = sim::run_scenarios(cfg);
    {
        std::ofstream out("acceptance_simulation.csv");
        sim::write_results_csv(out, res.rows);
    }

    struct Acc {
        double loglik = 0, aic = 0, x2_edf = 0;
        int n = 0;
    };
    std::map<std::pair<Scenario, CompetingModel>, Acc> acc;
    std::size_t failures = 0;
    for (const auto& r : res.rows) {
        if (!r.error.empty()) {
            ++failures;
            continue;
        }
        auto& a = acc[{r.scenario, r.model}];
        a.loglik += r.loglik;
        a.aic += r.aic;
        a.x2_edf += r.x2_edf;
        ++a.n;
    }
    auto mean = [&](Scenario s, CompetingModel m, double Acc::*field) {
        const auto& a = acc[{s, m}];
        return a.n ? a.*field / a.n : std::numeric_limits<double>::quiet_NaN();
    };
    const std::vector<CompetingModel> models{CompetingModel::FunctionalRandom, CompetingModel::RandomPlusVarying,
                                             CompetingModel::RandomSlope, CompetingModel::VaryingOnly};
    std::ostringstream table;
    for (auto s : cfg.scenarios)
        for (auto m : models)
            table << "    " << sim::to_string(s) << " (" << sim::to_string(m) << "): loglik " << fmt("%.2f", mean(s, m, &Acc::loglik))
                  << ", aic " << fmt("%.2f", mean(s, m, &Acc::aic)) << ", x2 edf " << fmt("%.3f", mean(s, m, &Acc::x2_edf))
                  << ", fits " << acc[{s, m}].n << "\n";

    const auto fre = CompetingModel::FunctionalRandom;
    bool best = true;
    for (auto m : models) {
        if (m == fre) continue;
        best = best && mean(Scenario::I, fre, &Acc::loglik) > mean(Scenario::I, m, &Acc::loglik) &&
               mean(Scenario::I, fre, &Acc::aic) < mean(Scenario::I, m, &Acc::aic);
    }
    const double gap = mean(Scenario::I, CompetingModel::RandomPlusVarying, &Acc::aic) - mean(Scenario::I, fre, &Acc::aic);
    const double d2 = std::abs(mean(Scenario::II, fre, &Acc::aic) - mean(Scenario::II, CompetingModel::RandomPlusVarying, &Acc::aic));
    const double d4 = std::abs(mean(Scenario::IV, fre, &Acc::aic) - mean(Scenario::IV, CompetingModel::VaryingOnly, &Acc::aic));
    const bool close = d2 < 0.25 * gap && d4 < 0.25 * gap;
    const double edf_i = mean(Scenario::I, fre, &Acc::x2_edf), edf_iii = mean(Scenario::III, fre, &Acc::x2_edf);
    const bool shrunk = edf_iii < 0.6 * edf_i;

    std::ostringstream detail;
    detail << "100 replications, n = 400, " << failures << " failed fits\n" << table.str();
    detail << "    scenario I, model (i) best in loglik and AIC: " << (best ? "yes" : "no") << "\n";
    detail << "    AIC gap (ii) - (i) in I " << fmt("%.2f", gap) << "; |(i) - (ii)| in II " << fmt("%.2f", d2)
           << ", |(i) - (iv)| in IV " << fmt("%.2f", d4) << " (limit " << fmt("%.2f", 0.25 * gap) << ")\n";
    detail << "    FRE edf in III " << fmt("%.3f", edf_iii) << " vs 0.6 x " << fmt("%.3f", edf_i) << " = "
           << fmt("%.3f", 0.6 * edf_i) << ": " << (shrunk ? "below" : "not below");
    return pass_if(best && close && shrunk && failures == 0, detail.str());
}

// ---- 7. censoring calibration

Outcome censoring_calibration() {
    constexpr double kTarget = 0.105, kTol = 0.015;
    std::ostringstream detail;
    bool ok = true;
    for (auto s : {sim::Scenario::I, sim::Scenario::II, sim::Scenario::III, sim::Scenario::IV}) {
        const double rate = sim::calibrate_censoring(s, kTarget);
        sim::SimConfig c;
        c.scenario = s;
        c.n = 100000;
        c.seed = 707;
        const double realized = sim::censoring_proportion(sim::sample_dataset(c, 0, rate));
        ok = ok && std::abs(realized - kTarget) <= kTol;
        detail << sim::to_string(s) << " " << fmt("%.4f", realized) << "  ";
    }
    return pass_if(ok, detail.str() + "(target 0.105 +/- 0.015 over 1e5 subjects)");
}

// ---- 8. scenario identities

Outcome scenario_identities() {
    using sim::Scenario;
    constexpr double kUlps = 4.0;
    double worst = 0.0;
    auto rel = [](double a, double b) { return std::abs(a - b) / (std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(b))); };
    for (int g = 1; g <= 4; ++g)
        for (int i = 0; i < 100; ++i)
            for (int k = 0; k < 100; ++k) {
                const double t = sim::kTimeMax * i / 99.0, x2 = k / 99.0;
                worst = std::max(worst, rel(sim::effect(Scenario::IV, x2, t, g), sim::effect(Scenario::I, x2, t, 1)));
                worst = std::max(worst, rel(sim::effect(Scenario::II, x2, t, g),
                                            0.5 * sim::effect(Scenario::III, x2, t, g) + 0.5 * sim::effect(Scenario::IV, x2, t, g)));
                worst = std::max(worst, rel(sim::effect(Scenario::III, x2, t, g), sim::effect(Scenario::III, x2, 0.0, g)));
            }
    return pass_if(worst <= kUlps, "100 x 100 grid, 4 groups, max deviation " + fmt("%.1f", worst) + " eps (tol 4 eps)");
}

// ---- 9. case study

Outcome case_study() {
    const char* path = std::getenv("PAMM_CASE_STUDY_CSV");
    if (!path || !*path) return {Outcome::Status::Skip, "PAMM_CASE_STUDY_CSV not set"};
    const auto table = csv::read_file(path);
    auto opt = cli::parse_ingest(nlohmann::json::parse(R"({
        "columns": {"time": "time", "event": "status", "covariates": ["age", "fga"],
                    "factors": ["sex", "diagnosis"], "group": "diagnosis"},
        "admin_horizon": 8})"));
    // anaplastic astrocytoma is the reference diagnosis
    if (const auto c = table.column("diagnosis"); c != csv::Table::npos) {
        std::vector<std::string> levels;
        for (const auto& row : table.rows)
            if (!cli::is_missing(row[c])) levels.push_back(row[c]);
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        std::stable_partition(levels.begin(), levels.end(), [](const std::string& l) { return l == "Anaplastic Astrocytoma" || l == "anaplastic astrocytoma"; });
        opt.levels["diagnosis"] = levels;
        opt.levels["group"] = levels;
    }
    cli::IngestReport report;
    const auto data = cli::ingest(table, opt, report);
    std::size_t events = 0;
    for (const auto& r : data.records) events += r.event;
    const auto ped = as_ped(data, make_cut_points(data.records, UniqueTimes{}), TimeConvention::End);

    SplineOptions o;
    o.interior_knots = 9;
    o.placement = KnotPlacement::Equidistant;
    auto base = [&] {
        ModelSpec s;
        s.terms = {Term::intercept(), Term::smooth(o), Term::linear("age"), Term::factor("sex"), Term::factor("diagnosis")};
        return s;
    };
    std::vector<std::pair<std::string, ModelSpec>> variants;
    variants.emplace_back("heterogeneous time-variation", base());
    variants.back().second.terms.push_back(Term::fre("fga", o));
    variants.emplace_back("heterogeneity and time-variation", base());
    variants.back().second.terms.push_back(Term::random_effect());
    variants.back().second.terms.push_back(Term::varying("fga", o));
    variants.emplace_back("heterogeneity only", base());
    variants.back().second.terms.push_back(Term::random_effect("fga"));
    variants.emplace_back("time-variation only", base());
    variants.back().second.terms.push_back(Term::varying("fga", o));
    variants.emplace_back("linear effect", base());
    variants.back().second.terms.push_back(Term::linear("fga"));

    std::ostringstream detail;
    detail << data.records.size() << " subjects, " << events << " events\n";
    std::vector<double> aics;
    double fre_ibs = 0.0;
    bool signs = false;
    for (const auto& [name, spec] : variants) {
        const auto fm = fit(ped, spec);
        const auto rep = evaluate(fm, data);
        aics.push_back(rep.aic);
        detail << "    " << name << ": loglik " << fmt("%.2f", rep.loglik) << ", ibs " << fmt("%.4f", rep.ibs) << ", aic "
               << fmt("%.2f", rep.aic) << "\n";
        if (aics.size() == 1) {
            fre_ibs = rep.ibs;
            signs = true;
            for (const auto& row : coefficient_table(fm)) {
                if (row.term == "age") signs = signs && row.estimate > 0 && row.p < 0.001;
                else if (row.term.rfind("diagnosis: ", 0) == 0) {
                    const bool gbm = row.term.find("lioblastoma") != std::string::npos;
                    signs = signs && (gbm ? row.estimate > 0 : row.estimate < 0);
                }
            }
        }
    }
    const bool first = std::min_element(aics.begin(), aics.end()) == aics.begin();
    const bool ibs_ok = std::abs(fre_ibs - 0.1162) <= 0.01;
    detail << "    sign pattern " << (signs ? "reproduced" : "not reproduced") << ", FRE ranked first by AIC: "
           << (first ? "yes" : "no") << ", FRE ibs within 0.01 of 0.1162: " << (ibs_ok ? "yes" : "no");
    return pass_if(signs && first && ibs_ok, detail.str());
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"likelihood proportionality", likelihood_proportionality},
        {"fitter oracle equivalence", fitter_oracles},
        {"gradient check", gradient_check},
        {"sampler distribution", sampler},
        {"intercept recovery", recovery},
        {"simulation ordering", simulation_ordering},
        {"censoring calibration", censoring_calibration},
        {"scenario identities", scenario_identities},
        {"case study (optional)", case_study},
    };
    std::vector<bool> selected(criteria.size(), true);
    if (const char* only = std::getenv("PAMM_ACCEPTANCE_ONLY"); only && *only) {
        selected.assign(criteria.size(), false);
        std::istringstream in(only);
        for (std::string item; std::getline(in, item, ',');) {
            const auto k = std::strtoul(item.c_str(), nullptr, 10);
            if (k >= 1 && k <= criteria.size()) selected[k - 1] = true;
        }
    }
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o{Outcome::Status::Skip, "not selected"};
        try {
            if (selected[i]) o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Outcome::Status::Fail, std::string("exception: ") + e.what()};
        }
        const char* tag = o.status == Outcome::Status::Pass ? "PASS" : o.status == Outcome::Status::Skip ? "SKIP" : "FAIL";
        if (o.status == Outcome::Status::Fail && i + 1 < criteria.size()) ++failed;
        std::printf("%s criterion %zu (%s): %s\n", tag, i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
