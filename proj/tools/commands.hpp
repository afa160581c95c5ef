#pragma once

// Subcommands of the pamm tool. Each takes the parsed JSON run config plus
// flag overrides, writes its outputs and a manifest into the output
// directory, and throws InputError (config or data problems) or NumericError.

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pamm/pamm.hpp"

#ifndef PAMM_VERSION
#define PAMM_VERSION "0.0.0"
#endif

namespace pamm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
};

// A run config with the directory its relative paths are resolved against.
struct RunConfig {
    json doc;
    fs::path base;
};

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    RunConfig rc;
    try {
        rc.doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    if (!rc.doc.is_object()) throw ConfigError("config must be a JSON object");
    rc.base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    return rc;
}

// Folds the flag overrides into the config document.
inline void apply_overrides(RunConfig& rc, const Overrides& ov) {
    if (ov.seed) rc.doc["seed"] = *ov.seed;
    if (ov.threads) rc.doc["threads"] = *ov.threads;
    if (ov.out) rc.doc["out"] = fs::absolute(*ov.out).string();
}

// ---- digests and manifest

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string file_sha256(const fs::path& p) { return sha256_hex(read_bytes(p)); }

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
    if (!out) throw InputError("write failed: " + p.string());
}

// No timestamps: reruns with equal inputs give byte-identical manifests.
inline void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                           const std::vector<fs::path>& inputs, const std::vector<std::string>& outputs) {
    json in = json::array(), out = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha256", file_sha256(p)}});
    for (const auto& name : outputs) out.push_back({{"path", name}, {"sha256", file_sha256(out_dir / name)}});
    const json m{{"tool", "pamm"},
                 {"version", PAMM_VERSION},
                 {"command", command},
                 {"config_sha256", sha256_hex(config.dump())},
                 {"config", config},
                 {"inputs", in},
                 {"outputs", out}};
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
}

// ---- config access

inline const json& require(const json& j, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("config: missing '" + key + "'");
    return j.at(key);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + key + "' has the wrong type");
    }
}

inline fs::path resolve(const RunConfig& rc, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : rc.base / path;
}

inline fs::path output_dir(const RunConfig& rc) {
    const fs::path dir = resolve(rc, get_or<std::string>(rc.doc, "out", "out"));
    fs::create_directories(dir);
    return dir;
}

inline CutStrategy parse_cuts(const json& j) {
    if (j.is_null() || (j.is_string() && j.get<std::string>() == "unique")) return UniqueTimes{};
    if (j.is_object() && j.contains("explicit")) return ExplicitCuts{j.at("explicit").get<std::vector<double>>()};
    if (j.is_object() && j.contains("equidistant")) {
        const auto k = j.at("equidistant").get<long>();
        if (k < 1) throw ConfigError("config: 'equidistant' needs at least one interval");
        return EquidistantCuts{static_cast<std::size_t>(k)};
    }
    throw ConfigError("config: 'cuts' must be \"unique\", {\"explicit\": [...]} or {\"equidistant\": k}");
}

// ---- ingestion of subject-level CSVs

struct ColumnMap {
    std::string id; // empty: row number
    std::string time;
    std::string event;
    std::vector<std::string> covariates;
    std::vector<std::string> factors;
    std::string group; // empty: one group "all"
    std::vector<std::string> event_values;  // empty: numeric 0/1
    std::vector<std::string> censor_values;
};

struct IngestOptions {
    ColumnMap columns;
    std::optional<double> admin_horizon;
    std::optional<double> zero_time_repair = 0.5; // replaces a time of exactly 0
    std::map<std::string, std::vector<std::string>> levels; // declared level orders, "group" included
};

struct IngestReport {
    std::size_t dropped_missing = 0;
    std::size_t repaired = 0;
    std::size_t admin_censored = 0;
};

inline ColumnMap parse_columns(const json& j) {
    if (!j.is_object()) throw ConfigError("config: 'columns' must be an object");
    ColumnMap m;
    m.id = get_or<std::string>(j, "id", "");
    m.time = require(j, "time").get<std::string>();
    m.event = require(j, "event").get<std::string>();
    m.covariates = get_or<std::vector<std::string>>(j, "covariates", {});
    m.factors = get_or<std::vector<std::string>>(j, "factors", {});
    m.group = get_or<std::string>(j, "group", "");
    m.event_values = get_or<std::vector<std::string>>(j, "event_values", {});
    m.censor_values = get_or<std::vector<std::string>>(j, "censor_values", {});
    return m;
}

inline IngestOptions parse_ingest(const json& doc) {
    IngestOptions o;
    o.columns = parse_columns(require(doc, "columns"));
    if (doc.contains("admin_horizon") && !doc.at("admin_horizon").is_null()) {
        o.admin_horizon = doc.at("admin_horizon").get<double>();
        if (!(*o.admin_horizon > 0.0)) throw ConfigError("config: 'admin_horizon' must be positive");
    }
    if (doc.contains("zero_time_repair")) {
        if (doc.at("zero_time_repair").is_null()) o.zero_time_repair.reset();
        else o.zero_time_repair = doc.at("zero_time_repair").get<double>();
        if (o.zero_time_repair && !(*o.zero_time_repair > 0.0))
            throw ConfigError("config: 'zero_time_repair' must be positive or null");
    }
    o.levels = get_or<std::map<std::string, std::vector<std::string>>>(doc, "levels", {});
    return o;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "."; }

inline SurvivalData ingest(const csv::Table& table, const IngestOptions& opt, IngestReport& report) {
    const auto& cm = opt.columns;
    auto col = [&](const std::string& name) {
        const auto c = table.column(name);
        if (c == csv::Table::npos) throw ConfigError("column '" + name + "' not found in input");
        return c;
    };
    const auto tcol = col(cm.time), ecol = col(cm.event);
    const auto idcol = cm.id.empty() ? csv::Table::npos : col(cm.id);
    const auto gcol = cm.group.empty() ? csv::Table::npos : col(cm.group);
    std::vector<std::size_t> ccols, fcols;
    for (const auto& c : cm.covariates) ccols.push_back(col(c));
    for (const auto& f : cm.factors) fcols.push_back(col(f));

    std::vector<std::size_t> mapped{tcol, ecol};
    if (idcol != csv::Table::npos) mapped.push_back(idcol);
    if (gcol != csv::Table::npos) mapped.push_back(gcol);
    mapped.insert(mapped.end(), ccols.begin(), ccols.end());
    mapped.insert(mapped.end(), fcols.begin(), fcols.end());

    SurvivalData data;
    data.schema.covariates = cm.covariates;
    std::size_t line = 1;
    for (const auto& f : table.rows) {
        ++line;
        bool missing = false;
        for (auto c : mapped) missing = missing || is_missing(f[c]);
        if (missing) {
            ++report.dropped_missing;
            continue;
        }
        SurvivalRecord r;
        r.id = idcol == csv::Table::npos ? std::to_string(line - 1) : f[idcol];
        r.time = csv::parse_real(f[tcol], cm.time);
        const auto& ev = f[ecol];
        if (!cm.event_values.empty() || !cm.censor_values.empty()) {
            auto in = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), ev) != v.end(); };
            if (in(cm.event_values)) r.event = true;
            else if (in(cm.censor_values) || cm.censor_values.empty()) r.event = false;
            else throw InputError("line " + std::to_string(line) + ": unrecognized event value '" + ev + "'");
        } else {
            const double e = csv::parse_real(ev, cm.event);
            if (e != 0.0 && e != 1.0) throw InputError("line " + std::to_string(line) + ": event must be 0 or 1");
            r.event = e == 1.0;
        }
        if (r.time < 0.0) throw InputError("line " + std::to_string(line) + ": negative time");
        if (r.time == 0.0) {
            if (!opt.zero_time_repair) throw InputError("line " + std::to_string(line) + ": time is 0");
            r.time = *opt.zero_time_repair;
            ++report.repaired;
        }
        if (opt.admin_horizon && r.time > *opt.admin_horizon) {
            r.time = *opt.admin_horizon;
            r.event = false;
            ++report.admin_censored;
        }
        for (std::size_t k = 0; k < ccols.size(); ++k) r.covariates.push_back(csv::parse_real(f[ccols[k]], cm.covariates[k]));
        for (auto c : fcols) r.factors.push_back(f[c]);
        r.group = gcol == csv::Table::npos ? "all" : f[gcol];
        data.records.push_back(std::move(r));
    }
    if (data.records.empty()) throw InputError("no complete rows in input");

    auto levels_for = [&](const std::string& key, std::vector<std::string> seen) {
        if (auto it = opt.levels.find(key); it != opt.levels.end()) return it->second;
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        return seen;
    };
    for (std::size_t k = 0; k < cm.factors.size(); ++k) {
        std::vector<std::string> seen;
        for (const auto& r : data.records) seen.push_back(r.factors[k]);
        data.schema.factors.push_back({cm.factors[k], levels_for(cm.factors[k], seen)});
    }
    std::vector<std::string> groups;
    for (const auto& r : data.records) groups.push_back(r.group);
    data.schema.group_levels = levels_for("group", groups);
    data.validate();
    return data;
}

inline std::map<std::string, std::vector<std::string>> declared_levels(const Schema& s) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& f : s.factors) out[f.name] = f.levels;
    out["group"] = s.group_levels;
    return out;
}

// ---- ped

inline void cmd_ped(RunConfig rc, const Overrides& ov, std::ostream& log) {
    apply_overrides(rc, ov);
    const auto& doc = rc.doc;
    const fs::path input = resolve(rc, require(doc, "input").get<std::string>());
    const IngestOptions opt = parse_ingest(doc);
    const CutStrategy cuts = parse_cuts(doc.contains("cuts") ? doc.at("cuts") : json());
    const TimeConvention conv = parse_time_convention(get_or<std::string>(doc, "t_convention", "end"));

    IngestReport report;
    const SurvivalData data = ingest(csv::read_file(input.string()), opt, report);
    const PedDataset ped = as_ped(data, make_cut_points(data.records, cuts), conv);

    const fs::path out = output_dir(rc);
    std::ostringstream ss;
    write_ped_csv(ss, ped);
    write_text(out / "ped.csv", ss.str());
    write_text(out / "schema.json", schema_to_json(data.schema).dump(2) + "\n");
    write_manifest(out, "ped", doc, {input}, {"ped.csv", "schema.json"});

    std::size_t events = 0;
    for (const auto& r : data.records) events += r.event ? 1 : 0;
    log << "subjects " << data.records.size() << ", events " << events << ", intervals " << ped.cuts.intervals()
        << ", rows " << ped.rows.size() << "\n";
    log << "dropped (missing) " << report.dropped_missing << ", zero times repaired " << report.repaired
        << ", administratively censored " << report.admin_censored << "\n";
}

// ---- fit

inline SmoothingOptions parse_smoothing(const json& j) {
    SmoothingOptions s;
    if (j.is_null()) return s;
    s.grid = get_or<std::vector<double>>(j, "grid", s.grid);
    s.simplex_tolerance = get_or<double>(j, "tolerance", s.simplex_tolerance);
    s.max_evaluations = get_or<int>(j, "max_evaluations", s.max_evaluations);
    for (double g : s.grid)
        if (!(g > 0.0)) throw ConfigError("config: smoothing grid values must be positive");
    return s;
}

inline void cmd_fit(RunConfig rc, const Overrides& ov, std::ostream& log) {
    apply_overrides(rc, ov);
    const auto& doc = rc.doc;
    std::vector<fs::path> inputs;
    const fs::path ped_path = resolve(rc, require(doc, "ped").get<std::string>());
    inputs.push_back(ped_path);

    std::vector<std::string> factor_names = get_or<std::vector<std::string>>(doc, "factors", {});
    auto levels = get_or<std::map<std::string, std::vector<std::string>>>(doc, "levels", {});
    if (doc.contains("schema")) {
        const fs::path sp = resolve(rc, doc.at("schema").get<std::string>());
        inputs.push_back(sp);
        const Schema s = schema_from_json(json::parse(read_bytes(sp)));
        for (const auto& f : s.factors) factor_names.push_back(f.name);
        for (auto& [k, v] : declared_levels(s)) levels.try_emplace(k, v);
    }
    ModelSpec spec;
    const auto& mj = require(doc, "model");
    if (mj.is_string()) {
        const fs::path mp = resolve(rc, mj.get<std::string>());
        inputs.push_back(mp);
        spec = model_spec_from_json(json::parse(read_bytes(mp)));
    } else {
        spec = model_spec_from_json(mj);
    }

    std::ifstream pin(ped_path, std::ios::binary);
    if (!pin) throw InputError("cannot open " + ped_path.string());
    const PedDataset ped = read_ped_csv(pin, factor_names, levels);
    if (ped.convention != spec.t_convention)
        throw ConfigError("model t_convention '" + to_string(spec.t_convention) + "' differs from the PED file's");

    FitOptions fo;
    fo.smoothing = parse_smoothing(doc.contains("smoothing") ? doc.at("smoothing") : json());
    fo.check_rank = get_or<bool>(doc, "check_rank", true);
    const int grid = get_or<int>(doc, "curve_grid", 200);
    if (grid < 2) throw ConfigError("config: 'curve_grid' must be at least 2");

    const FittedModel fm = fit(ped, spec, fo);

    std::string curve_label = get_or<std::string>(doc, "curve_term", "");
    if (curve_label.empty()) {
        for (const auto& t : fm.model.terms)
            if (t.term.kind == TermKind::Fre && curve_label.empty()) curve_label = t.label;
        for (const auto& t : fm.model.terms)
            if ((t.term.kind == TermKind::Smooth || t.term.kind == TermKind::VaryingCoefficient) && curve_label.empty())
                curve_label = t.label;
    }

    const fs::path out = output_dir(rc);
    write_text(out / "model.json", to_json(fm).dump(2) + "\n");
    {
        std::ostringstream ss;
        csv::write_row(ss, {"term", "estimate", "se", "z", "p"});
        for (const auto& r : coefficient_table(fm))
            csv::write_row(ss, {r.term, csv::format_real(r.estimate), csv::format_real(r.se), csv::format_real(r.z),
                                csv::format_real(r.p)});
        write_text(out / "coefficients.csv", ss.str());
    }
    std::vector<std::string> outputs{"model.json", "coefficients.csv"};
    if (!curve_label.empty()) {
        std::ostringstream ss;
        csv::write_row(ss, {"group", "t", "estimate", "lower", "upper"});
        for (const auto& c : term_curves(fm, curve_label, grid))
            csv::write_row(ss, {c.group, csv::format_real(c.t), csv::format_real(c.estimate), csv::format_real(c.lower),
                                csv::format_real(c.upper)});
        write_text(out / "curves.csv", ss.str());
        outputs.push_back("curves.csv");
    }
    write_manifest(out, "fit", doc, inputs, outputs);

    log << "loglik " << csv::format_real(fm.loglik) << ", edf " << csv::format_real(fm.edf_total) << ", aic "
        << csv::format_real(aic(fm)) << ", reml evaluations " << fm.diagnostics.outer_evaluations
        << (fm.diagnostics.outer_converged ? "" : " (smoothing search hit its evaluation limit)") << "\n";
}

// ---- evaluate

inline void cmd_evaluate(RunConfig rc, const Overrides& ov, std::ostream& log) {
    apply_overrides(rc, ov);
    const auto& doc = rc.doc;
    const fs::path model_path = resolve(rc, require(doc, "model").get<std::string>());
    std::vector<fs::path> inputs{model_path};
    json mj;
    try {
        mj = json::parse(read_bytes(model_path));
    } catch (const json::parse_error& e) {
        throw InputError("model " + model_path.string() + ": " + e.what());
    }
    const FittedModel fm = fitted_model_from_json(mj);
    EvaluateOptions eo;
    eo.tau = get_or<double>(doc, "tau", 0.0);
    eo.grid_size = get_or<int>(doc, "grid_size", 200);
    if (eo.tau < 0.0) throw ConfigError("config: 'tau' must be nonnegative");

    FitReport rep;
    if (doc.contains("ped")) {
        // PED input: likelihood on the rows as given, IBS on the subjects they encode
        const fs::path pp = resolve(rc, doc.at("ped").get<std::string>());
        inputs.push_back(pp);
        std::vector<std::string> factors;
        for (const auto& f : fm.model.schema.factors) factors.push_back(f.name);
        std::ifstream in(pp, std::ios::binary);
        if (!in) throw InputError("cannot open " + pp.string());
        const PedDataset ped = read_ped_csv(in, factors, declared_levels(fm.model.schema));
        if (!(ped.schema == fm.model.schema)) throw InputError("evaluate: data schema differs from the model's");
        rep.loglik = model_loglik(fm, ped);
        rep.edf = fm.edf_total;
        rep.aic = aic(rep.loglik, rep.edf);
        const auto res = ibs(fm, reconstruct_subjects(ped), eo.tau, eo.grid_size);
        rep.ibs = res.ibs;
        rep.brier_times = res.times;
        rep.brier = res.brier;
    } else {
        const fs::path dp = resolve(rc, require(doc, "data").get<std::string>());
        inputs.push_back(dp);
        IngestOptions io = parse_ingest(doc);
        for (auto& [k, v] : declared_levels(fm.model.schema)) io.levels[k] = v;
        IngestReport report;
        const SurvivalData data = ingest(csv::read_file(dp.string()), io, report);
        rep = evaluate(fm, data, eo);
        log << "dropped (missing) " << report.dropped_missing << "\n";
    }
    rep.model = get_or<std::string>(doc, "name", model_path.stem().string());
    rep.dataset = inputs.back().filename().string();

    const fs::path out = output_dir(rc);
    {
        std::ostringstream ss;
        write_fit_report_csv(ss, {rep});
        write_text(out / "report.csv", ss.str());
    }
    {
        std::ostringstream ss;
        csv::write_row(ss, {"t", "brier"});
        for (std::size_t k = 0; k < rep.brier.size(); ++k)
            csv::write_row(ss, {csv::format_real(rep.brier_times[k]), csv::format_real(rep.brier[k])});
        write_text(out / "brier.csv", ss.str());
    }
    write_manifest(out, "evaluate", doc, inputs, {"report.csv", "brier.csv"});
    log << "loglik " << csv::format_real(rep.loglik) << ", aic " << csv::format_real(rep.aic) << ", ibs "
        << csv::format_real(rep.ibs) << "\n";
}

// ---- simulate

inline sim::HarnessConfig parse_harness(const json& doc) {
    sim::HarnessConfig h;
    if (doc.contains("scenarios")) {
        h.scenarios.clear();
        for (const auto& s : doc.at("scenarios")) h.scenarios.push_back(sim::parse_scenario(s.get<std::string>()));
    }
    if (doc.contains("models")) {
        h.models.clear();
        for (const auto& m : doc.at("models")) h.models.push_back(sim::parse_model(m.get<std::string>()));
    }
    h.sizes = get_or<std::vector<std::size_t>>(doc, "sizes", h.sizes);
    for (auto n : h.sizes)
        if (n == 0 || n % sim::kGroups != 0) throw ConfigError("config: sample sizes must be positive multiples of 4");
    h.replications = get_or<std::size_t>(doc, "replications", h.replications);
    h.seed = get_or<std::uint64_t>(doc, "seed", h.seed);
    h.censoring_target = get_or<double>(doc, "censoring_target", h.censoring_target);
    if (!(h.censoring_target >= 0.0 && h.censoring_target < 1.0))
        throw ConfigError("config: 'censoring_target' must lie in [0, 1)");
    h.cuts = parse_cuts(doc.contains("cuts") ? doc.at("cuts") : json());
    h.ibs_grid = get_or<int>(doc, "ibs_grid", h.ibs_grid);
    h.threads = get_or<unsigned>(doc, "threads", h.threads);
    if (h.threads == 0) h.threads = std::max(1u, std::thread::hardware_concurrency());
    if (doc.contains("spline")) {
        const auto& s = doc.at("spline");
        h.spline.degree = get_or<int>(s, "degree", h.spline.degree);
        h.spline.interior_knots = get_or<int>(s, "knots", h.spline.interior_knots);
        h.spline.diff_order = get_or<int>(s, "diff_order", h.spline.diff_order);
        const auto placement = get_or<std::string>(s, "placement", "quantile");
        if (placement == "quantile") h.spline.placement = KnotPlacement::Quantile;
        else if (placement == "equidistant") h.spline.placement = KnotPlacement::Equidistant;
        else throw ConfigError("config: unknown knot placement '" + placement + "'");
    }
    h.fit.smoothing = parse_smoothing(doc.contains("smoothing") ? doc.at("smoothing") : json());
    return h;
}

// Per (scenario, n, model) means over the successful replications.
inline void write_summary_csv(std::ostream& out, const std::vector<sim::ResultRow>& rows) {
    struct Acc {
        double loglik = 0, aic = 0, ibs = 0, edf = 0, x2 = 0;
        std::size_t ok = 0, failed = 0;
    };
    std::map<std::tuple<int, std::size_t, int>, Acc> acc;
    for (const auto& r : rows) {
        auto& a = acc[{static_cast<int>(r.scenario), r.n, static_cast<int>(r.model)}];
        if (!r.error.empty()) {
            ++a.failed;
            continue;
        }
        a.loglik += r.loglik;
        a.aic += r.aic;
        a.ibs += r.ibs;
        a.edf += r.edf;
        a.x2 += r.x2_edf;
        ++a.ok;
    }
    csv::write_row(out, {"scenario", "n", "model", "mean_loglik", "mean_aic", "mean_ibs", "mean_edf", "mean_x2_edf",
                         "fits", "failures"});
    for (const auto& [k, a] : acc) {
        const double m = a.ok ? 1.0 / static_cast<double>(a.ok) : std::numeric_limits<double>::quiet_NaN();
        csv::write_row(out, {sim::to_string(static_cast<sim::Scenario>(std::get<0>(k))), std::to_string(std::get<1>(k)),
                             sim::to_string(static_cast<sim::CompetingModel>(std::get<2>(k))),
                             csv::format_real(a.loglik * m), csv::format_real(a.aic * m), csv::format_real(a.ibs * m),
                             csv::format_real(a.edf * m), csv::format_real(a.x2 * m), std::to_string(a.ok),
                             std::to_string(a.failed)});
    }
}

inline void cmd_simulate(RunConfig rc, const Overrides& ov, std::ostream& log) {
    apply_overrides(rc, ov);
    const auto& doc = rc.doc;
    const sim::HarnessConfig h = parse_harness(doc);
    const sim::HarnessResult res = sim::run_scenarios(h);

    const fs::path out = output_dir(rc);
    std::ostringstream results, datasets, failures, summary;
    sim::write_results_csv(results, res.rows);
    sim::write_datasets_csv(datasets, res.datasets);
    write_summary_csv(summary, res.rows);
    csv::write_row(failures, {"scenario", "n", "rep", "model", "error"});
    std::size_t failed = 0;
    for (const auto& r : res.rows) {
        if (r.error.empty()) continue;
        ++failed;
        csv::write_row(failures, {sim::to_string(r.scenario), std::to_string(r.n), std::to_string(r.rep + 1),
                                  sim::to_string(r.model), r.error});
    }
    write_text(out / "results.csv", results.str());
    write_text(out / "datasets.csv", datasets.str());
    write_text(out / "summary.csv", summary.str());
    write_text(out / "failures.csv", failures.str());
    json rates = json::object();
    for (const auto& [s, rate] : res.censoring_rates) rates[sim::to_string(s)] = rate;
    write_text(out / "censoring.json", rates.dump(2) + "\n");
    write_manifest(out, "simulate", doc, {},
                   {"results.csv", "datasets.csv", "summary.csv", "failures.csv", "censoring.json"});
    log << res.rows.size() << " result rows, " << failed << " failed fits\n";
}

} // namespace pamm::cli
