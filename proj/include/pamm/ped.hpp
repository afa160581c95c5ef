#pragma once

// Survival data model and the piecewise exponential data (PED) transform.
//
// A subject observed until t_i is split into one row per interval
// (kappa_{j-1}, kappa_j] it was at risk in. Each row carries the time at risk
// (exposure), its logarithm (the Poisson offset) and the interval event
// indicator delta, which is 1 only in the interval containing t_i and only for
// subjects whose observation ended in an event.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "pamm/csv.hpp"
#include "pamm/error.hpp"

namespace pamm {

struct Factor {
    std::string name;
    std::vector<std::string> levels;

    std::size_t level_index(const std::string& label) const {
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (levels[i] == label) return i;
        throw InputError("unknown level '" + label + "' of factor '" + name + "'");
    }
};

// Column layout shared by every record of a dataset. Numeric covariates and
// categorical factors are stored positionally in the records.
struct Schema {
    std::vector<std::string> covariates;
    std::vector<Factor> factors;
    std::vector<std::string> group_levels;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t covariate_index(const std::string& name) const {
        for (std::size_t i = 0; i < covariates.size(); ++i)
            if (covariates[i] == name) return i;
        return npos;
    }
    std::size_t factor_index(const std::string& name) const {
        for (std::size_t i = 0; i < factors.size(); ++i)
            if (factors[i].name == name) return i;
        return npos;
    }
    std::size_t group_index(const std::string& label) const {
        for (std::size_t i = 0; i < group_levels.size(); ++i)
            if (group_levels[i] == label) return i;
        throw InputError("unknown group level '" + label + "'");
    }

    bool operator==(const Schema& o) const {
        if (covariates != o.covariates || group_levels != o.group_levels ||
            factors.size() != o.factors.size())
            return false;
        for (std::size_t i = 0; i < factors.size(); ++i)
            if (factors[i].name != o.factors[i].name || factors[i].levels != o.factors[i].levels)
                return false;
        return true;
    }
};

struct SurvivalRecord {
    std::string id;
    double time = 0.0;  // min(T, C)
    bool event = false; // observation ended in an event
    std::vector<double> covariates;   // aligned with Schema::covariates
    std::vector<std::string> factors; // aligned with Schema::factors
    std::string group;
};

struct SurvivalData {
    Schema schema;
    std::vector<SurvivalRecord> records;

    // Checks positional alignment and level membership of every record.
    void validate() const {
        for (const auto& r : records) {
            if (r.covariates.size() != schema.covariates.size())
                throw InputError("record '" + r.id + "' has wrong covariate count");
            if (r.factors.size() != schema.factors.size())
                throw InputError("record '" + r.id + "' has wrong factor count");
            for (std::size_t k = 0; k < r.factors.size(); ++k)
                (void)schema.factors[k].level_index(r.factors[k]);
            for (double v : r.covariates)
                if (!std::isfinite(v)) throw InputError("record '" + r.id + "' has a missing covariate");
            (void)schema.group_index(r.group);
        }
    }
};

// Interval boundaries 0 = kappa_0 < kappa_1 < ... < kappa_J.
class CutPoints {
public:
    CutPoints() = default;

    explicit CutPoints(std::vector<double> kappas) : kappas_(std::move(kappas)) {
        if (kappas_.size() < 2) throw InputError("cut points need at least one interval");
        if (kappas_.front() != 0.0) throw InputError("cut points must start at 0");
        for (std::size_t j = 1; j < kappas_.size(); ++j)
            if (!(kappas_[j] > kappas_[j - 1]))
                throw InputError("cut points must be strictly increasing");
    }

    const std::vector<double>& kappas() const { return kappas_; }
    std::size_t intervals() const { return kappas_.empty() ? 0 : kappas_.size() - 1; }
    double start(std::size_t j) const { return kappas_[j - 1]; } // j is 1-based
    double end(std::size_t j) const { return kappas_[j]; }
    double horizon() const { return kappas_.back(); }

    // 1-based index j with t in (kappa_{j-1}, kappa_j]. t = 0 maps to 1.
    std::size_t interval_of(double t) const {
        if (t < 0.0 || t > horizon()) throw InputError("time outside (0, kappa_J]");
        auto it = std::lower_bound(kappas_.begin() + 1, kappas_.end(), t);
        return static_cast<std::size_t>(it - kappas_.begin());
    }

    bool operator==(const CutPoints&) const = default;

private:
    std::vector<double> kappas_;
};

enum class TimeConvention { End, Mid };

inline double representative_time(const CutPoints& cuts, std::size_t j, TimeConvention conv) {
    return conv == TimeConvention::End ? cuts.end(j) : 0.5 * (cuts.start(j) + cuts.end(j));
}

inline std::string to_string(TimeConvention c) { return c == TimeConvention::End ? "end" : "mid"; }

inline TimeConvention parse_time_convention(const std::string& s) {
    if (s == "end") return TimeConvention::End;
    if (s == "mid") return TimeConvention::Mid;
    throw InputError("unknown t convention '" + s + "' (expected end|mid)");
}

struct UniqueTimes {};
struct ExplicitCuts {
    std::vector<double> kappas;
};
struct EquidistantCuts {
    std::size_t intervals = 0;
};
using CutStrategy = std::variant<UniqueTimes, ExplicitCuts, EquidistantCuts>;

inline CutPoints make_cut_points(const std::vector<SurvivalRecord>& records, const CutStrategy& strategy) {
    if (records.empty()) throw InputError("make_cut_points: empty dataset");
    double tmax = 0.0;
    for (const auto& r : records) tmax = std::max(tmax, r.time);

    if (std::holds_alternative<UniqueTimes>(strategy)) {
        std::vector<double> k{0.0};
        for (const auto& r : records)
            if (r.time > 0.0) k.push_back(r.time);
        std::sort(k.begin(), k.end());
        k.erase(std::unique(k.begin(), k.end()), k.end());
        return CutPoints(std::move(k));
    }
    if (const auto* e = std::get_if<EquidistantCuts>(&strategy)) {
        if (e->intervals == 0) throw InputError("equidistant cuts need J >= 1");
        if (!(tmax > 0.0)) throw InputError("equidistant cuts need a positive maximum time");
        std::vector<double> k(e->intervals + 1);
        for (std::size_t j = 0; j <= e->intervals; ++j)
            k[j] = tmax * static_cast<double>(j) / static_cast<double>(e->intervals);
        k.back() = tmax;
        return CutPoints(std::move(k));
    }
    auto k = std::get<ExplicitCuts>(strategy).kappas;
    if (k.empty()) throw InputError("explicit cut list is empty");
    if (k.front() < 0.0) throw InputError("explicit cut points must be nonnegative");
    if (k.front() > 0.0) k.insert(k.begin(), 0.0);
    CutPoints cuts(std::move(k));
    if (cuts.horizon() < tmax)
        throw InputError("explicit cut points end before the largest observed time");
    return cuts;
}

struct PedRow {
    std::string id;
    std::size_t interval = 0; // 1-based j
    double t_start = 0.0;
    double t_end = 0.0;
    double t_rep = 0.0;
    double exposure = 0.0;
    double offset = 0.0;
    int delta = 0;
    std::vector<double> covariates;
    std::vector<std::string> factors;
    std::string group;
};

struct PedDataset {
    std::vector<PedRow> rows;
    CutPoints cuts;
    Schema schema;
    TimeConvention convention = TimeConvention::End;
};

// Appends the PED rows of one subject.
inline void append_subject_rows(const SurvivalRecord& r, const CutPoints& cuts, TimeConvention conv,
                                std::vector<PedRow>& out) {
    if (!(r.time > 0.0)) throw InputError("subject '" + r.id + "' has nonpositive time");
    if (r.time > cuts.horizon()) throw InputError("subject '" + r.id + "' time exceeds last cut point");
    const std::size_t last = cuts.interval_of(r.time);
    for (std::size_t j = 1; j <= last; ++j) {
        PedRow row;
        row.id = r.id;
        row.interval = j;
        row.t_start = cuts.start(j);
        row.t_end = cuts.end(j);
        row.t_rep = representative_time(cuts, j, conv);
        row.exposure = std::min(r.time, cuts.end(j)) - cuts.start(j);
        row.offset = std::log(row.exposure);
        row.delta = (j == last && r.event) ? 1 : 0;
        row.covariates = r.covariates;
        row.factors = r.factors;
        row.group = r.group;
        out.push_back(std::move(row));
    }
}

inline PedDataset as_ped(const SurvivalData& data, const CutPoints& cuts, TimeConvention conv) {
    PedDataset ped;
    ped.cuts = cuts;
    ped.schema = data.schema;
    ped.convention = conv;
    for (const auto& r : data.records) append_subject_rows(r, cuts, conv, ped.rows);
    return ped;
}

// Recovers (time, event) per subject id from PED rows, in first-seen order.
inline std::vector<SurvivalRecord> reconstruct_subjects(const PedDataset& ped) {
    std::vector<SurvivalRecord> out;
    std::map<std::string, std::size_t> where;
    for (const auto& row : ped.rows) {
        auto [it, inserted] = where.try_emplace(row.id, out.size());
        if (inserted) {
            SurvivalRecord r;
            r.id = row.id;
            r.covariates = row.covariates;
            r.factors = row.factors;
            r.group = row.group;
            out.push_back(std::move(r));
        }
        auto& r = out[it->second];
        r.time = row.t_start + row.exposure;
        r.event = row.delta == 1;
    }
    return out;
}

inline void write_ped_csv(std::ostream& out, const PedDataset& ped) {
    std::vector<std::string> header{"id", "interval", "t_start", "t_end", "t_rep", "exposure", "offset", "delta"};
    for (const auto& c : ped.schema.covariates) header.push_back(c);
    for (const auto& f : ped.schema.factors) header.push_back(f.name);
    header.push_back("group");
    csv::write_row(out, header);
    std::vector<std::string> fields;
    for (const auto& r : ped.rows) {
        fields = {r.id,
                  std::to_string(r.interval),
                  csv::format_real(r.t_start),
                  csv::format_real(r.t_end),
                  csv::format_real(r.t_rep),
                  csv::format_real(r.exposure),
                  csv::format_real(r.offset),
                  std::to_string(r.delta)};
        for (double v : r.covariates) fields.push_back(csv::format_real(v));
        for (const auto& f : r.factors) fields.push_back(f);
        fields.push_back(r.group);
        csv::write_row(out, fields);
    }
}

// Reads a PED CSV. Middle columns are numeric covariates unless named in
// `factor_names`. Level orders come from `declared_levels` when given, else
// sorted. Cut points are reconstructed from the interval boundaries present;
// the time convention is inferred from t_rep.
inline PedDataset read_ped_csv(std::istream& in, const std::vector<std::string>& factor_names = {},
                               const std::map<std::string, std::vector<std::string>>& declared_levels = {}) {
    const auto table = csv::read(in);
    static const std::vector<std::string> fixed{"id", "interval", "t_start", "t_end", "t_rep", "exposure", "offset", "delta"};
    if (table.header.size() < fixed.size() + 1) throw InputError("PED csv: too few columns");
    for (std::size_t i = 0; i < fixed.size(); ++i)
        if (table.header[i] != fixed[i]) throw InputError("PED csv: expected column '" + fixed[i] + "'");
    if (table.header.back() != "group") throw InputError("PED csv: last column must be 'group'");

    PedDataset ped;
    std::vector<std::size_t> num_cols, fac_cols;
    for (std::size_t c = fixed.size(); c + 1 < table.header.size(); ++c) {
        const auto& name = table.header[c];
        if (std::find(factor_names.begin(), factor_names.end(), name) != factor_names.end()) {
            fac_cols.push_back(c);
            ped.schema.factors.push_back({name, {}});
        } else {
            num_cols.push_back(c);
            ped.schema.covariates.push_back(name);
        }
    }
    const std::size_t gcol = table.header.size() - 1;
    std::map<std::size_t, double> boundaries;
    for (const auto& f : table.rows) {
        PedRow r;
        r.id = f[0];
        const double jv = csv::parse_real(f[1], "interval");
        if (jv < 1 || jv != std::floor(jv)) throw InputError("PED csv: bad interval index");
        r.interval = static_cast<std::size_t>(jv);
        r.t_start = csv::parse_real(f[2], "t_start");
        r.t_end = csv::parse_real(f[3], "t_end");
        r.t_rep = csv::parse_real(f[4], "t_rep");
        r.exposure = csv::parse_real(f[5], "exposure");
        r.offset = csv::parse_real(f[6], "offset");
        const double d = csv::parse_real(f[7], "delta");
        if (d != 0.0 && d != 1.0) throw InputError("PED csv: delta must be 0 or 1");
        r.delta = static_cast<int>(d);
        if (!(r.exposure > 0.0)) throw InputError("PED csv: nonpositive exposure");
        for (auto c : num_cols) r.covariates.push_back(csv::parse_real(f[c], table.header[c]));
        for (auto c : fac_cols) r.factors.push_back(f[c]);
        r.group = f[gcol];
        boundaries[r.interval - 1] = r.t_start;
        boundaries[r.interval] = r.t_end;
        ped.rows.push_back(std::move(r));
    }
    std::vector<double> k;
    std::size_t expect = 0;
    for (const auto& [j, v] : boundaries) {
        if (j != expect++) throw InputError("PED csv: interval sequence has gaps");
        k.push_back(v);
    }
    ped.cuts = CutPoints(std::move(k));
    ped.convention = TimeConvention::End;
    for (const auto& r : ped.rows)
        if (r.t_rep != r.t_end) ped.convention = TimeConvention::Mid;

    auto levels_for = [&](const std::string& name, std::vector<std::string> seen) {
        if (auto it = declared_levels.find(name); it != declared_levels.end()) {
            for (const auto& s : seen)
                if (std::find(it->second.begin(), it->second.end(), s) == it->second.end())
                    throw InputError("PED csv: level '" + s + "' of '" + name + "' not declared");
            return it->second;
        }
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        return seen;
    };
    for (std::size_t k2 = 0; k2 < ped.schema.factors.size(); ++k2) {
        std::vector<std::string> seen;
        for (const auto& r : ped.rows) seen.push_back(r.factors[k2]);
        ped.schema.factors[k2].levels = levels_for(ped.schema.factors[k2].name, seen);
    }
    std::vector<std::string> groups;
    for (const auto& r : ped.rows) groups.push_back(r.group);
    ped.schema.group_levels = levels_for("group", groups);
    return ped;
}

} // namespace pamm
