#pragma once

// Design assembly. Term bases are evaluated into a sparse "raw" matrix whose
// rows carry only the few nonzero B-spline and indicator entries; centering of
// the baseline is applied through a small coefficient transform, so that
// X = raw * transform without ever densifying X.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pamm/basis.hpp"
#include "pamm/error.hpp"
#include "pamm/model_spec.hpp"
#include "pamm/ped.hpp"
#include "pamm/product_form.hpp"

namespace pamm {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct TermColumns {
    std::string label;
    TermKind kind = TermKind::Intercept;
    Eigen::Index begin = 0;
    Eigen::Index count = 0;
    bool penalized = false;
};

struct DesignPenalty {
    PenaltyMatrix penalty; // term-block sized
    std::string label;
    std::size_t term = 0;  // index into Design::columns
    Eigen::Index begin = 0;
};

struct Design {
    SparseRowMatrix raw;
    Eigen::MatrixXd transform; // p x p; empty means identity
    std::vector<DesignPenalty> penalties;
    Eigen::VectorXd offset;
    Eigen::VectorXd response;
    std::vector<TermColumns> columns;
    ProductForm product; // optional fast path, same matrix as raw

    Eigen::Index rows() const { return raw.rows(); }
    Eigen::Index cols() const { return raw.cols(); }
    bool has_transform() const { return transform.size() != 0; }

    Eigen::VectorXd raw_coefficients(const Eigen::VectorXd& beta) const {
        return has_transform() ? Eigen::VectorXd(transform * beta) : beta;
    }

    Eigen::VectorXd linear_predictor(const Eigen::VectorXd& beta) const {
        return product.empty() ? Eigen::VectorXd(raw * raw_coefficients(beta)) : product.times(raw_coefficients(beta));
    }

    // X' v
    Eigen::VectorXd transpose_times(const Eigen::VectorXd& v) const {
        Eigen::VectorXd g = product.empty() ? Eigen::VectorXd(raw.transpose() * v) : product.transpose_times(v, cols());
        return has_transform() ? Eigen::VectorXd(transform.transpose() * g) : g;
    }

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd X = Eigen::MatrixXd(raw);
        return has_transform() ? Eigen::MatrixXd(X * transform) : X;
    }

    Eigen::MatrixXd embedded_penalty(std::size_t k) const {
        const auto& P = penalties[k];
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(cols(), cols());
        S.block(P.begin, P.begin, P.penalty.dimension(), P.penalty.dimension()) = P.penalty.matrix;
        return S;
    }

    Eigen::MatrixXd penalty_sum(const Eigen::VectorXd& lambdas) const {
        if (static_cast<std::size_t>(lambdas.size()) != penalties.size())
            throw InputError("expected " + std::to_string(penalties.size()) + " smoothing parameters");
        Eigen::MatrixXd S = Eigen::MatrixXd::Zero(cols(), cols());
        for (std::size_t k = 0; k < penalties.size(); ++k) {
            const auto& P = penalties[k];
            const auto d = P.penalty.dimension();
            S.block(P.begin, P.begin, d, d) += lambdas[static_cast<Eigen::Index>(k)] * P.penalty.matrix;
        }
        return S;
    }

    // beta' S_lambda beta through the penalty roots; unlike the quadratic form
    // of the assembled matrix this stays accurate for very large lambdas.
    double penalty_value(const Eigen::VectorXd& lambdas, const Eigen::VectorXd& beta) const {
        double v = 0.0;
        for (std::size_t k = 0; k < penalties.size(); ++k) {
            const auto& P = penalties[k];
            v += lambdas[static_cast<Eigen::Index>(k)] *
                 (P.penalty.root * beta.segment(P.begin, P.penalty.dimension())).squaredNorm();
        }
        return v;
    }

    Eigen::VectorXd penalty_gradient(const Eigen::VectorXd& lambdas, const Eigen::VectorXd& beta) const {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(beta.size());
        for (std::size_t k = 0; k < penalties.size(); ++k) {
            const auto& P = penalties[k];
            const auto d = P.penalty.dimension();
            g.segment(P.begin, d) += lambdas[static_cast<Eigen::Index>(k)] *
                                     (P.penalty.root.transpose() * (P.penalty.root * beta.segment(P.begin, d)));
        }
        return g;
    }

    // Reorders rows so that new row k is old row order[k].
    void permute_rows(const std::vector<Eigen::Index>& order) {
        const auto n = static_cast<Eigen::Index>(order.size());
        if (n != rows()) throw InputError("permute_rows: length mismatch");
        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> perm(n);
        for (Eigen::Index k = 0; k < n; ++k) perm.indices()[order[static_cast<std::size_t>(k)]] = static_cast<int>(k);
        raw = perm * raw;
        offset = perm * offset;
        response = perm * response;
        if (!product.empty()) product.permute_rows(order);
    }

    // Columns covered by at least one penalty.
    std::vector<Eigen::Index> penalized_columns() const {
        std::vector<Eigen::Index> out;
        for (const auto& c : columns)
            if (c.penalized)
                for (Eigen::Index j = 0; j < c.count; ++j) out.push_back(c.begin + j);
        return out;
    }

    // Builds a design from a dense matrix; one unpenalized term per column
    // unless `columns` is given.
    static Design from_dense(const Eigen::MatrixXd& X, Eigen::VectorXd offset, Eigen::VectorXd response,
                             std::vector<DesignPenalty> penalties = {}, std::vector<TermColumns> columns = {}) {
        Design d;
        d.raw = X.sparseView(0.0, 0.0);
        d.raw.makeCompressed();
        d.offset = std::move(offset);
        d.response = std::move(response);
        if (columns.empty())
            for (Eigen::Index j = 0; j < X.cols(); ++j)
                columns.push_back({"x" + std::to_string(j + 1), TermKind::Linear, j, 1, false});
        d.columns = std::move(columns);
        d.penalties = std::move(penalties);
        for (const auto& p : d.penalties) d.columns.at(p.term).penalized = true;
        if (d.offset.size() != X.rows() || d.response.size() != X.rows())
            throw InputError("design: offset/response length mismatch");
        return d;
    }
};

// A model term bound to a dataset: name indices, knots and centering fixed.
struct ResolvedTerm {
    Term term;
    std::string label;
    Eigen::Index begin = 0;
    Eigen::Index count = 0;
    std::size_t covariate = Schema::npos; // numeric variable or by-variable
    std::size_t factor = Schema::npos;    // Factor terms on a schema factor
    bool on_group = false;                // Factor term on the grouping variable
    std::vector<std::string> levels;      // factor or group levels
    std::size_t reference = 0;
    KnotVector knots;
    Eigen::VectorXd center; // Smooth centered: means of kept raw columns
    std::vector<LabeledPenalty> penalties;
};

struct ResolvedModel {
    ModelSpec spec;
    Schema schema;
    CutPoints cuts;
    std::vector<ResolvedTerm> terms;
    Eigen::Index p = 0;
    Eigen::Index intercept_column = 0;

    // Appends the nonzero raw entries of one row.
    void raw_row(const PedRow& row, std::vector<std::pair<Eigen::Index, double>>& out) const {
        double bvals[32];
        for (const auto& rt : terms) {
            const auto& t = rt.term;
            const double by = rt.covariate == Schema::npos ? 1.0 : row.covariates[rt.covariate];
            switch (t.kind) {
            case TermKind::Intercept:
                out.emplace_back(rt.begin, 1.0);
                break;
            case TermKind::Linear:
                out.emplace_back(rt.begin, by);
                break;
            case TermKind::Factor: {
                const auto& label = rt.on_group ? row.group : row.factors[rt.factor];
                std::size_t lev = levels_index(rt.levels, label);
                if (lev == rt.reference) break;
                out.emplace_back(rt.begin + static_cast<Eigen::Index>(lev < rt.reference ? lev : lev - 1), 1.0);
                break;
            }
            case TermKind::Smooth: {
                const int first = bspline_nonzero(row.t_rep, rt.knots, bvals);
                for (int k = 0; k <= rt.knots.degree(); ++k) {
                    const int col = first + k;
                    if (col < rt.count && bvals[k] != 0.0) out.emplace_back(rt.begin + col, bvals[k]);
                }
                break;
            }
            case TermKind::VaryingCoefficient: {
                if (by == 0.0) break;
                const int first = bspline_nonzero(row.t_rep, rt.knots, bvals);
                for (int k = 0; k <= rt.knots.degree(); ++k)
                    if (bvals[k] != 0.0) out.emplace_back(rt.begin + first + k, by * bvals[k]);
                break;
            }
            case TermKind::Fre: {
                if (by == 0.0) break;
                const auto g = static_cast<Eigen::Index>(levels_index(rt.levels, row.group));
                const int first = bspline_nonzero(row.t_rep, rt.knots, bvals);
                const Eigen::Index dim = rt.knots.dimension();
                for (int k = 0; k <= rt.knots.degree(); ++k)
                    if (bvals[k] != 0.0) out.emplace_back(rt.begin + g * dim + first + k, by * bvals[k]);
                break;
            }
            case TermKind::RandomEffect: {
                if (by == 0.0) break;
                const auto g = static_cast<Eigen::Index>(levels_index(rt.levels, row.group));
                out.emplace_back(rt.begin + g, by);
                break;
            }
            }
        }
    }

    // Product form of raw_matrix(rows). Consecutive rows sharing subject data
    // form one subject; rows of one interval must share t_rep. Returns an
    // empty form when the rows do not have that structure.
    ProductForm product_form(const std::vector<PedRow>& rows) const {
        ProductForm pf;
        const auto nt = terms.size();
        std::vector<Eigen::Index> a_off(nt, 0), b_off(nt, 0);
        Eigen::Index q = 1, r = 1; // feature 0 is the constant in both
        for (std::size_t k = 0; k < nt; ++k) {
            const auto& rt = terms[k];
            switch (rt.term.kind) {
            case TermKind::Intercept: break;
            case TermKind::Linear: a_off[k] = q++; break;
            case TermKind::Factor: a_off[k] = q; q += rt.count; break;
            case TermKind::Smooth: b_off[k] = r; r += rt.count; break;
            case TermKind::VaryingCoefficient:
                a_off[k] = q++;
                b_off[k] = r;
                r += rt.count;
                break;
            case TermKind::Fre:
                a_off[k] = q;
                q += static_cast<Eigen::Index>(rt.levels.size());
                b_off[k] = r;
                r += rt.knots.dimension();
                break;
            case TermKind::RandomEffect: a_off[k] = q; q += rt.count; break;
            }
        }
        pf.column = Eigen::MatrixXi::Constant(q, r, -1);
        for (std::size_t k = 0; k < nt; ++k) {
            const auto& rt = terms[k];
            for (Eigen::Index c = 0; c < rt.count; ++c) {
                Eigen::Index a = 0, b = 0;
                switch (rt.term.kind) {
                case TermKind::Intercept: break;
                case TermKind::Linear: a = a_off[k]; break;
                case TermKind::Factor: a = a_off[k] + c; break;
                case TermKind::Smooth: b = b_off[k] + c; break;
                case TermKind::VaryingCoefficient: a = a_off[k]; b = b_off[k] + c; break;
                case TermKind::Fre: {
                    const Eigen::Index dim = rt.knots.dimension();
                    a = a_off[k] + c / dim;
                    b = b_off[k] + c % dim;
                    break;
                }
                case TermKind::RandomEffect: a = a_off[k] + c; break;
                }
                pf.column(a, b) = static_cast<int>(rt.begin + c);
            }
        }

        auto same_subject = [](const PedRow& x, const PedRow& y) {
            return x.id == y.id && x.covariates == y.covariates && x.factors == y.factors && x.group == y.group;
        };
        std::vector<Eigen::Triplet<double>> s_trip, t_trip;
        std::vector<double> t_rep(cuts.intervals() + 1, std::numeric_limits<double>::quiet_NaN());
        double bvals[32];
        Eigen::Index subjects = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& row = rows[i];
            if (i == 0 || !same_subject(rows[i - 1], row)) {
                s_trip.emplace_back(subjects, 0, 1.0);
                for (std::size_t k = 0; k < nt; ++k) {
                    const auto& rt = terms[k];
                    const double by = rt.covariate == Schema::npos ? 1.0 : row.covariates[rt.covariate];
                    switch (rt.term.kind) {
                    case TermKind::Linear:
                    case TermKind::VaryingCoefficient:
                        if (by != 0.0) s_trip.emplace_back(subjects, a_off[k], by);
                        break;
                    case TermKind::Factor: {
                        const auto& label = rt.on_group ? row.group : row.factors[rt.factor];
                        const std::size_t lev = levels_index(rt.levels, label);
                        if (lev != rt.reference)
                            s_trip.emplace_back(subjects, a_off[k] + static_cast<Eigen::Index>(lev < rt.reference ? lev : lev - 1), 1.0);
                        break;
                    }
                    case TermKind::Fre:
                    case TermKind::RandomEffect:
                        if (by != 0.0)
                            s_trip.emplace_back(subjects, a_off[k] + static_cast<Eigen::Index>(levels_index(rt.levels, row.group)), by);
                        break;
                    default: break;
                    }
                }
                ++subjects;
            }
            if (row.interval < 1 || row.interval > cuts.intervals()) return {};
            auto& tr = t_rep[row.interval];
            if (std::isnan(tr)) {
                tr = row.t_rep;
                const auto j = static_cast<Eigen::Index>(row.interval - 1);
                t_trip.emplace_back(j, 0, 1.0);
                for (std::size_t k = 0; k < nt; ++k) {
                    const auto& rt = terms[k];
                    const auto kind = rt.term.kind;
                    if (kind != TermKind::Smooth && kind != TermKind::VaryingCoefficient && kind != TermKind::Fre) continue;
                    const int first = bspline_nonzero(row.t_rep, rt.knots, bvals);
                    const int limit = kind == TermKind::Smooth ? static_cast<int>(rt.count) : rt.knots.dimension();
                    for (int d = 0; d <= rt.knots.degree(); ++d)
                        if (first + d < limit && bvals[d] != 0.0) t_trip.emplace_back(j, b_off[k] + first + d, bvals[d]);
                }
            } else if (tr != row.t_rep) {
                return {};
            }
            pf.row_subject.push_back(subjects - 1);
            pf.row_time.push_back(static_cast<Eigen::Index>(row.interval - 1));
        }
        pf.subject.resize(subjects, q);
        pf.subject.setFromTriplets(s_trip.begin(), s_trip.end());
        pf.subject.makeCompressed();
        pf.time.resize(static_cast<Eigen::Index>(cuts.intervals()), r);
        pf.time.setFromTriplets(t_trip.begin(), t_trip.end());
        pf.time.makeCompressed();
        pf.index_by_time();
        pf.index_subject_pairs();
        pf.index_features();
        return pf;
    }

    // X = raw * transform; nontrivial only for a centered baseline.
    Eigen::MatrixXd transform() const {
        Eigen::MatrixXd T;
        for (const auto& rt : terms) {
            if (rt.center.size() == 0) continue;
            if (T.size() == 0) T = Eigen::MatrixXd::Identity(p, p);
            for (Eigen::Index d = 0; d < rt.count; ++d) T(intercept_column, rt.begin + d) = -rt.center[d];
        }
        return T;
    }

    SparseRowMatrix raw_matrix(const std::vector<PedRow>& rows) const {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(rows.size() * 12);
        std::vector<std::pair<Eigen::Index, double>> entries;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            entries.clear();
            raw_row(rows[r], entries);
            for (const auto& [c, v] : entries) trip.emplace_back(static_cast<Eigen::Index>(r), c, v);
        }
        SparseRowMatrix raw(static_cast<Eigen::Index>(rows.size()), p);
        raw.setFromTriplets(trip.begin(), trip.end());
        raw.makeCompressed();
        return raw;
    }

    // Design of any PED sharing this model's schema and cut points.
    Design design(const PedDataset& ped) const {
        if (!(ped.schema == schema)) throw InputError("design: dataset schema differs from the model's");
        Design d;
        d.raw = raw_matrix(ped.rows);
        d.product = product_form(ped.rows);
        d.transform = transform();
        const auto n = static_cast<Eigen::Index>(ped.rows.size());
        d.offset.resize(n);
        d.response.resize(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            d.offset[r] = ped.rows[static_cast<std::size_t>(r)].offset;
            d.response[r] = ped.rows[static_cast<std::size_t>(r)].delta;
        }
        // interval-major row order lets the product form stream through rows
        if (!d.product.empty()) d.permute_rows(d.product.by_time);
        for (std::size_t k = 0; k < terms.size(); ++k) {
            const auto& rt = terms[k];
            d.columns.push_back({rt.label, rt.term.kind, rt.begin, rt.count, !rt.penalties.empty()});
            for (const auto& lp : rt.penalties)
                d.penalties.push_back({lp.penalty, rt.label + "/" + lp.label, k, rt.begin});
        }
        return d;
    }

    // Column labels in coefficient order.
    std::vector<std::string> coefficient_names() const {
        std::vector<std::string> out;
        for (const auto& rt : terms) {
            switch (rt.term.kind) {
            case TermKind::Intercept:
            case TermKind::Linear: out.push_back(rt.label); break;
            case TermKind::Factor:
                for (std::size_t l = 0; l < rt.levels.size(); ++l)
                    if (l != rt.reference) out.push_back(rt.label + ": " + rt.levels[l]);
                break;
            case TermKind::RandomEffect:
                for (const auto& g : rt.levels) out.push_back(rt.label + "." + g);
                break;
            case TermKind::Fre:
                for (const auto& g : rt.levels)
                    for (int b = 0; b < rt.knots.dimension(); ++b)
                        out.push_back(rt.label + "." + g + "." + std::to_string(b + 1));
                break;
            default:
                for (Eigen::Index b = 0; b < rt.count; ++b) out.push_back(rt.label + "." + std::to_string(b + 1));
            }
        }
        return out;
    }

    static std::size_t levels_index(const std::vector<std::string>& levels, const std::string& label) {
        for (std::size_t i = 0; i < levels.size(); ++i)
            if (levels[i] == label) return i;
        throw InputError("unknown level '" + label + "'");
    }
};

// Penalties of a term whose knots, levels and centering are already fixed.
inline void attach_penalties(ResolvedTerm& rt) {
    rt.penalties.clear();
    const int order = rt.term.spline.diff_order;
    switch (rt.term.kind) {
    case TermKind::Smooth: {
        const int dim = rt.knots.dimension();
        if (rt.center.size() == 0) {
            rt.penalties.push_back({difference_penalty(dim, order), "smooth"});
            break;
        }
        rt.penalties.push_back({centered_difference_penalty(dim, order), "smooth"});
        break;
    }
    case TermKind::VaryingCoefficient:
        rt.penalties.push_back({difference_penalty(rt.knots.dimension(), order), "smooth"});
        break;
    case TermKind::Fre: {
        const int ng = static_cast<int>(rt.levels.size());
        rt.penalties.push_back({repeated_difference_penalty(rt.knots.dimension(), order, ng), "smooth"});
        rt.penalties.push_back({ridge_penalty(ng * rt.knots.dimension()), "shrink"});
        break;
    }
    case TermKind::RandomEffect:
        rt.penalties.push_back({ridge_penalty(static_cast<int>(rt.levels.size())), "ridge"});
        break;
    default: break;
    }
}

// Fixes knots, levels and centering from the training PED.
inline ResolvedModel resolve_model(const PedDataset& ped, const ModelSpec& spec) {
    spec.validate(ped.schema);
    if (spec.t_convention != ped.convention)
        throw InputError("model t convention '" + to_string(spec.t_convention) + "' differs from the data's '" +
                         to_string(ped.convention) + "'");
    if (ped.rows.empty()) throw InputError("design: empty PED dataset");
    ResolvedModel m;
    m.spec = spec;
    m.schema = ped.schema;
    m.cuts = ped.cuts;

    std::vector<double> t_values;
    t_values.reserve(ped.rows.size());
    for (const auto& r : ped.rows) t_values.push_back(r.t_rep);
    auto make_knots = [&](const SplineOptions& o) {
        const double lo = 0.0, hi = ped.cuts.horizon();
        return o.placement == KnotPlacement::Equidistant
                   ? KnotVector::equidistant(o.degree, static_cast<std::size_t>(o.interior_knots), lo, hi)
                   : KnotVector::quantile(o.degree, static_cast<std::size_t>(o.interior_knots), t_values, lo, hi);
    };

    Eigen::Index col = 0;
    for (const auto& t : spec.terms) {
        ResolvedTerm rt;
        rt.term = t;
        rt.label = t.display_label();
        rt.begin = col;
        if (!t.covariate.empty() && t.kind != TermKind::Factor) rt.covariate = ped.schema.covariate_index(t.covariate);
        switch (t.kind) {
        case TermKind::Intercept:
            rt.count = 1;
            m.intercept_column = col;
            break;
        case TermKind::Linear: rt.count = 1; break;
        case TermKind::Factor:
            rt.on_group = t.covariate == "group";
            if (!rt.on_group) rt.factor = ped.schema.factor_index(t.covariate);
            rt.levels = rt.on_group ? ped.schema.group_levels : ped.schema.factors[rt.factor].levels;
            rt.reference = t.reference.empty() ? 0 : ResolvedModel::levels_index(rt.levels, t.reference);
            rt.count = static_cast<Eigen::Index>(rt.levels.size()) - 1;
            break;
        case TermKind::Smooth: {
            rt.knots = make_knots(t.spline);
            const Eigen::VectorXd tv = Eigen::Map<const Eigen::VectorXd>(t_values.data(), static_cast<Eigen::Index>(t_values.size()));
            // centering means over training rows, without materializing the basis
            const int dim = rt.knots.dimension();
            if (t.centered) {
                Eigen::VectorXd sums = Eigen::VectorXd::Zero(dim);
                double vals[32];
                for (Eigen::Index r = 0; r < tv.size(); ++r) {
                    const int first = bspline_nonzero(tv[r], rt.knots, vals);
                    for (int k = 0; k <= rt.knots.degree(); ++k) sums[first + k] += vals[k];
                }
                rt.center = sums.head(dim - 1) / static_cast<double>(tv.size());
                rt.count = dim - 1;
            } else {
                rt.count = dim;
            }
            break;
        }
        case TermKind::VaryingCoefficient:
            rt.knots = make_knots(t.spline);
            rt.count = rt.knots.dimension();
            break;
        case TermKind::Fre:
            rt.knots = make_knots(t.spline);
            rt.levels = ped.schema.group_levels;
            rt.count = static_cast<Eigen::Index>(rt.levels.size()) * rt.knots.dimension();
            break;
        case TermKind::RandomEffect:
            rt.levels = ped.schema.group_levels;
            rt.count = static_cast<Eigen::Index>(rt.levels.size());
            break;
        }
        attach_penalties(rt);
        col += rt.count;
        m.terms.push_back(std::move(rt));
    }
    m.p = col;
    return m;
}

// Smallest over largest singular value of X stacked with scaled penalty
// roots, i.e. identifiability of the penalized model. Penalties are scaled to
// the Frobenius norm of their term's cross-product block so that a ridge on a
// block collinear with the intercept counts as identifying it.
inline double design_condition(const Design& d) {
    const Eigen::Index p = d.cols();
    if (p == 0) return 1.0;
    // R factor of X by stacked chunked QR
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(0, p);
    auto absorb = [&](const Eigen::MatrixXd& rows) {
        Eigen::MatrixXd block(R.rows() + rows.rows(), p);
        block.topRows(R.rows()) = R;
        block.bottomRows(rows.rows()) = rows;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(block);
        const Eigen::Index k = std::min(block.rows(), p);
        R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    };
    const Eigen::Index chunk = 4096;
    if (!d.product.empty()) {
        const Eigen::MatrixXd reduced = d.product.reduced_rows(p);
        for (Eigen::Index r0 = 0; r0 < reduced.rows(); r0 += chunk) {
            const Eigen::Index nr = std::min(chunk, reduced.rows() - r0);
            absorb(d.has_transform() ? Eigen::MatrixXd(reduced.middleRows(r0, nr) * d.transform)
                                     : Eigen::MatrixXd(reduced.middleRows(r0, nr)));
        }
    } else {
        for (Eigen::Index r0 = 0; r0 < d.rows(); r0 += chunk) {
            const Eigen::Index nr = std::min(chunk, d.rows() - r0);
            Eigen::MatrixXd Xc = Eigen::MatrixXd(d.raw.middleRows(r0, nr));
            if (d.has_transform()) Xc = Xc * d.transform;
            absorb(Xc);
        }
    }
    std::vector<Eigen::MatrixXd> roots;
    Eigen::Index extra = 0;
    for (const auto& pen : d.penalties) {
        const auto dim = pen.penalty.dimension();
        const Eigen::MatrixXd Rb = R.middleCols(pen.begin, dim);
        const double target = (Rb.transpose() * Rb).norm();
        const double own = pen.penalty.matrix.norm();
        if (!(own > 0.0)) continue;
        const double scale = target > 0.0 ? target / own : 1.0;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pen.penalty.matrix);
        Eigen::MatrixXd root = Eigen::MatrixXd::Zero(dim, p);
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt() * std::sqrt(scale);
        root.middleCols(pen.begin, dim) = ev.asDiagonal() * es.eigenvectors().transpose();
        extra += dim;
        roots.push_back(std::move(root));
    }
    Eigen::MatrixXd stacked(R.rows() + extra, p);
    stacked.topRows(R.rows()) = R;
    Eigen::Index at = R.rows();
    for (const auto& r : roots) {
        stacked.middleRows(at, r.rows()) = r;
        at += r.rows();
    }
    if (stacked.rows() < p) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked);
    const auto& sv = svd.singularValues();
    return sv[0] > 0.0 ? sv[sv.size() - 1] / sv[0] : 0.0;
}

struct BuiltDesign {
    ResolvedModel model;
    Design design;
};

inline BuiltDesign build_design(const PedDataset& ped, const ModelSpec& spec, bool check_rank = true,
                                double rank_tol = 1e-8) {
    BuiltDesign out{resolve_model(ped, spec), {}};
    out.design = out.model.design(ped);
    if (check_rank) {
        const double cond = design_condition(out.design);
        if (!(cond > rank_tol))
            throw InputError("design is rank deficient after constraints (singular value ratio " +
                             std::to_string(cond) + ")");
    }
    return out;
}

} // namespace pamm
