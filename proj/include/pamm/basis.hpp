#pragma once

// Basis and penalty construction: B-splines with difference penalties
// (P-splines), one-hot group indicators with ridge penalties, and the row-wise
// tensor product that turns the two into a functional random effect, i.e. one
// penalized time curve per group.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pamm/error.hpp"

namespace pamm {

class KnotVector {
public:
    KnotVector() = default;

    KnotVector(int degree, std::vector<double> interior, double lower, double upper)
        : degree_(degree), interior_(std::move(interior)), lower_(lower), upper_(upper) {
        if (degree_ < 0) throw InputError("spline degree must be nonnegative");
        if (!(upper_ > lower_)) throw InputError("knot boundary must satisfy a < b");
        for (std::size_t i = 0; i < interior_.size(); ++i) {
            if (!(interior_[i] > lower_ && interior_[i] < upper_))
                throw InputError("interior knots must lie strictly inside the boundary");
            if (i > 0 && !(interior_[i] > interior_[i - 1]))
                throw InputError("interior knots must be strictly increasing");
        }
        full_.assign(static_cast<std::size_t>(degree_ + 1), lower_);
        full_.insert(full_.end(), interior_.begin(), interior_.end());
        full_.insert(full_.end(), static_cast<std::size_t>(degree_ + 1), upper_);
    }

    static KnotVector equidistant(int degree, std::size_t n_interior, double lower, double upper) {
        std::vector<double> in(n_interior);
        for (std::size_t k = 0; k < n_interior; ++k)
            in[k] = lower + (upper - lower) * static_cast<double>(k + 1) / static_cast<double>(n_interior + 1);
        return KnotVector(degree, std::move(in), lower, upper);
    }

    // Interior knots at equally spaced quantiles of the distinct values. Falls
    // back to equidistant placement when the quantiles collide.
    static KnotVector quantile(int degree, std::size_t n_interior, std::vector<double> values,
                               double lower, double upper) {
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        if (values.size() < n_interior + 2) return equidistant(degree, n_interior, lower, upper);
        std::vector<double> in(n_interior);
        const double last = static_cast<double>(values.size() - 1);
        for (std::size_t k = 0; k < n_interior; ++k) {
            const double h = last * static_cast<double>(k + 1) / static_cast<double>(n_interior + 1);
            const auto lo = static_cast<std::size_t>(std::floor(h));
            const auto hi = std::min(lo + 1, values.size() - 1);
            in[k] = values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
        }
        for (std::size_t k = 0; k < n_interior; ++k) {
            const bool inside = in[k] > lower && in[k] < upper;
            const bool increasing = k == 0 || in[k] > in[k - 1];
            if (!inside || !increasing) return equidistant(degree, n_interior, lower, upper);
        }
        return KnotVector(degree, std::move(in), lower, upper);
    }

    int degree() const { return degree_; }
    const std::vector<double>& interior() const { return interior_; }
    double lower() const { return lower_; }
    double upper() const { return upper_; }
    const std::vector<double>& full() const { return full_; }
    int dimension() const { return static_cast<int>(interior_.size()) + degree_ + 1; }

private:
    int degree_ = 3;
    std::vector<double> interior_;
    double lower_ = 0.0;
    double upper_ = 1.0;
    std::vector<double> full_;
};

// Writes the degree+1 B-spline values that can be nonzero at x into `values`
// and returns the column index of the first one (Cox-de Boor recursion).
inline int bspline_nonzero(double x, const KnotVector& knots, double* values) {
    const auto& t = knots.full();
    const int p = knots.degree();
    if (!(x >= knots.lower() && x <= knots.upper()))
        throw InputError("B-spline argument " + std::to_string(x) + " outside boundary knots");
    const int dim = knots.dimension();
    // span s with t[s] <= x < t[s+1]; the right boundary belongs to the last span
    int s;
    if (x >= knots.upper()) {
        s = dim - 1;
    } else {
        s = static_cast<int>(std::upper_bound(t.begin() + p, t.begin() + dim + 1, x) - t.begin()) - 1;
    }
    values[0] = 1.0;
    double left[32], right[32];
    if (p >= 32) throw InputError("spline degree too large");
    for (int j = 1; j <= p; ++j) {
        left[j] = x - t[s + 1 - j];
        right[j] = t[s + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double tmp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        values[j] = saved;
    }
    return s - p;
}

inline Eigen::MatrixXd bspline_basis(const Eigen::Ref<const Eigen::VectorXd>& x, const KnotVector& knots) {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(x.size(), knots.dimension());
    std::vector<double> v(static_cast<std::size_t>(knots.degree() + 1));
    for (Eigen::Index r = 0; r < x.size(); ++r) {
        const int first = bspline_nonzero(x[r], knots, v.data());
        for (int k = 0; k <= knots.degree(); ++k) B(r, first + k) = v[static_cast<std::size_t>(k)];
    }
    return B;
}

struct PenaltyMatrix {
    Eigen::MatrixXd matrix;
    int rank = 0;
    int null_dim = 0;
    Eigen::MatrixXd root; // rank x dim, root' root = matrix

    int dimension() const { return static_cast<int>(matrix.rows()); }

    // Rank from the eigenvalues, counting those above 1e-10 of the largest.
    static PenaltyMatrix from(Eigen::MatrixXd S) {
        if (S.rows() != S.cols()) throw InputError("penalty matrix must be square");
        const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
        if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw InputError("penalty matrix must be symmetric");
        PenaltyMatrix P;
        P.matrix = std::move(S);
        const int n = P.dimension();
        if (n == 0) return P;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P.matrix);
        const double top = es.eigenvalues().maxCoeff();
        if (es.eigenvalues().minCoeff() < -1e-10 * std::max(top, 1e-300))
            throw InputError("penalty matrix must be positive semi-definite");
        P.rank = 0;
        if (top > 0.0)
            for (Eigen::Index i = 0; i < n; ++i)
                if (es.eigenvalues()[i] > 1e-10 * top) ++P.rank;
        P.null_dim = n - P.rank;
        // eigenvalues ascend, so the range space is the trailing block
        P.root = es.eigenvalues().tail(P.rank).cwiseSqrt().asDiagonal() *
                 es.eigenvectors().rightCols(P.rank).transpose();
        return P;
    }
};

// Order-th difference operator, shape (dim - order) x dim.
inline Eigen::MatrixXd difference_matrix(int dim, int order) {
    if (order < 1 || dim <= order) throw InputError("difference penalty needs dim > order >= 1");
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(dim, dim);
    for (int k = 0; k < order; ++k) {
        const Eigen::Index r = D.rows();
        D = (D.bottomRows(r - 1) - D.topRows(r - 1)).eval();
    }
    return D;
}

inline PenaltyMatrix difference_penalty(int dim, int order) {
    const Eigen::MatrixXd D = difference_matrix(dim, order);
    PenaltyMatrix P;
    P.matrix = D.transpose() * D;
    P.rank = dim - order;
    P.null_dim = order;
    P.root = D;
    return P;
}

inline PenaltyMatrix ridge_penalty(int dim) {
    PenaltyMatrix P;
    P.matrix = Eigen::MatrixXd::Identity(dim, dim);
    P.rank = dim;
    P.null_dim = 0;
    P.root = P.matrix;
    return P;
}

inline Eigen::MatrixXd indicator_basis(const std::vector<std::string>& groups, const std::vector<std::string>& levels) {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()),
                                              static_cast<Eigen::Index>(levels.size()));
    for (std::size_t r = 0; r < groups.size(); ++r) {
        auto it = std::find(levels.begin(), levels.end(), groups[r]);
        if (it == levels.end()) throw InputError("unknown group label '" + groups[r] + "'");
        B(static_cast<Eigen::Index>(r), it - levels.begin()) = 1.0;
    }
    return B;
}

// Row-wise Kronecker product, first factor major.
inline Eigen::MatrixXd tensor_product_rows(const Eigen::Ref<const Eigen::MatrixXd>& B1,
                                           const Eigen::Ref<const Eigen::MatrixXd>& B2) {
    if (B1.rows() != B2.rows()) throw InputError("tensor_product_rows: row count mismatch");
    Eigen::MatrixXd out(B1.rows(), B1.cols() * B2.cols());
    for (Eigen::Index a = 0; a < B1.cols(); ++a)
        out.middleCols(a * B2.cols(), B2.cols()) = B2.array().colwise() * B1.col(a).array();
    return out;
}

enum class TermKind { Intercept, Linear, Factor, Smooth, Fre, RandomEffect, VaryingCoefficient };

struct LabeledPenalty {
    PenaltyMatrix penalty;
    std::string label;
};

struct TermBasis {
    TermKind kind = TermKind::Smooth;
    Eigen::MatrixXd design_block;
    std::vector<LabeledPenalty> penalties;
    std::vector<std::string> column_labels;
    Eigen::VectorXd column_means; // subtracted from design_block when centered
};

// Penalty of a tensor product between an unpenalized-identity margin of size
// `groups` and a marginal penalty: I_groups (x) S.
inline Eigen::MatrixXd block_diagonal_repeat(const Eigen::MatrixXd& S, int groups) {
    const Eigen::Index d = S.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d * groups, d * groups);
    for (int g = 0; g < groups; ++g) out.block(g * d, g * d, d, d) = S;
    return out;
}

// I_groups (x) S for a difference penalty S, with a block-diagonal root.
inline PenaltyMatrix repeated_difference_penalty(int dim, int order, int groups) {
    const PenaltyMatrix marginal = difference_penalty(dim, order);
    PenaltyMatrix P;
    P.matrix = block_diagonal_repeat(marginal.matrix, groups);
    P.rank = groups * marginal.rank;
    P.null_dim = groups * marginal.null_dim;
    P.root = Eigen::MatrixXd::Zero(P.rank, groups * dim);
    for (int g = 0; g < groups; ++g)
        P.root.block(g * marginal.rank, g * dim, marginal.rank, dim) = marginal.root;
    return P;
}

// Difference penalty restricted to the first dim-1 coefficients.
inline PenaltyMatrix centered_difference_penalty(int dim, int order) {
    const PenaltyMatrix full = difference_penalty(dim, order);
    PenaltyMatrix P;
    P.matrix = full.matrix.topLeftCorner(dim - 1, dim - 1);
    P.null_dim = order - 1;
    P.rank = dim - 1 - P.null_dim;
    P.root = full.root.leftCols(dim - 1);
    return P;
}

inline TermBasis fre_term(const std::vector<std::string>& groups, const std::vector<std::string>& levels,
                          const Eigen::Ref<const Eigen::VectorXd>& t, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const KnotVector& knots, int diff_order) {
    const auto n = static_cast<Eigen::Index>(groups.size());
    if (t.size() != n || x.size() != n) throw InputError("fre_term: vector lengths differ");
    const Eigen::MatrixXd G = indicator_basis(groups, levels);
    const Eigen::MatrixXd B = bspline_basis(t, knots);
    TermBasis term;
    term.kind = TermKind::Fre;
    term.design_block = tensor_product_rows(G, B);
    term.design_block.array().colwise() *= x.array();

    const int ng = static_cast<int>(levels.size());
    const int dim = knots.dimension();
    term.penalties.push_back({repeated_difference_penalty(dim, diff_order, ng), "smooth"});
    term.penalties.push_back({ridge_penalty(ng * dim), "shrink"});
    for (const auto& g : levels)
        for (int d = 0; d < dim; ++d) term.column_labels.push_back(g + ":" + std::to_string(d + 1));
    return term;
}

// Centering keeps the first D-1 columns minus their means; the dropped column
// fixes the level so the term is identifiable next to an intercept. The
// penalty is the difference penalty restricted to the kept coefficients, which
// leaves the fitted function's roughness unchanged because difference
// penalties ignore constant shifts.
inline TermBasis smooth_term(const Eigen::Ref<const Eigen::VectorXd>& t, const KnotVector& knots, int diff_order,
                             bool centered) {
    TermBasis term;
    term.kind = TermKind::Smooth;
    const int dim = knots.dimension();
    const PenaltyMatrix full = difference_penalty(dim, diff_order);
    Eigen::MatrixXd B = bspline_basis(t, knots);
    if (!centered) {
        term.design_block = std::move(B);
        term.penalties.push_back({full, "smooth"});
        for (int d = 0; d < dim; ++d) term.column_labels.push_back(std::to_string(d + 1));
        return term;
    }
    const int kept = dim - 1;
    term.column_means = B.leftCols(kept).colwise().mean().transpose();
    term.design_block = B.leftCols(kept).rowwise() - term.column_means.transpose();
    term.penalties.push_back({centered_difference_penalty(dim, diff_order), "smooth"});
    for (int d = 0; d < kept; ++d) term.column_labels.push_back(std::to_string(d + 1));
    return term;
}

} // namespace pamm
