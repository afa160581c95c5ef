#pragma once

// Product form of a PED design. Every raw column c is the product of a
// subject-level feature a(c) and an interval-level feature b(c):
//
//   raw(r, c) = subject(s_r, a(c)) * time(j_r, b(c)).
//
// Weighted cross products then reduce to one small q x q moment matrix per
// interval, and linear predictors to one short dot product per row, instead of
// a pass over every pair of nonzeros of every PED row.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <utility>
#include <vector>

namespace pamm {

struct ProductForm {
    Eigen::SparseMatrix<double, Eigen::RowMajor> subject; // subjects x q
    Eigen::SparseMatrix<double, Eigen::RowMajor> time;    // intervals x r
    std::vector<Eigen::Index> row_subject;
    std::vector<Eigen::Index> row_time;
    std::vector<Eigen::Index> by_time;    // row indices ordered by interval
    std::vector<Eigen::Index> time_start; // by_time offsets, intervals + 1
    Eigen::MatrixXi column;               // q x r raw column, -1 if none

    bool empty() const { return row_subject.empty(); }
    Eigen::Index rows() const { return static_cast<Eigen::Index>(row_subject.size()); }

    void index_by_time() {
        const Eigen::Index J = time.rows();
        time_start.assign(static_cast<std::size_t>(J + 1), 0);
        for (auto j : row_time) ++time_start[static_cast<std::size_t>(j + 1)];
        for (Eigen::Index j = 0; j < J; ++j) time_start[static_cast<std::size_t>(j + 1)] += time_start[static_cast<std::size_t>(j)];
        by_time.resize(row_time.size());
        std::vector<Eigen::Index> next(time_start.begin(), time_start.end() - 1);
        for (std::size_t r = 0; r < row_time.size(); ++r)
            by_time[static_cast<std::size_t>(next[static_cast<std::size_t>(row_time[r])]++)] = static_cast<Eigen::Index>(r);
    }

    void permute_rows(const std::vector<Eigen::Index>& order) {
        std::vector<Eigen::Index> rs(order.size()), rt(order.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            rs[k] = row_subject[static_cast<std::size_t>(order[k])];
            rt[k] = row_time[static_cast<std::size_t>(order[k])];
        }
        row_subject = std::move(rs);
        row_time = std::move(rt);
        index_by_time();
    }

    // For every interval feature b, the (subject feature, raw column) pairs.
    void index_features() {
        by_feature.assign(static_cast<std::size_t>(column.cols()), {});
        for (Eigen::Index b = 0; b < column.cols(); ++b)
            for (Eigen::Index a = 0; a < column.rows(); ++a)
                if (column(a, b) >= 0) by_feature[static_cast<std::size_t>(b)].emplace_back(a, column(a, b));
    }

    // Per subject, the lower-triangle products subject(s, a) subject(s, a')
    // as (flat q x q index, value) pairs.
    void index_subject_pairs() {
        const Eigen::Index q = column.rows();
        pair_start.assign(static_cast<std::size_t>(subject.rows() + 1), 0);
        pair_index.clear();
        pair_value.clear();
        const auto* outer = subject.outerIndexPtr();
        const auto* inner = subject.innerIndexPtr();
        const auto* vals = subject.valuePtr();
        for (Eigen::Index s = 0; s < subject.rows(); ++s) {
            for (auto x = outer[s]; x < outer[s + 1]; ++x)
                for (auto y = outer[s]; y <= x; ++y) {
                    pair_index.push_back(static_cast<Eigen::Index>(inner[y]) * q + inner[x]);
                    pair_value.push_back(vals[x] * vals[y]);
                }
            pair_start[static_cast<std::size_t>(s + 1)] = static_cast<Eigen::Index>(pair_index.size());
        }
    }

    // raw * beta
    Eigen::VectorXd times(const Eigen::VectorXd& beta) const {
        const Eigen::Index q = column.rows(), nr = column.cols();
        Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(q, nr);
        for (Eigen::Index a = 0; a < q; ++a)
            for (Eigen::Index b = 0; b < nr; ++b)
                if (column(a, b) >= 0) gamma(a, b) = beta[column(a, b)];
        // per-subject coefficients on the interval features
        const RowMajorMatrix u = subject * gamma;
        const double* ud = u.data();
        Eigen::VectorXd eta(rows());
        for_each_interval([&](Eigen::Index, const int* tb, const double* tv, int nt, Eigen::Index k0, Eigen::Index k1) {
            for (auto k = k0; k < k1; ++k) {
                const auto r = by_time[static_cast<std::size_t>(k)];
                const double* us = ud + row_subject[static_cast<std::size_t>(r)] * nr;
                double v = 0.0;
                for (int x = 0; x < nt; ++x) v += tv[x] * us[tb[x]];
                eta[r] = v;
            }
        });
        return eta;
    }

    // raw' diag(w) raw and raw' v in one pass over the rows.
    void crossprod(const Eigen::VectorXd& w, const Eigen::VectorXd* v, Eigen::Index p, Eigen::MatrixXd& H,
                   Eigen::VectorXd* g) const {
        const Eigen::Index q = column.rows(), nr = column.cols();
        H = Eigen::MatrixXd::Zero(p, p);
        Eigen::MatrixXd M(q, q);
        double* m = M.data();
        RowMajorMatrix y;
        if (v) y = RowMajorMatrix::Zero(subject.rows(), nr);
        for_each_interval([&](Eigen::Index, const int* tb, const double* tv, int nt, Eigen::Index k0, Eigen::Index k1) {
            M.setZero();
            for (auto k = k0; k < k1; ++k) {
                const auto r = by_time[static_cast<std::size_t>(k)];
                const auto s = static_cast<std::size_t>(row_subject[static_cast<std::size_t>(r)]);
                const double wr = w[r];
                for (auto x = pair_start[s]; x < pair_start[s + 1]; ++x)
                    m[pair_index[static_cast<std::size_t>(x)]] += wr * pair_value[static_cast<std::size_t>(x)];
                if (v) {
                    double* ys = y.data() + static_cast<Eigen::Index>(s) * nr;
                    const double vr = (*v)[r];
                    for (int x = 0; x < nt; ++x) ys[tb[x]] += vr * tv[x];
                }
            }
            // M holds the lower triangle
            for (int x = 0; x < nt; ++x) {
                const auto& l1 = by_feature[static_cast<std::size_t>(tb[x])];
                for (int z = 0; z < nt; ++z) {
                    const double tt = tv[x] * tv[z];
                    const auto& l2 = by_feature[static_cast<std::size_t>(tb[z])];
                    for (const auto& [a1, c1] : l1)
                        for (const auto& [a2, c2] : l2) {
                            if (c2 > c1) continue;
                            H(c1, c2) += tt * (a1 >= a2 ? m[a2 * q + a1] : m[a1 * q + a2]);
                        }
                }
            }
        });
        H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
        if (v) *g = gather(subject.transpose() * y, p);
    }

    Eigen::MatrixXd crossprod(const Eigen::VectorXd& w, Eigen::Index p) const {
        Eigen::MatrixXd H;
        crossprod(w, nullptr, p, H, nullptr);
        return H;
    }

    // A matrix with the same R factor as raw: within interval j the rows are
    // S_j G_j, S_j the subject features of its rows and G_j (q x p) placing
    // them on the interval's columns, so QR of each small S_j suffices.
    Eigen::MatrixXd reduced_rows(Eigen::Index p) const {
        const Eigen::Index q = column.rows();
        std::vector<Eigen::MatrixXd> blocks;
        Eigen::Index total = 0;
        for_each_interval([&](Eigen::Index, const int* tb, const double* tv, int nt, Eigen::Index k0, Eigen::Index k1) {
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(k1 - k0, q);
            for (auto k = k0; k < k1; ++k) {
                const auto s = row_subject[static_cast<std::size_t>(by_time[static_cast<std::size_t>(k)])];
                for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(subject, s); it; ++it)
                    S(k - k0, it.col()) = it.value();
            }
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(q, p);
            for (int x = 0; x < nt; ++x)
                for (const auto& [a, c] : by_feature[static_cast<std::size_t>(tb[x])]) G(a, c) = tv[x];
            Eigen::MatrixXd R;
            if (S.rows() <= q) {
                R = S;
            } else {
                Eigen::HouseholderQR<Eigen::MatrixXd> qr(S);
                R = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
            }
            blocks.push_back(R * G);
            total += R.rows();
        });
        Eigen::MatrixXd out(total, p);
        Eigen::Index at = 0;
        for (const auto& b : blocks) {
            out.middleRows(at, b.rows()) = b;
            at += b.rows();
        }
        return out;
    }

    // raw' * v
    Eigen::VectorXd transpose_times(const Eigen::VectorXd& v, Eigen::Index p) const {
        const Eigen::Index nr = column.cols();
        // y(s, b) = sum over rows of subject s of v_r * time(j_r, b)
        RowMajorMatrix y = RowMajorMatrix::Zero(subject.rows(), nr);
        for_each_interval([&](Eigen::Index, const int* tb, const double* tv, int nt, Eigen::Index k0, Eigen::Index k1) {
            for (auto k = k0; k < k1; ++k) {
                const auto r = by_time[static_cast<std::size_t>(k)];
                double* ys = y.data() + row_subject[static_cast<std::size_t>(r)] * nr;
                const double vr = v[r];
                for (int x = 0; x < nt; ++x) ys[tb[x]] += vr * tv[x];
            }
        });
        return gather(subject.transpose() * y, p);
    }

private:
    using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    // Calls f(j, features, values, count, k0, k1) for every nonempty interval,
    // where by_time[k0, k1) are its rows.
    template <class F>
    void for_each_interval(F&& f) const {
        const auto* outer = time.outerIndexPtr();
        const auto* inner = time.innerIndexPtr();
        const auto* vals = time.valuePtr();
        for (Eigen::Index j = 0; j < time.rows(); ++j) {
            const auto k0 = time_start[static_cast<std::size_t>(j)], k1 = time_start[static_cast<std::size_t>(j + 1)];
            if (k0 == k1) continue;
            f(j, inner + outer[j], vals + outer[j], static_cast<int>(outer[j + 1] - outer[j]), k0, k1);
        }
    }

    Eigen::VectorXd gather(const Eigen::MatrixXd& z, Eigen::Index p) const {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
        for (Eigen::Index a = 0; a < column.rows(); ++a)
            for (Eigen::Index b = 0; b < column.cols(); ++b)
                if (column(a, b) >= 0) g[column(a, b)] += z(a, b);
        return g;
    }

public:
    std::vector<std::vector<std::pair<Eigen::Index, int>>> by_feature;
    std::vector<Eigen::Index> pair_start;
    std::vector<Eigen::Index> pair_index;
    std::vector<double> pair_value;
};

} // namespace pamm
