#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ovtrack/core_types.hpp"

namespace ovtrack {

struct Assignment {
    std::vector<int> row_to_col;  // -1 when the row was matched to padding
    std::vector<int> col_to_row;
    double cost = 0;
};

/// Minimum-cost assignment on a rows x cols cost matrix (row-major), padded
/// to square with zero-cost dummies. Shortest augmenting paths with
/// potentials, O(n^3). Deterministic: rows are inserted in index order and
/// ties resolve to the lowest column index.
inline Assignment hungarian(const std::vector<double>& cost, int rows, int cols) {
    if (rows < 0 || cols < 0 || cost.size() != static_cast<std::size_t>(rows) * cols)
        throw InvalidInput("hungarian: cost size does not match dimensions");
    for (double c : cost)
        if (!std::isfinite(c)) throw InvalidInput("hungarian: non-finite cost");
    Assignment out;
    out.row_to_col.assign(rows, -1);
    out.col_to_row.assign(cols, -1);
    if (rows == 0 || cols == 0) return out;

    const int n = std::max(rows, cols);
    auto c = [&](int i, int j) -> double {  // 1-based
        return (i <= rows && j <= cols) ? cost[static_cast<std::size_t>(i - 1) * cols + (j - 1)] : 0.0;
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = c(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (int j = 1; j <= n; ++j) {
        const int i = p[j];
        if (i >= 1 && i <= rows && j <= cols) {
            out.row_to_col[i - 1] = j - 1;
            out.col_to_row[j - 1] = i - 1;
            out.cost += cost[static_cast<std::size_t>(i - 1) * cols + (j - 1)];
        }
    }
    return out;
}

/// Maximum-score assignment; pairs scoring at most `min_score` are dropped
/// from the result.
inline Assignment hungarian_max(const std::vector<double>& score, int rows, int cols,
                                double min_score = 0.0) {
    std::vector<double> neg(score.size());
    for (std::size_t k = 0; k < score.size(); ++k) neg[k] = -score[k];
    Assignment a = hungarian(neg, rows, cols);
    a.cost = 0;
    for (int i = 0; i < rows; ++i) {
        const int j = a.row_to_col[i];
        if (j < 0) continue;
        const double s = score[static_cast<std::size_t>(i) * cols + j];
        if (s <= min_score) {
            a.row_to_col[i] = -1;
            a.col_to_row[j] = -1;
        } else {
            a.cost += s;
        }
    }
    return a;
}

}  // namespace ovtrack
