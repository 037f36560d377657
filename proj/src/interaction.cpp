#include "cpsearch/interaction.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace cps {

namespace {

std::vector<std::size_t> valid_indices(const std::vector<bool>& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(i);
    return idx;
}

}  // namespace

Matrix interaction_matrix(const TokenRepresentation& rx, const TokenRepresentation& ry) {
    if (rx.rows.cols() != ry.rows.cols())
        throw NumericalError("interaction_matrix: embedding dims differ (" +
                             std::to_string(rx.rows.cols()) + " vs " +
                             std::to_string(ry.rows.cols()) + ")");
    return matmul_nt(rx.rows, ry.rows);
}

PoolFactors pool_factors(const Matrix& m, const std::vector<bool>& mask_x,
                         const std::vector<bool>& mask_y) {
    if (mask_x.size() != m.rows() || mask_y.size() != m.cols())
        throw NumericalError("pool_factors: mask length does not match the matrix");
    const auto rows = valid_indices(mask_x);
    const auto cols = valid_indices(mask_y);
    if (rows.empty() || cols.empty()) throw NumericalError("pool_factors: empty valid set");

    PoolFactors f;
    f.row_argmax.assign(m.rows(), -1);
    f.col_argmax.assign(m.cols(), -1);
    double row_sum = 0.0;
    for (std::size_t a : rows) {
        std::size_t best = cols.front();
        for (std::size_t b : cols)
            if (m(a, b) > m(a, best)) best = b;
        f.row_argmax[a] = static_cast<long>(best);
        row_sum += m(a, best);
    }
    double col_sum = 0.0;
    for (std::size_t b : cols) {
        std::size_t best = rows.front();
        for (std::size_t a : rows)
            if (m(a, b) > m(best, b)) best = a;
        f.col_argmax[b] = static_cast<long>(best);
        col_sum += m(best, b);
    }
    f.u_row = row_sum / static_cast<double>(rows.size());
    f.u_col = col_sum / static_cast<double>(cols.size());
    return f;
}

double pair_score(double u_row, double u_col, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("pair_score: lambda must lie in [0, 1]");
    return lambda * u_col + (1.0 - lambda) * u_row;
}

PairScore score_pair(const TokenRepresentation& rx, const TokenRepresentation& ry, double lambda) {
    const auto f = pool_factors(interaction_matrix(rx, ry), rx.valid, ry.valid);
    return {pair_score(f.u_row, f.u_col, lambda), f.u_row, f.u_col};
}

namespace {

struct Packed {
    Matrix rows;                        // valid rows of every query, stacked
    std::vector<std::size_t> offsets;   // start row per query, plus end sentinel
    std::vector<std::vector<std::size_t>> source;  // original row index per packed row
};

Packed pack_valid(std::span<const TokenRepresentation> reps, std::size_t d) {
    Packed p;
    std::size_t total = 0;
    for (const auto& r : reps) total += r.valid_count();
    p.rows = Matrix(total, d);
    p.offsets.push_back(0);
    std::size_t at = 0;
    for (const auto& r : reps) {
        if (r.rows.cols() != d) throw NumericalError("batch_scores: embedding dims differ");
        auto idx = valid_indices(r.valid);
        if (idx.empty()) throw NumericalError("batch_scores: representation without valid rows");
        for (std::size_t t : idx) {
            auto src = r.rows.row(t);
            std::copy(src.begin(), src.end(), p.rows.row(at++).begin());
        }
        p.offsets.push_back(at);
        p.source.push_back(std::move(idx));
    }
    return p;
}

Matrix compact_valid(const TokenRepresentation& r, std::vector<std::size_t>& idx) {
    idx = valid_indices(r.valid);
    if (idx.empty()) throw NumericalError("batch_scores: representation without valid rows");
    Matrix m(idx.size(), r.rows.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = r.rows.row(idx[i]);
        std::copy(src.begin(), src.end(), m.row(i).begin());
    }
    return m;
}

// Max-pools the block of `all` covering columns [c0, c1) and returns the pair
// factors with argmax positions relative to the block.
void pool_block(const Matrix& all, std::size_t c0, std::size_t c1, double& u_row, double& u_col,
                std::vector<std::size_t>* row_arg, std::vector<std::size_t>* col_arg) {
    const std::size_t nx = all.rows(), ny = c1 - c0;
    if (row_arg) row_arg->assign(nx, 0);
    if (col_arg) col_arg->assign(ny, 0);
    std::vector<double> col_best(ny, -std::numeric_limits<double>::infinity());
    double row_sum = 0.0;
    for (std::size_t a = 0; a < nx; ++a) {
        auto row = all.row(a);
        std::size_t best = c0;
        for (std::size_t b = c0; b < c1; ++b) {
            const double v = row[b];
            if (v > row[best]) best = b;
            if (v > col_best[b - c0]) {
                col_best[b - c0] = v;
                if (col_arg) (*col_arg)[b - c0] = a;
            }
        }
        row_sum += row[best];
        if (row_arg) (*row_arg)[a] = best - c0;
    }
    double col_sum = 0.0;
    for (double v : col_best) col_sum += v;
    u_row = row_sum / static_cast<double>(nx);
    u_col = col_sum / static_cast<double>(ny);
}

}  // namespace

Matrix batch_scores(std::span<const TokenRepresentation> reps_x,
                    std::span<const TokenRepresentation> reps_y, double lambda) {
    if (reps_x.size() != reps_y.size())
        throw NumericalError("batch_scores: code and query counts differ");
    if (reps_x.empty()) throw NumericalError("batch_scores: empty batch");
    const std::size_t n = reps_x.size(), d = reps_x.front().rows.cols();
    const Packed ys = pack_valid(reps_y, d);
    Matrix s(n, n);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix xi = compact_valid(reps_x[i], idx);
        if (xi.cols() != d) throw NumericalError("batch_scores: embedding dims differ");
        const Matrix all = matmul_nt(xi, ys.rows);
        for (std::size_t j = 0; j < n; ++j) {
            double u_row, u_col;
            pool_block(all, ys.offsets[j], ys.offsets[j + 1], u_row, u_col, nullptr, nullptr);
            s(i, j) = pair_score(u_row, u_col, lambda);
        }
    }
    return s;
}

RepGradients batch_scores_backward(std::span<const TokenRepresentation> reps_x,
                                   std::span<const TokenRepresentation> reps_y, double lambda,
                                   const Matrix& grad_scores) {
    const std::size_t n = reps_x.size(), d = reps_x.front().rows.cols();
    if (reps_y.size() != n || grad_scores.rows() != n || grad_scores.cols() != n)
        throw NumericalError("batch_scores_backward: shape mismatch");
    const Packed ys = pack_valid(reps_y, d);
    RepGradients g;
    for (std::size_t i = 0; i < n; ++i) g.dx.emplace_back(reps_x[i].rows.rows(), d);
    for (std::size_t j = 0; j < n; ++j) g.dy.emplace_back(reps_y[j].rows.rows(), d);

    std::vector<std::size_t> xidx, row_arg, col_arg;
    for (std::size_t i = 0; i < n; ++i) {
        const Matrix xi = compact_valid(reps_x[i], xidx);
        const Matrix all = matmul_nt(xi, ys.rows);
        const double nx = static_cast<double>(xi.rows());
        for (std::size_t j = 0; j < n; ++j) {
            const double gs = grad_scores(i, j);
            if (gs == 0.0) continue;
            double u_row, u_col;
            pool_block(all, ys.offsets[j], ys.offsets[j + 1], u_row, u_col, &row_arg, &col_arg);
            const auto& yidx = ys.source[j];
            const double ny = static_cast<double>(yidx.size());
            const double w_row = gs * (1.0 - lambda) / nx;
            const double w_col = gs * lambda / ny;
            // dM[a][b] routes to x_a += dM * y_b and y_b += dM * x_a.
            auto route = [&](std::size_t a, std::size_t b, double w) {
                auto xa = xi.row(a);
                auto yb = ys.rows.row(ys.offsets[j] + b);
                auto gx = g.dx[i].row(xidx[a]);
                auto gy = g.dy[j].row(yidx[b]);
                for (std::size_t c = 0; c < d; ++c) {
                    gx[c] += w * yb[c];
                    gy[c] += w * xa[c];
                }
            };
            if (w_row != 0.0)
                for (std::size_t a = 0; a < row_arg.size(); ++a) route(a, row_arg[a], w_row);
            if (w_col != 0.0)
                for (std::size_t b = 0; b < col_arg.size(); ++b) route(col_arg[b], b, w_col);
        }
    }
    return g;
}

double min_max_margin(std::span<const TokenRepresentation> reps_x,
                      std::span<const TokenRepresentation> reps_y) {
    double margin = std::numeric_limits<double>::infinity();
    auto gap = [&](const std::vector<double>& v) {
        if (v.size() < 2) return;
        double best = -std::numeric_limits<double>::infinity(), second = best;
        for (double x : v) {
            if (x > best) {
                second = best;
                best = x;
            } else if (x > second) {
                second = x;
            }
        }
        margin = std::min(margin, best - second);
    };
    for (const auto& rx : reps_x) {
        for (const auto& ry : reps_y) {
            const Matrix m = interaction_matrix(rx, ry);
            const auto rows = valid_indices(rx.valid);
            const auto cols = valid_indices(ry.valid);
            std::vector<double> v;
            for (std::size_t a : rows) {
                v.clear();
                for (std::size_t b : cols) v.push_back(m(a, b));
                gap(v);
            }
            for (std::size_t b : cols) {
                v.clear();
                for (std::size_t a : rows) v.push_back(m(a, b));
                gap(v);
            }
        }
    }
    return margin;
}

double cosine_score(std::span<const double> fx, std::span<const double> fy) {
    if (fx.size() != fy.size()) throw NumericalError("cosine_score: dimension mismatch");
    if (std::abs(norm2(fx) - 1.0) > 1e-6 || std::abs(norm2(fy) - 1.0) > 1e-6)
        throw NumericalError("cosine_score: inputs must be unit vectors");
    return dot(fx, fy);
}

Matrix cosine_batch_scores(const std::vector<std::vector<double>>& fx,
                           const std::vector<std::vector<double>>& fy) {
    if (fx.size() != fy.size()) throw NumericalError("cosine_batch_scores: count mismatch");
    Matrix s(fx.size(), fy.size());
    for (std::size_t i = 0; i < fx.size(); ++i)
        for (std::size_t j = 0; j < fy.size(); ++j) s(i, j) = cosine_score(fx[i], fy[j]);
    return s;
}

}  // namespace cps
