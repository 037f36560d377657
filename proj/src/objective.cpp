#include "cpsearch/objective.hpp"

#include <cmath>

namespace cps {

namespace {

void check(const Matrix& s, double tau) {
    if (!(tau > 0.0)) throw ConfigError("info_nce: temperature must be positive");
    if (s.rows() != s.cols() || s.rows() == 0)
        throw NumericalError("info_nce: score matrix must be square and nonempty");
}

}  // namespace

double info_nce_row(const Matrix& s, double tau) {
    check(s, tau);
    const std::size_t n = s.rows();
    std::vector<double> scaled(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scaled[j] = s(i, j) / tau;
        loss -= log_softmax_row(scaled)[i];
    }
    return loss;
}

double info_nce_col(const Matrix& s, double tau) { return info_nce_row(s.transposed(), tau); }

LossValue batch_loss(const Matrix& s, double tau) {
    LossValue v;
    v.temperature = tau;
    v.x2y = info_nce_row(s, tau);
    v.y2x = info_nce_col(s, tau);
    v.total = (v.x2y + v.y2x) / (2.0 * static_cast<double>(s.rows()));
    return v;
}

Matrix batch_loss_grad(const Matrix& s, double tau) {
    check(s, tau);
    const std::size_t n = s.rows();
    const double w = 1.0 / (2.0 * static_cast<double>(n) * tau);
    Matrix g(n, n);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scaled[j] = s(i, j) / tau;
        const auto lp = log_softmax_row(scaled);
        for (std::size_t j = 0; j < n; ++j) g(i, j) += w * (std::exp(lp[j]) - (i == j ? 1.0 : 0.0));
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) scaled[i] = s(i, j) / tau;
        const auto lp = log_softmax_row(scaled);
        for (std::size_t i = 0; i < n; ++i) g(i, j) += w * (std::exp(lp[i]) - (i == j ? 1.0 : 0.0));
    }
    return g;
}

}  // namespace cps
