#pragma once

// Symmetric InfoNCE over an N x N score matrix S (codes as rows, queries as columns):
//   x2y   = -sum_i log softmax(S[i, :] / tau)[i]
//   y2x   = -sum_i log softmax(S[:, i] / tau)[i]
//   total = (x2y + y2x) / (2N)

#include "cpsearch/numerics.hpp"

namespace cps {

inline constexpr double kDefaultTemperature = 0.05;

struct LossValue {
    double total = 0.0;
    double x2y = 0.0;
    double y2x = 0.0;
    double temperature = kDefaultTemperature;
};

double info_nce_row(const Matrix& s, double tau);
double info_nce_col(const Matrix& s, double tau);
LossValue batch_loss(const Matrix& s, double tau);

/// dL/dS of batch_loss(S, tau).total.
Matrix batch_loss_grad(const Matrix& s, double tau);

}  // namespace cps
