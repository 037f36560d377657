#pragma once

// Cross-modal interaction scoring between token-level representations.
//
// For a code representation X (rows x_a) and a query representation Y (rows y_b):
//   M[a][b] = x_a . y_b
//   u_row   = mean over valid a of max over valid b of M[a][b]
//   u_col   = mean over valid b of max over valid a of M[a][b]
//   s       = lambda * u_col + (1 - lambda) * u_row
// Pads never take part in a max or a mean. Gradients flow to the first maximal
// index when several entries tie.

#include <cstddef>
#include <span>
#include <vector>

#include "cpsearch/encoder.hpp"
#include "cpsearch/numerics.hpp"

namespace cps {

inline constexpr double kDefaultLambda = 0.9;

struct PairScore {
    double s = 0.0;
    double u_row = 0.0;
    double u_col = 0.0;
};

struct PoolFactors {
    double u_row = 0.0;
    double u_col = 0.0;
    /// For each matrix row, the column holding its max (-1 for invalid rows).
    std::vector<long> row_argmax;
    /// For each matrix column, the row holding its max (-1 for invalid columns).
    std::vector<long> col_argmax;
};

/// Dot products over all rows of both sides; invalid rows give meaningless cells.
Matrix interaction_matrix(const TokenRepresentation& rx, const TokenRepresentation& ry);

PoolFactors pool_factors(const Matrix& m, const std::vector<bool>& mask_x,
                         const std::vector<bool>& mask_y);

double pair_score(double u_row, double u_col, double lambda);

PairScore score_pair(const TokenRepresentation& rx, const TokenRepresentation& ry, double lambda);

/// S[i][j] scores code i against query j. Each code is scored against every
/// query's valid rows with a single matrix product.
Matrix batch_scores(std::span<const TokenRepresentation> reps_x,
                    std::span<const TokenRepresentation> reps_y, double lambda);

struct RepGradients {
    std::vector<Matrix> dx;  // per code, padded_len x d
    std::vector<Matrix> dy;  // per query
};

/// Backward of batch_scores given dL/dS.
RepGradients batch_scores_backward(std::span<const TokenRepresentation> reps_x,
                                   std::span<const TokenRepresentation> reps_y, double lambda,
                                   const Matrix& grad_scores);

/// Smallest gap between the largest and second-largest valid entry over every
/// row and column of every pair's interaction matrix (infinity when no gap exists).
double min_max_margin(std::span<const TokenRepresentation> reps_x,
                      std::span<const TokenRepresentation> reps_y);

/// Snippet-level baseline: dot product of unit vectors.
double cosine_score(std::span<const double> fx, std::span<const double> fy);

Matrix cosine_batch_scores(const std::vector<std::vector<double>>& fx,
                           const std::vector<std::vector<double>>& fy);

}  // namespace cps
