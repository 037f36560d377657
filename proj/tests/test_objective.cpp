#include <cmath>

#include "cpsearch/objective.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cps;

namespace {

Matrix random_scores(SeededRng& rng, std::size_t n) {
    Matrix s(n, n);
    for (double& v : s.data()) v = rng.uniform(-1, 1);
    return s;
}

}  // namespace

TEST_CASE("info_nce closed forms") {
    CHECK(info_nce_row(Matrix(1, 1, 0.3), 0.05) == 0.0);
    CHECK(batch_loss(Matrix(1, 1, 0.3), 0.05).total == 0.0);
    for (std::size_t n : {2, 4, 8}) {
        const Matrix s(n, n, 0.4);
        const double ln = std::log(static_cast<double>(n));
        CHECK(info_nce_row(s, 0.05) == doctest::Approx(static_cast<double>(n) * ln).epsilon(1e-12));
        CHECK(batch_loss(s, 0.05).total == doctest::Approx(ln).epsilon(1e-12));
    }
    const Matrix id(2, 2, {1, 0, 0, 1});
    const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(info_nce_row(id, 1.0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(info_nce_row(id, 1.0) == doctest::Approx(0.62652).epsilon(1e-5));
    CHECK(info_nce_col(id, 1.0) == doctest::Approx(0.62652).epsilon(1e-5));
    const auto loss = batch_loss(id, 1.0);
    CHECK(loss.total == doctest::Approx(0.31326).epsilon(1e-5));
    CHECK(loss.x2y == loss.y2x);
    CHECK(loss.temperature == 1.0);
    CHECK(kDefaultTemperature == 0.05);
}

TEST_CASE("info_nce errors") {
    CHECK_THROWS_AS(info_nce_row(Matrix(2, 2), 0.0), ConfigError);
    CHECK_THROWS_AS(info_nce_row(Matrix(2, 2), -1.0), ConfigError);
    CHECK_THROWS_AS(info_nce_row(Matrix(2, 3), 1.0), NumericalError);
}

TEST_CASE("info_nce properties") {
    auto rng = SeededRng::stream(31, "nce");
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const double tau = rng.uniform(0.05, 2.0);
        const Matrix s = random_scores(rng, n);
        const auto loss = batch_loss(s, tau);
        CHECK(loss.total > 0.0);
        CHECK(loss.total == doctest::Approx(cps::testing::naive_batch_loss(s, tau)).epsilon(1e-10));
        CHECK(info_nce_col(s, tau) == info_nce_row(s.transposed(), tau));

        // Shifting a row leaves the row-direction term unchanged.
        Matrix shifted = s;
        const std::size_t r = rng.below(n);
        const double c = rng.uniform(-3, 3);
        for (double& v : shifted.row(r)) v += c;
        CHECK(std::abs(info_nce_row(shifted, tau) - info_nce_row(s, tau)) <= 1e-12 * n);

        // Lowering an off-diagonal entry never raises the loss.
        Matrix lowered = s;
        std::size_t i = rng.below(n), j = rng.below(n);
        if (i == j) j = (j + 1) % n;
        lowered(i, j) -= rng.uniform(0, 1);
        CHECK(batch_loss(lowered, tau).total <= loss.total);
    }
}

TEST_CASE("batch_loss_grad matches central differences") {
    auto rng = SeededRng::stream(37, "grad");
    const double h = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        const double tau = rng.uniform(0.05, 1.0);
        Matrix s = random_scores(rng, n);
        const Matrix g = batch_loss_grad(s, tau);
        for (std::size_t k = 0; k < s.size(); ++k) {
            const double orig = s.data()[k];
            s.data()[k] = orig + h;
            const double lp = batch_loss(s, tau).total;
            s.data()[k] = orig - h;
            const double lm = batch_loss(s, tau).total;
            s.data()[k] = orig;
            const double numeric = (lp - lm) / (2 * h);
            const double rel = std::abs(g.data()[k] - numeric) /
                               std::max({std::abs(g.data()[k]), std::abs(numeric), 1e-12});
            CHECK(rel <= 1e-6);
        }
    }
}
