#include <cmath>

#include "cpsearch/diagnostics.hpp"
#include "doctest.h"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace cps;
using cps::testing::random_unit;

TEST_CASE("alignment closed forms") {
    const Vec e0{1, 0, 0}, e1{0, 1, 0}, neg{-1, 0, 0};
    CHECK(alignment({{e0, e0}, {e1, e1}}) == 0.0);
    CHECK(std::abs(alignment({{e0, neg}}) - 4.0) <= 1e-12);
    CHECK(std::abs(alignment({{e0, e1}}) - 2.0) <= 1e-12);
    CHECK_THROWS_AS(alignment({}), NumericalError);
    CHECK_THROWS_AS(alignment({{e0, Vec{2, 0, 0}}}), NumericalError);
}

TEST_CASE("uniformity closed forms") {
    const Vec e0{1, 0}, neg{-1, 0};
    CHECK(uniformity({e0, e0, e0}) == 0.0);
    CHECK(std::abs(uniformity({e0, neg}) - (-8.0)) <= 1e-12);
    CHECK_THROWS_AS(uniformity({e0}), NumericalError);
    CHECK_THROWS_AS(uniformity({e0, Vec{0.5, 0}}), NumericalError);
}

TEST_CASE("diagnostics match naive oracles") {
    auto rng = SeededRng::stream(43, "diag");
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(20), d = 2 + rng.below(16);
        std::vector<std::pair<Vec, Vec>> pairs;
        std::vector<Vec> xs, ys;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(random_unit(rng, d));
            ys.push_back(random_unit(rng, d));
            pairs.emplace_back(xs.back(), ys.back());
        }
        CHECK(std::abs(alignment(pairs) - cps::testing::naive_alignment(xs, ys)) <= 1e-12);
        const double u = uniformity(xs);
        CHECK(std::abs(u - cps::testing::naive_uniformity(xs)) <= 1e-12);
        CHECK(u <= 0.0);
        CHECK(alignment(pairs) >= 0.0);

        // A random rotation (Householder reflection) preserves both metrics.
        const Vec v = random_unit(rng, d);
        auto reflect = [&](const Vec& x) {
            double p = 0.0;
            for (std::size_t c = 0; c < d; ++c) p += v[c] * x[c];
            Vec out(d);
            for (std::size_t c = 0; c < d; ++c) out[c] = x[c] - 2.0 * p * v[c];
            return out;
        };
        std::vector<Vec> rx;
        std::vector<std::pair<Vec, Vec>> rp;
        for (std::size_t i = 0; i < n; ++i) {
            rx.push_back(reflect(xs[i]));
            rp.emplace_back(reflect(xs[i]), reflect(ys[i]));
        }
        CHECK(std::abs(uniformity(rx) - u) <= 1e-12);
        CHECK(std::abs(alignment(rp) - alignment(pairs)) <= 1e-12);
    }
}

TEST_CASE("quality report") {
    CHECK(std::string(kQualityCsvHeader) == "model,alignment,uniformity_query,uniformity_code,mrr");
    const auto docs = cps::testing::overfit_corpus(8);
    const auto vocab = build_vocab(docs, 1, 1000);
    TrainConfig c;
    c.mode = TrainMode::kFinetune;
    c.d = 16;
    c.heads = 2;
    c.layers = 1;
    c.max_len_code = 24;
    c.max_len_query = 12;
    const auto cp = initialize(c, vocab);
    const auto r = quality_report(cp, vocab, docs, "ft-init");
    CHECK(r.samples == 8);
    CHECK(r.alignment >= 0.0);
    CHECK(r.uniformity_query <= 0.0);
    CHECK(r.uniformity_code <= 0.0);
    CHECK(r.mrr > 0.0);
    CHECK(r.mrr <= 1.0);
    CHECK(r.csv_row().rfind("ft-init,", 0) == 0);
    CHECK(r.to_json().at("model") == "ft-init");
    CHECK(quality_report(cp, vocab, docs, "ft-init").csv_row() == r.csv_row());
}
