#include <cmath>
#include <cstring>

#include "cpsearch/encoder.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cps;

namespace {

Vocabulary toy_vocab() {
    std::vector<std::string> tokens;
    for (int i = 0; i < 20; ++i) tokens.push_back("w" + std::to_string(i));
    return Vocabulary(tokens);
}

EncoderParams toy_params(std::uint64_t seed, std::size_t max_len = 16) {
    auto rng = SeededRng::stream(seed, "test.encoder");
    return EncoderParams::random({toy_vocab().size(), 16, 2, 2, max_len}, rng);
}

PromptOutputs toy_prompts(std::uint64_t seed, std::size_t k) {
    auto rng = SeededRng::stream(seed, "test.prompt");
    return generate_prompts(PromptState::random(k, 2, 16, rng));
}

std::uint64_t checksum(const Matrix& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : m.data()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace

TEST_CASE("encode shapes and norms") {
    const auto vocab = toy_vocab();
    const auto params = toy_params(1);
    const auto prompts = toy_prompts(1, 3);
    const auto seq = tokenize("w1 w2 w3 w4", vocab, 10);
    for (const PromptOutputs* p : {static_cast<const PromptOutputs*>(nullptr), &prompts}) {
        const auto r = encode(seq, p, params);
        CHECK(r.rows.rows() == 10);
        CHECK(r.rows.cols() == 16);
        CHECK(r.valid_count() == 6);
        for (std::size_t i = 0; i < 10; ++i) {
            if (i < 6) {
                CHECK(norm2(r.rows.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
            } else {
                CHECK(norm2(r.rows.row(i)) == 0.0);
            }
        }
    }
    CHECK_THROWS_AS(encode(tokenize("w1 w2", vocab, 40), nullptr, params), NumericalError);
}

TEST_CASE("encode matches a naive forward pass") {
    const auto vocab = toy_vocab();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto params = toy_params(seed);
        const auto prompts = toy_prompts(seed, 4);
        const auto seq = tokenize("w3 w7 w1 w1 w0 zz w9", vocab, 12);
        std::vector<std::int32_t> ids(seq.ids.begin(), seq.ids.begin() + static_cast<long>(seq.true_length));
        for (const PromptOutputs* p : {static_cast<const PromptOutputs*>(nullptr), &prompts}) {
            const auto fast = encode(seq, p, params);
            const auto slow = cps::testing::naive_encode(ids, p, params);
            for (std::size_t i = 0; i < slow.size(); ++i)
                for (std::size_t c = 0; c < 16; ++c) CHECK(std::abs(fast.rows(i, c) - slow[i][c]) <= 1e-12);
        }
    }
}

TEST_CASE("masked prompts reduce to the plain encoder") {
    const auto vocab = toy_vocab();
    const auto params = toy_params(5);
    const auto prompts = toy_prompts(5, 6);
    const auto seq = tokenize("w2 w5 w8", vocab, 8);
    const auto plain = encode(seq, nullptr, params);
    const auto masked = encode(seq, &prompts, params, {.mask_prompts = true});
    CHECK(plain.rows == masked.rows);
    const auto open = encode(seq, &prompts, params);
    CHECK_FALSE(plain.rows == open.rows);
}

TEST_CASE("encode ignores padding") {
    const auto vocab = toy_vocab();
    const auto params = toy_params(2);
    const auto prompts = toy_prompts(2, 2);
    const auto a = encode(tokenize("w4 w6", vocab, 4), &prompts, params);
    const auto b = encode(tokenize("w4 w6", vocab, 16), &prompts, params);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 16; ++c) CHECK(a.rows(i, c) == b.rows(i, c));
}

TEST_CASE("encode is deterministic with a fixed checksum") {
    const auto vocab = toy_vocab();
    const auto params = toy_params(0);
    const auto prompts = toy_prompts(0, 4);
    const auto seq = tokenize("w0 w1 w2 w3 w4 w5 w6", vocab, 12);
    const auto a = encode(seq, &prompts, params);
    const auto b = encode(seq, &prompts, toy_params(0));
    CHECK(a.rows == b.rows);
    // Float-rounded output, so tiny last-bit differences across platforms don't count.
    CHECK(checksum(a.rows) == 0x7d0d77e48d92f8ffULL);
}

TEST_CASE("random parameters are float-representable and bounded") {
    const auto params = toy_params(3);
    params.for_each([&](const std::string& name, const Matrix& m) {
        for (double v : m.data()) CHECK(v == static_cast<double>(static_cast<float>(v)));
        if (name.find(".b") != std::string::npos) {
            for (double v : m.data()) CHECK(v == 0.0);
        }
    });
    const double bound = 1.0 / std::sqrt(16.0);
    for (double v : params.layers[0].wq.data()) CHECK(std::abs(v) <= bound);
    CHECK(params.parameter_count() ==
          24 * 16 + 16 * 16 + 2 * (4 * 16 * 16 + 16 * 64 + 64 + 64 * 16 + 16));
}

TEST_CASE("reparameterize closed form") {
    // With W1 = 0 every row maps to tanh(b1) W2 + b2.
    auto rng = SeededRng::stream(9, "reparam");
    PromptState psi = PromptState::random(3, 2, 4, rng);
    psi.w1.fill(0.0);
    for (double& v : psi.b1.data()) v = rng.uniform(-1, 1);
    for (double& v : psi.b2.data()) v = rng.uniform(-1, 1);
    const auto out = generate_prompts(psi);
    std::vector<double> expected(4, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
        expected[j] = psi.b2(0, j);
        for (std::size_t t = 0; t < 4; ++t) expected[j] += std::tanh(psi.b1(0, t)) * psi.w2(t, j);
    }
    CHECK(out.prompts.rows() == 3);
    CHECK(out.prefixes.rows() == 6);
    for (const Matrix* m : {&out.prompts, &out.prefixes})
        for (std::size_t r = 0; r < m->rows(); ++r)
            for (std::size_t j = 0; j < 4; ++j) CHECK((*m)(r, j) == doctest::Approx(expected[j]).epsilon(1e-14));
}

TEST_CASE("pool_snippet") {
    using cps::testing::make_rep;
    const auto one = make_rep({{0.6, 0.8}, {0, 0}}, {true, false});
    CHECK(pool_snippet(one) == std::vector<double>{0.6, 0.8});

    const auto two = make_rep({{1, 0}, {0, 1}});
    const auto f = pool_snippet(two);
    CHECK(f[0] == doctest::Approx(std::sqrt(0.5)));
    CHECK(f[1] == doctest::Approx(std::sqrt(0.5)));

    CHECK_THROWS_AS(pool_snippet(make_rep({{1, 0}, {-1, 0}})), NumericalError);
    CHECK_THROWS_AS(pool_snippet(make_rep({{1, 0}}, {false})), NumericalError);
}
