#include <algorithm>
#include <cmath>

#include "cpsearch/interaction.hpp"
#include "cpsearch/trainer.hpp"

namespace cps {

namespace {

TokenSequence random_sequence(SeededRng& rng, std::size_t vocab_size, std::size_t max_true,
                              std::size_t padded) {
    const std::size_t len = 3 + static_cast<std::size_t>(rng.below(max_true - 2));
    TokenSequence s;
    s.ids.assign(padded, kPadId);
    s.mask.assign(padded, false);
    s.ids[0] = kClsId;
    for (std::size_t i = 1; i + 1 < len; ++i)
        s.ids[i] = static_cast<std::int32_t>(kReservedCount + rng.below(vocab_size - kReservedCount));
    s.ids[len - 1] = kSepId;
    s.true_length = len;
    for (std::size_t i = 0; i < len; ++i) s.mask[i] = true;
    return s;
}

struct BatchReps {
    std::vector<TokenRepresentation> x, y;
};

BatchReps encode_batch(const Checkpoint& cp, std::span<const TokenSequence> codes,
                       std::span<const TokenSequence> queries) {
    BatchReps r;
    for (const auto& s : codes) r.x.push_back(encode_code(cp, s));
    for (const auto& s : queries) r.y.push_back(encode_query(cp, s));
    return r;
}

// Every argmax chosen by the max-pooling, in a fixed order. Finite differences
// are only meaningful when a perturbation leaves this unchanged.
std::vector<long> argmax_signature(const BatchReps& reps) {
    std::vector<long> sig;
    for (const auto& rx : reps.x) {
        for (const auto& ry : reps.y) {
            auto f = pool_factors(interaction_matrix(rx, ry), rx.valid, ry.valid);
            sig.insert(sig.end(), f.row_argmax.begin(), f.row_argmax.end());
            sig.insert(sig.end(), f.col_argmax.begin(), f.col_argmax.end());
        }
    }
    return sig;
}

}  // namespace

GradCheckReport grad_check(const TrainConfig& config, const GradCheckOptions& options) {
    std::vector<std::string> tokens;
    for (std::size_t i = kReservedCount; i < options.vocab_size; ++i) tokens.push_back("t" + std::to_string(i));
    const Vocabulary vocab(tokens);

    TrainConfig cfg = config;
    cfg.seed = options.seed;
    const Checkpoint base = initialize(cfg, vocab);
    const bool interaction = cfg.scoring == Scoring::kInteraction;

    GradCheckReport report;
    auto rng = SeededRng::stream(options.seed, "gradcheck.batch");
    std::vector<TokenSequence> codes, queries;
    for (std::size_t attempt = 0;; ++attempt) {
        if (attempt == 100) throw NumericalError("grad_check: no batch clear of max-pooling ties");
        codes.clear();
        queries.clear();
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            codes.push_back(random_sequence(rng, vocab.size(), std::min(options.max_seq_len, cfg.max_len_code),
                                            cfg.max_len_code));
            queries.push_back(random_sequence(rng, vocab.size(), std::min(options.max_seq_len, cfg.max_len_query),
                                              cfg.max_len_query));
        }
        if (!interaction) break;
        const auto reps = encode_batch(base, codes, queries);
        if (min_max_margin(reps.x, reps.y) >= options.min_margin) break;
        ++report.batches_rejected;
    }

    Checkpoint cp = base;
    Gradients grads = Gradients::zeros_like(cp);
    batch_objective(cp, codes, queries, &grads);
    const auto base_sig = interaction ? argmax_signature(encode_batch(cp, codes, queries)) : std::vector<long>{};

    std::vector<std::pair<std::string, Matrix*>> params;
    std::vector<Matrix*> analytic;
    cp.for_each_trainable([&](const std::string& n, Matrix& m) { params.emplace_back(n, &m); });
    grads.for_each([&](const std::string&, Matrix& m) { analytic.push_back(&m); });

    auto sample_rng = SeededRng::stream(options.seed, "gradcheck.coords");
    const double h = options.step;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& [name, param] = params[t];
        report.tensors.push_back(name);
        std::vector<std::size_t> coords(param->size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > options.samples_per_tensor) {
            shuffle(coords, sample_rng);
            coords.resize(options.samples_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t idx : coords) {
            double& w = param->data()[idx];
            const double orig = w;
            w = orig + h;
            const double lp = batch_objective(cp, codes, queries, nullptr).total;
            const bool flip_p = interaction && argmax_signature(encode_batch(cp, codes, queries)) != base_sig;
            w = orig - h;
            const double lm = batch_objective(cp, codes, queries, nullptr).total;
            const bool flip_m = interaction && argmax_signature(encode_batch(cp, codes, queries)) != base_sig;
            w = orig;
            if (flip_p || flip_m) {
                ++report.coordinates_skipped;
                continue;
            }
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[t]->data()[idx];
            const double scale = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / scale;
            ++report.coordinates_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_tensor = name;
                report.worst_index = idx;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace cps
