#include "cpsearch/trainer.hpp"

#include <cmath>
#include <map>

#include "cpsearch/interaction.hpp"

namespace cps {

std::string to_string(TrainMode m) { return m == TrainMode::kPrompt ? "pt" : "ft"; }
std::string to_string(Scoring s) { return s == Scoring::kInteraction ? "interaction" : "cosine"; }

TrainMode parse_mode(const std::string& s) {
    if (s == "pt" || s == "prompt") return TrainMode::kPrompt;
    if (s == "ft" || s == "finetune") return TrainMode::kFinetune;
    throw ConfigError("unknown mode \"" + s + "\" (expected ft or pt)");
}

Scoring parse_scoring(const std::string& s) {
    if (s == "interaction") return Scoring::kInteraction;
    if (s == "cosine") return Scoring::kCosine;
    throw ConfigError("unknown scoring \"" + s + "\" (expected interaction or cosine)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
    if (batch_size < 2) fail("batch_size must be at least 2");
    if (!(tau > 1e-4 && tau <= 10.0)) fail("tau must lie in (1e-4, 10]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (mode == TrainMode::kPrompt && (kc == 0 || kt == 0))
        fail("prompt mode needs kc >= 1 and kt >= 1");
    if (d == 0 || heads == 0 || d % heads != 0) fail("d must be a positive multiple of heads");
    if (layers == 0) fail("layers must be at least 1");
    if (max_len_code < 3 || max_len_query < 3) fail("max lengths must be at least 3");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"mode", to_string(mode)},
                          {"scoring", to_string(scoring)},
                          {"batch_size", batch_size},
                          {"learning_rate", learning_rate},
                          {"epochs", epochs},
                          {"tau", tau},
                          {"lambda", lambda},
                          {"kc", kc},
                          {"kt", kt},
                          {"d", d},
                          {"layers", layers},
                          {"heads", heads},
                          {"max_len_code", max_len_code},
                          {"max_len_query", max_len_query},
                          {"seed", seed},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"eps", eps},
                          {"weight_decay", weight_decay}};
}

void TrainConfig::merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config JSON must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        try {
            if (key == "mode") mode = parse_mode(v.get<std::string>());
            else if (key == "scoring") scoring = parse_scoring(v.get<std::string>());
            else if (key == "batch_size") batch_size = v.get<std::size_t>();
            else if (key == "learning_rate") learning_rate = v.get<double>();
            else if (key == "epochs") epochs = v.get<std::size_t>();
            else if (key == "tau") tau = v.get<double>();
            else if (key == "lambda") lambda = v.get<double>();
            else if (key == "kc") kc = v.get<std::size_t>();
            else if (key == "kt") kt = v.get<std::size_t>();
            else if (key == "d") d = v.get<std::size_t>();
            else if (key == "layers") layers = v.get<std::size_t>();
            else if (key == "heads") heads = v.get<std::size_t>();
            else if (key == "max_len_code") max_len_code = v.get<std::size_t>();
            else if (key == "max_len_query") max_len_query = v.get<std::size_t>();
            else if (key == "seed") seed = v.get<std::uint64_t>();
            else if (key == "beta1") beta1 = v.get<double>();
            else if (key == "beta2") beta2 = v.get<double>();
            else if (key == "eps") eps = v.get<double>();
            else if (key == "weight_decay") weight_decay = v.get<double>();
            else throw ConfigError("unknown config key \"" + key + "\"");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key \"" + key + "\": " + e.what());
        }
    }
}

namespace {

void prefixed(const std::string& prefix, EncoderParams& p,
              const std::function<void(const std::string&, Matrix&)>& fn) {
    p.for_each([&](const std::string& n, Matrix& m) { fn(prefix + n, m); });
}

void prefixed(const std::string& prefix, PromptState& p,
              const std::function<void(const std::string&, Matrix&)>& fn) {
    p.for_each([&](const std::string& n, Matrix& m) { fn(prefix + n, m); });
}

}  // namespace

void Checkpoint::for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn) {
    if (shared_base()) {
        prefixed("encoder.", code_encoder, fn);
    } else {
        prefixed("code_encoder.", code_encoder, fn);
        prefixed("query_encoder.", *query_encoder, fn);
    }
    if (code_prompt) prefixed("code_prompt.", *code_prompt, fn);
    if (query_prompt) prefixed("query_prompt.", *query_prompt, fn);
}

void Checkpoint::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<Checkpoint*>(this)->for_each_tensor(
        [&](const std::string& n, Matrix& m) { fn(n, m); });
}

void Checkpoint::for_each_trainable(const std::function<void(const std::string&, Matrix&)>& fn) {
    if (config.mode == TrainMode::kPrompt) {
        prefixed("code_prompt.", *code_prompt, fn);
        prefixed("query_prompt.", *query_prompt, fn);
    } else {
        prefixed("code_encoder.", code_encoder, fn);
        prefixed("query_encoder.", *query_encoder, fn);
    }
}

std::size_t Checkpoint::trainable_parameter_count() const {
    std::size_t n = 0;
    const_cast<Checkpoint*>(this)->for_each_trainable(
        [&](const std::string&, Matrix& m) { n += m.size(); });
    return n;
}

std::size_t Checkpoint::total_parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
    return serialize_checkpoint(*this) == serialize_checkpoint(other);
}

Gradients Gradients::zeros_like(const Checkpoint& cp) {
    Gradients g;
    if (cp.config.mode == TrainMode::kPrompt) {
        const auto& a = *cp.code_prompt;
        const auto& b = *cp.query_prompt;
        g.code_prompt = PromptState::zeros(a.length, a.layers, a.d);
        g.query_prompt = PromptState::zeros(b.length, b.layers, b.d);
    } else {
        g.code_encoder = EncoderParams::zeros(cp.code_encoder.dims);
        g.query_encoder = EncoderParams::zeros(cp.query_base().dims);
    }
    return g;
}

void Gradients::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    if (code_prompt) {
        prefixed("code_prompt.", *code_prompt, fn);
        prefixed("query_prompt.", *query_prompt, fn);
    } else {
        prefixed("code_encoder.", *code_encoder, fn);
        prefixed("query_encoder.", *query_encoder, fn);
    }
}

Checkpoint initialize(const TrainConfig& config_in, const Vocabulary& vocab, const Checkpoint* base) {
    TrainConfig config = config_in;
    if (config.mode == TrainMode::kFinetune) config.kc = config.kt = 0;
    config.validate();

    Checkpoint cp;
    cp.config = config;
    cp.vocab_hash = vocab.hash();
    cp.vocab_size = vocab.size();
    EncoderDims dims{vocab.size(), config.d, config.layers, config.heads, 0};

    if (config.mode == TrainMode::kFinetune) {
        if (base) throw ConfigError("a base checkpoint only applies to prompt mode");
        auto rc = SeededRng::stream(config.seed, "encoder.code");
        auto rq = SeededRng::stream(config.seed, "encoder.query");
        dims.max_len = config.max_len_code;
        cp.code_encoder = EncoderParams::random(dims, rc);
        dims.max_len = config.max_len_query;
        cp.query_encoder = EncoderParams::random(dims, rq);
        return cp;
    }

    if (base) {
        if (base->vocab_hash != cp.vocab_hash) throw ConfigError("base checkpoint was built with another vocabulary");
        const auto& bd = base->code_encoder.dims;
        if (bd.d != config.d || bd.layers != config.layers || bd.heads != config.heads)
            throw ConfigError("base checkpoint dimensions differ from the config");
        if (base->code_encoder.dims.max_len < config.max_len_code ||
            base->query_base().dims.max_len < config.max_len_query)
            throw ConfigError("base checkpoint positional table is shorter than the max lengths");
        cp.code_encoder = base->code_encoder;
        cp.query_encoder = base->query_encoder;
    } else {
        auto rb = SeededRng::stream(config.seed, "encoder.base");
        dims.max_len = std::max(config.max_len_code, config.max_len_query);
        cp.code_encoder = EncoderParams::random(dims, rb);
    }
    auto pc = SeededRng::stream(config.seed, "prompt.code");
    auto pq = SeededRng::stream(config.seed, "prompt.query");
    cp.code_prompt = PromptState::random(config.kc, config.layers, config.d, pc);
    cp.query_prompt = PromptState::random(config.kt, config.layers, config.d, pq);
    return cp;
}

TokenRepresentation encode_code(const Checkpoint& cp, const TokenSequence& seq) {
    if (cp.code_prompt) {
        const auto p = generate_prompts(*cp.code_prompt);
        return encode(seq, &p, cp.code_encoder);
    }
    return encode(seq, nullptr, cp.code_encoder);
}

TokenRepresentation encode_query(const Checkpoint& cp, const TokenSequence& seq) {
    if (cp.query_prompt) {
        const auto p = generate_prompts(*cp.query_prompt);
        return encode(seq, &p, cp.query_base());
    }
    return encode(seq, nullptr, cp.query_base());
}

TokenSequence tokenize_code(const Checkpoint& cp, const Vocabulary& vocab, std::string_view text) {
    return tokenize(text, vocab, cp.config.max_len_code);
}

TokenSequence tokenize_query(const Checkpoint& cp, const Vocabulary& vocab, std::string_view text) {
    return tokenize(text, vocab, cp.config.max_len_query);
}

namespace {

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

}  // namespace

LossValue batch_objective(const Checkpoint& cp, std::span<const TokenSequence> codes,
                          std::span<const TokenSequence> queries, Gradients* grads) {
    const std::size_t n = codes.size();
    if (queries.size() != n || n == 0) throw NumericalError("batch_objective: bad batch shape");
    const auto& cfg = cp.config;

    PromptOutputs code_p, query_p;
    ReparamCache code_rc, query_rc;
    if (cp.code_prompt) code_p = generate_prompts(*cp.code_prompt, &code_rc);
    if (cp.query_prompt) query_p = generate_prompts(*cp.query_prompt, &query_rc);

    std::vector<EncodeCache> code_cache(grads ? n : 0), query_cache(grads ? n : 0);
    std::vector<TokenRepresentation> rx, ry;
    rx.reserve(n);
    ry.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        rx.push_back(encode(codes[i], cp.code_prompt ? &code_p : nullptr, cp.code_encoder, {},
                            grads ? &code_cache[i] : nullptr));
        ry.push_back(encode(queries[i], cp.query_prompt ? &query_p : nullptr, cp.query_base(), {},
                            grads ? &query_cache[i] : nullptr));
    }

    Matrix scores;
    std::vector<std::vector<double>> fx, fy;
    if (cfg.scoring == Scoring::kInteraction) {
        scores = batch_scores(rx, ry, cfg.lambda);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            fx.push_back(pool_snippet(rx[i]));
            fy.push_back(pool_snippet(ry[i]));
        }
        scores = cosine_batch_scores(fx, fy);
    }
    const LossValue loss = batch_loss(scores, cfg.tau);
    if (!std::isfinite(loss.total)) throw NumericalError("non-finite loss");
    if (!grads) return loss;

    const Matrix ds = batch_loss_grad(scores, cfg.tau);
    RepGradients rg;
    if (cfg.scoring == Scoring::kInteraction) {
        rg = batch_scores_backward(rx, ry, cfg.lambda, ds);
    } else {
        const std::size_t d = fx.front().size();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> gx(d, 0.0), gy(d, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t c = 0; c < d; ++c) {
                    gx[c] += ds(i, j) * fy[j][c];
                    gy[c] += ds(j, i) * fx[j][c];
                }
            }
            rg.dx.push_back(backward_pool(rx[i], gx));
            rg.dy.push_back(backward_pool(ry[i], gy));
        }
    }

    PromptOutputs code_pg_sum, query_pg_sum;
    if (cp.code_prompt) {
        code_pg_sum = {Matrix(code_p.prompts.rows(), cfg.d), Matrix(code_p.prefixes.rows(), cfg.d)};
        query_pg_sum = {Matrix(query_p.prompts.rows(), cfg.d), Matrix(query_p.prefixes.rows(), cfg.d)};
    }
    EncoderParams* code_eg = grads->code_encoder ? &*grads->code_encoder : nullptr;
    EncoderParams* query_eg = grads->query_encoder ? &*grads->query_encoder : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
        PromptOutputs pg;
        backward_encode(code_cache[i], rg.dx[i], cp.code_encoder, code_eg,
                        cp.code_prompt ? &pg : nullptr);
        if (cp.code_prompt) {
            add_into(code_pg_sum.prompts, pg.prompts);
            add_into(code_pg_sum.prefixes, pg.prefixes);
        }
        backward_encode(query_cache[i], rg.dy[i], cp.query_base(), query_eg,
                        cp.query_prompt ? &pg : nullptr);
        if (cp.query_prompt) {
            add_into(query_pg_sum.prompts, pg.prompts);
            add_into(query_pg_sum.prefixes, pg.prefixes);
        }
    }
    if (cp.code_prompt && grads->code_prompt)
        backward_prompts(*cp.code_prompt, code_rc, code_pg_sum, *grads->code_prompt);
    if (cp.query_prompt && grads->query_prompt)
        backward_prompts(*cp.query_prompt, query_rc, query_pg_sum, *grads->query_prompt);
    return loss;
}

namespace {

class AdamW {
public:
    explicit AdamW(const TrainConfig& c) : cfg_(c) {}

    void step(Checkpoint& cp, Gradients& grads) {
        ++t_;
        std::vector<Matrix*> gs;
        grads.for_each([&](const std::string&, Matrix& g) { gs.push_back(&g); });
        if (first_.empty()) {
            for (auto* g : gs) {
                first_.emplace_back(g->rows(), g->cols());
                second_.emplace_back(g->rows(), g->cols());
            }
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        std::size_t idx = 0;
        cp.for_each_trainable([&](const std::string&, Matrix& p) {
            auto& g = gs[idx]->data();
            auto& m = first_[idx].data();
            auto& v = second_[idx].data();
            auto& w = p.data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                w[i] -= cfg_.learning_rate * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
            }
            ++idx;
        });
    }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Matrix> first_, second_;
};

}  // namespace

Checkpoint train(const std::vector<Document>& docs, const Vocabulary& vocab,
                 const TrainConfig& config, const Checkpoint* base,
                 const std::function<void(const EpochReport&)>& on_epoch) {
    if (docs.empty()) throw DataError("train: empty corpus");
    Checkpoint cp = initialize(config, vocab, base);
    const TrainConfig& cfg = cp.config;
    if (docs.size() < cfg.batch_size)
        throw ConfigError("train: corpus has fewer pairs than batch_size");

    std::vector<TokenSequence> codes, queries;
    codes.reserve(docs.size());
    queries.reserve(docs.size());
    for (const auto& d : docs) {
        try {
            codes.push_back(tokenize(d.code_text, vocab, cfg.max_len_code));
            queries.push_back(tokenize(d.doc_text, vocab, cfg.max_len_query));
        } catch (const DataError& e) {
            throw DataError("document \"" + d.id + "\": " + e.what());
        }
    }

    auto shuffle_rng = SeededRng::stream(cfg.seed, "shuffle");
    AdamW opt(cfg);
    std::vector<TokenSequence> bc, bq;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = make_batches(docs.size(), cfg.batch_size, shuffle_rng, BatchMode::kTraining);
        double sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            bc.clear();
            bq.clear();
            for (std::size_t i : batches[b]) {
                bc.push_back(codes[i]);
                bq.push_back(queries[i]);
            }
            Gradients grads = Gradients::zeros_like(cp);
            LossValue loss;
            try {
                loss = batch_objective(cp, bc, bq, &grads);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b + 1));
            }
            sum += loss.total;
            opt.step(cp, grads);
        }
        const double mean = sum / static_cast<double>(batches.size());
        cp.epoch_losses.push_back(mean);
        if (on_epoch) on_epoch({epoch, mean});
    }
    cp.for_each_trainable([](const std::string&, Matrix& m) { round_to_float(m); });
    return cp;
}

}  // namespace cps
