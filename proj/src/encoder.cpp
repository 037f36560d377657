#include "cpsearch/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cps {

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, SeededRng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    round_to_float(m);
    return m;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias.data()[c];
    }
}

void add_column_sums(const Matrix& m, Matrix& out) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out.data()[c] += row[c];
    }
}

void add_into(Matrix& dst, const Matrix& src) {
    auto& d = dst.data();
    const auto& s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void check_finite(const Matrix& m, const char* where) {
    if (!m.all_finite()) throw NumericalError(std::string("NaN detected in ") + where);
}

}  // namespace

EncoderParams EncoderParams::zeros(const EncoderDims& dims) {
    if (dims.d == 0 || dims.heads == 0 || dims.d % dims.heads != 0)
        throw ConfigError("encoder: embedding dim must be a positive multiple of heads");
    EncoderParams p;
    p.dims = dims;
    p.embed = Matrix(dims.vocab_size, dims.d);
    p.position = Matrix(dims.max_len, dims.d);
    const std::size_t d = dims.d, ff = 4 * dims.d;
    for (std::size_t l = 0; l < dims.layers; ++l) {
        p.layers.push_back(LayerParams{Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d),
                                       Matrix(d, ff), Matrix(1, ff), Matrix(ff, d), Matrix(1, d)});
    }
    return p;
}

EncoderParams EncoderParams::random(const EncoderDims& dims, SeededRng& rng) {
    EncoderParams p = zeros(dims);
    const std::size_t d = dims.d, ff = 4 * dims.d;
    const double bd = 1.0 / std::sqrt(static_cast<double>(d));
    const double bff = 1.0 / std::sqrt(static_cast<double>(ff));
    p.embed = uniform_matrix(dims.vocab_size, d, bd, rng);
    p.position = uniform_matrix(dims.max_len, d, bd, rng);
    for (auto& layer : p.layers) {
        layer.wq = uniform_matrix(d, d, bd, rng);
        layer.wk = uniform_matrix(d, d, bd, rng);
        layer.wv = uniform_matrix(d, d, bd, rng);
        layer.wo = uniform_matrix(d, d, bd, rng);
        layer.w1 = uniform_matrix(d, ff, bd, rng);
        layer.w2 = uniform_matrix(ff, d, bff, rng);
    }
    return p;
}

void EncoderParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("embed", embed);
    fn("position", position);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto& L = layers[l];
        fn(p + "wq", L.wq);
        fn(p + "wk", L.wk);
        fn(p + "wv", L.wv);
        fn(p + "wo", L.wo);
        fn(p + "w1", L.w1);
        fn(p + "b1", L.b1);
        fn(p + "w2", L.w2);
        fn(p + "b2", L.b2);
    }
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<EncoderParams*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t EncoderParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

PromptState PromptState::zeros(std::size_t k, std::size_t layers, std::size_t d) {
    PromptState s;
    s.length = k;
    s.layers = layers;
    s.d = d;
    s.seed = Matrix(k, d);
    s.deep_seed = Matrix(k * layers, d);
    s.w1 = Matrix(d, d);
    s.b1 = Matrix(1, d);
    s.w2 = Matrix(d, d);
    s.b2 = Matrix(1, d);
    return s;
}

PromptState PromptState::random(std::size_t k, std::size_t layers, std::size_t d,
                                SeededRng& rng) {
    PromptState s = zeros(k, layers, d);
    const double bd = 1.0 / std::sqrt(static_cast<double>(d));
    s.seed = uniform_matrix(k, d, 1.0, rng);
    s.deep_seed = uniform_matrix(k * layers, d, 1.0, rng);
    s.w1 = uniform_matrix(d, d, bd, rng);
    s.w2 = uniform_matrix(d, d, bd, rng);
    return s;
}

void PromptState::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("seed", seed);
    fn("deep_seed", deep_seed);
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
}

void PromptState::for_each(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
    const_cast<PromptState*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t PromptState::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

PromptOutputs reparameterize(const Matrix& prompts, const Matrix& prefixes,
                             const PromptState& psi, ReparamCache* cache) {
    const std::size_t d = psi.d;
    if (prompts.cols() != d || prefixes.cols() != d || psi.w1.rows() != d || psi.w2.cols() != d)
        throw NumericalError("reparameterize: shape mismatch with reparameterization network");
    Matrix stacked(prompts.rows() + prefixes.rows(), d);
    std::copy(prompts.data().begin(), prompts.data().end(), stacked.data().begin());
    std::copy(prefixes.data().begin(), prefixes.data().end(),
              stacked.data().begin() + static_cast<std::ptrdiff_t>(prompts.size()));

    Matrix hidden = matmul(stacked, psi.w1);
    add_row_bias(hidden, psi.b1);
    for (double& v : hidden.data()) v = std::tanh(v);
    Matrix out = matmul(hidden, psi.w2);
    add_row_bias(out, psi.b2);

    PromptOutputs result;
    result.prompts = Matrix(prompts.rows(), d,
                            std::vector<double>(out.data().begin(),
                                                out.data().begin() + static_cast<std::ptrdiff_t>(prompts.size())));
    result.prefixes = Matrix(prefixes.rows(), d,
                             std::vector<double>(out.data().begin() + static_cast<std::ptrdiff_t>(prompts.size()),
                                                 out.data().end()));
    if (cache) {
        cache->input = std::move(stacked);
        cache->hidden = std::move(hidden);
    }
    return result;
}

PromptOutputs generate_prompts(const PromptState& prompt, ReparamCache* cache) {
    return reparameterize(prompt.seed, prompt.deep_seed, prompt, cache);
}

void backward_prompts(const PromptState& prompt, const ReparamCache& cache,
                      const PromptOutputs& grad_out, PromptState& grad) {
    const std::size_t d = prompt.d;
    const std::size_t np = grad_out.prompts.rows();
    Matrix dout(cache.input.rows(), d);
    std::copy(grad_out.prompts.data().begin(), grad_out.prompts.data().end(), dout.data().begin());
    std::copy(grad_out.prefixes.data().begin(), grad_out.prefixes.data().end(),
              dout.data().begin() + static_cast<std::ptrdiff_t>(np * d));

    matmul_tn_acc(cache.hidden, dout, grad.w2);
    add_column_sums(dout, grad.b2);
    Matrix dz = matmul_nt(dout, prompt.w2);
    for (std::size_t i = 0; i < dz.size(); ++i) {
        const double h = cache.hidden.data()[i];
        dz.data()[i] *= 1.0 - h * h;
    }
    matmul_tn_acc(cache.input, dz, grad.w1);
    add_column_sums(dz, grad.b1);
    Matrix dx = matmul_nt(dz, prompt.w1);
    for (std::size_t i = 0; i < np * d; ++i) grad.seed.data()[i] += dx.data()[i];
    for (std::size_t i = np * d; i < dx.size(); ++i) grad.deep_seed.data()[i - np * d] += dx.data()[i];
}

Matrix reconstruct_input(const Matrix* prompts, const TokenSequence& seq,
                         const EncoderParams& params) {
    const std::size_t d = params.dims.d;
    const std::size_t k = prompts ? prompts->rows() : 0;
    const std::size_t len = seq.true_length;
    if (prompts && prompts->cols() != d) throw NumericalError("reconstruct_input: prompt width mismatch");
    if (seq.padded_length() > params.dims.max_len)
        throw NumericalError("reconstruct_input: sequence longer than the positional table");
    Matrix h(k + len, d);
    for (std::size_t i = 0; i < k; ++i) std::copy_n(prompts->row(i).begin(), d, h.row(i).begin());
    for (std::size_t t = 0; t < len; ++t) {
        const auto id = seq.ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= params.dims.vocab_size)
            throw NumericalError("reconstruct_input: token id outside the embedding table");
        auto e = params.embed.row(static_cast<std::size_t>(id));
        auto p = params.position.row(t);
        auto out = h.row(k + t);
        for (std::size_t c = 0; c < d; ++c) out[c] = e[c] + p[c];
    }
    return h;
}

std::size_t TokenRepresentation::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

TokenRepresentation encode(const TokenSequence& seq, const PromptOutputs* prompts,
                           const EncoderParams& params, const EncodeOptions& options,
                           EncodeCache* cache) {
    const auto& dims = params.dims;
    const std::size_t d = dims.d, heads = dims.heads, dh = d / heads;
    const std::size_t k = prompts ? prompts->prompts.rows() : 0;
    if (prompts && prompts->prefixes.rows() != k * dims.layers)
        throw NumericalError("encode: prefix tensor does not match prompt length and layer count");
    const std::size_t len = seq.true_length;
    const std::size_t T = k + len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    // Keys [0, k) are prefix slots, [k, k+k) prompt rows, the rest real tokens.
    const std::size_t first_key = options.mask_prompts ? 2 * k : 0;

    Matrix h = reconstruct_input(prompts ? &prompts->prompts : nullptr, seq, params);
    if (cache) {
        cache->prompt_len = k;
        cache->padded_len = seq.padded_length();
        cache->ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(len));
        cache->options = options;
        cache->layers.clear();
    }

    std::vector<double> scores(k + T);
    for (std::size_t l = 0; l < dims.layers; ++l) {
        const auto& P = params.layers[l];
        LayerCache lc;
        Matrix q = matmul(h, P.wq);
        Matrix kt = matmul(h, P.wk);
        Matrix vt = matmul(h, P.wv);
        Matrix keys(k + T, d), values(k + T, d);
        for (std::size_t s = 0; s < k; ++s) {
            auto src = prompts->prefixes.row(s * dims.layers + l);
            std::copy(src.begin(), src.end(), keys.row(s).begin());
            std::copy(src.begin(), src.end(), values.row(s).begin());
        }
        std::copy(kt.data().begin(), kt.data().end(), keys.data().begin() + static_cast<std::ptrdiff_t>(k * d));
        std::copy(vt.data().begin(), vt.data().end(), values.data().begin() + static_cast<std::ptrdiff_t>(k * d));

        Matrix mixed(T, d);
        std::vector<Matrix> attn;
        attn.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t off = hd * dh;
            Matrix a(T, k + T);
            for (std::size_t i = 0; i < T; ++i) {
                const double* qi = q.row(i).data() + off;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = first_key; j < k + T; ++j) {
                    const double* kj = keys.row(j).data() + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    scores[j] = s * scale;
                    mx = std::max(mx, scores[j]);
                }
                double sum = 0.0;
                for (std::size_t j = first_key; j < k + T; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                auto arow = a.row(i);
                double* out = mixed.row(i).data() + off;
                for (std::size_t j = first_key; j < k + T; ++j) {
                    const double w = scores[j] / sum;
                    arow[j] = w;
                    const double* vj = values.row(j).data() + off;
                    for (std::size_t c = 0; c < dh; ++c) out[c] += w * vj[c];
                }
            }
            attn.push_back(std::move(a));
        }

        Matrix h1 = matmul(mixed, P.wo);
        add_into(h1, h);
        Matrix ff = matmul(h1, P.w1);
        add_row_bias(ff, P.b1);
        for (double& v : ff.data()) v = std::tanh(v);
        Matrix h2 = matmul(ff, P.w2);
        add_row_bias(h2, P.b2);
        add_into(h2, h1);
        check_finite(h2, "encoder activations");

        if (cache) {
            lc.input = std::move(h);
            lc.query = std::move(q);
            lc.keys = std::move(keys);
            lc.values = std::move(values);
            lc.attention = std::move(attn);
            lc.mixed = std::move(mixed);
            lc.hidden1 = std::move(h1);
            lc.ff = std::move(ff);
            cache->layers.push_back(std::move(lc));
        }
        h = std::move(h2);
    }

    TokenRepresentation rep;
    rep.rows = Matrix(seq.padded_length(), d);
    rep.valid.assign(seq.padded_length(), false);
    std::vector<double> norms(len);
    for (std::size_t t = 0; t < len; ++t) {
        auto src = h.row(k + t);
        const double n = norm2(src);
        if (!(n >= 1e-12)) throw NumericalError("encode: degenerate token representation");
        norms[t] = n;
        auto dst = rep.rows.row(t);
        for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] / n;
        rep.valid[t] = true;
    }
    if (cache) {
        cache->final_hidden = std::move(h);
        cache->norms = std::move(norms);
    }
    return rep;
}

void backward_encode(const EncodeCache& cache, const Matrix& grad_rows,
                     const EncoderParams& params, EncoderParams* param_grad,
                     PromptOutputs* prompt_grad) {
    const auto& dims = params.dims;
    const std::size_t d = dims.d, heads = dims.heads, dh = d / heads;
    const std::size_t k = cache.prompt_len;
    const std::size_t len = cache.ids.size();
    const std::size_t T = k + len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t first_key = cache.options.mask_prompts ? 2 * k : 0;
    if (cache.layers.size() != dims.layers || cache.final_hidden.rows() != T)
        throw NumericalError("backward_encode: missing forward intermediates");

    // Through the final row normalization.
    Matrix dh_cur(T, d);
    for (std::size_t t = 0; t < len; ++t) {
        auto g = grad_rows.row(t);
        auto hrow = cache.final_hidden.row(k + t);
        const double n = cache.norms[t];
        double yg = 0.0;
        for (std::size_t c = 0; c < d; ++c) yg += (hrow[c] / n) * g[c];
        auto out = dh_cur.row(k + t);
        for (std::size_t c = 0; c < d; ++c) out[c] = (g[c] - (hrow[c] / n) * yg) / n;
    }

    if (prompt_grad) {
        prompt_grad->prompts = Matrix(k, d);
        prompt_grad->prefixes = Matrix(k * dims.layers, d);
    }

    for (std::size_t li = dims.layers; li-- > 0;) {
        const auto& P = params.layers[li];
        const auto& lc = cache.layers[li];
        LayerParams* G = param_grad ? &param_grad->layers[li] : nullptr;

        // Feed-forward block: H2 = H1 + tanh(H1 W1 + b1) W2 + b2.
        const Matrix& d_out = dh_cur;
        if (G) {
            matmul_tn_acc(lc.ff, d_out, G->w2);
            add_column_sums(d_out, G->b2);
        }
        Matrix dz = matmul_nt(d_out, P.w2);
        for (std::size_t i = 0; i < dz.size(); ++i) {
            const double a = lc.ff.data()[i];
            dz.data()[i] *= 1.0 - a * a;
        }
        if (G) {
            matmul_tn_acc(lc.hidden1, dz, G->w1);
            add_column_sums(dz, G->b1);
        }
        Matrix dh1 = matmul_nt(dz, P.w1);
        add_into(dh1, d_out);

        // Attention block: H1 = H + mixed Wo.
        if (G) matmul_tn_acc(lc.mixed, dh1, G->wo);
        Matrix dmixed = matmul_nt(dh1, P.wo);
        Matrix dq(T, d), dkeys(k + T, d), dvalues(k + T, d);
        std::vector<double> da(k + T);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t off = hd * dh;
            const Matrix& a = lc.attention[hd];
            for (std::size_t i = 0; i < T; ++i) {
                const double* go = dmixed.row(i).data() + off;
                auto arow = a.row(i);
                double weighted = 0.0;
                for (std::size_t j = first_key; j < k + T; ++j) {
                    const double* vj = lc.values.row(j).data() + off;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                    da[j] = s;
                    weighted += arow[j] * s;
                    double* dvj = dvalues.row(j).data() + off;
                    for (std::size_t c = 0; c < dh; ++c) dvj[c] += arow[j] * go[c];
                }
                const double* qi = lc.query.row(i).data() + off;
                double* dqi = dq.row(i).data() + off;
                for (std::size_t j = first_key; j < k + T; ++j) {
                    const double ds = arow[j] * (da[j] - weighted) * scale;
                    if (ds == 0.0) continue;
                    const double* kj = lc.keys.row(j).data() + off;
                    double* dkj = dkeys.row(j).data() + off;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }

        if (prompt_grad) {
            for (std::size_t s = 0; s < k; ++s) {
                auto dst = prompt_grad->prefixes.row(s * dims.layers + li);
                auto gk = dkeys.row(s);
                auto gv = dvalues.row(s);
                for (std::size_t c = 0; c < d; ++c) dst[c] += gk[c] + gv[c];
            }
        }
        Matrix dkt(T, d, std::vector<double>(dkeys.data().begin() + static_cast<std::ptrdiff_t>(k * d),
                                             dkeys.data().end()));
        Matrix dvt(T, d, std::vector<double>(dvalues.data().begin() + static_cast<std::ptrdiff_t>(k * d),
                                             dvalues.data().end()));
        if (G) {
            matmul_tn_acc(lc.input, dq, G->wq);
            matmul_tn_acc(lc.input, dkt, G->wk);
            matmul_tn_acc(lc.input, dvt, G->wv);
        }
        Matrix dh_in = std::move(dh1);
        add_into(dh_in, matmul_nt(dq, P.wq));
        add_into(dh_in, matmul_nt(dkt, P.wk));
        add_into(dh_in, matmul_nt(dvt, P.wv));
        dh_cur = std::move(dh_in);
    }

    if (prompt_grad) {
        for (std::size_t i = 0; i < k; ++i) {
            auto src = dh_cur.row(i);
            std::copy(src.begin(), src.end(), prompt_grad->prompts.row(i).begin());
        }
    }
    if (param_grad) {
        for (std::size_t t = 0; t < len; ++t) {
            auto g = dh_cur.row(k + t);
            auto e = param_grad->embed.row(static_cast<std::size_t>(cache.ids[t]));
            auto p = param_grad->position.row(t);
            for (std::size_t c = 0; c < d; ++c) {
                e[c] += g[c];
                p[c] += g[c];
            }
        }
    }
}

std::vector<double> pool_snippet(const TokenRepresentation& r) {
    const std::size_t d = r.rows.cols();
    std::vector<double> mean(d, 0.0);
    std::size_t n = 0;
    for (std::size_t t = 0; t < r.rows.rows(); ++t) {
        if (!r.valid[t]) continue;
        ++n;
        auto row = r.rows.row(t);
        for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
    }
    if (n == 0) throw NumericalError("pool_snippet: no valid rows");
    for (double& v : mean) v /= static_cast<double>(n);
    const double nm = norm2(mean);
    if (!(nm >= 1e-12)) throw NumericalError("pool_snippet: degenerate pooling");
    for (double& v : mean) v /= nm;
    return mean;
}

Matrix backward_pool(const TokenRepresentation& r, std::span<const double> grad_pooled) {
    const std::size_t d = r.rows.cols();
    std::vector<double> mean(d, 0.0);
    std::size_t n = 0;
    for (std::size_t t = 0; t < r.rows.rows(); ++t) {
        if (!r.valid[t]) continue;
        ++n;
        auto row = r.rows.row(t);
        for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    const double nm = norm2(mean);
    double fg = 0.0;
    for (std::size_t c = 0; c < d; ++c) fg += (mean[c] / nm) * grad_pooled[c];
    std::vector<double> dmean(d);
    for (std::size_t c = 0; c < d; ++c)
        dmean[c] = (grad_pooled[c] - (mean[c] / nm) * fg) / nm / static_cast<double>(n);
    Matrix out(r.rows.rows(), d);
    for (std::size_t t = 0; t < r.rows.rows(); ++t) {
        if (!r.valid[t]) continue;
        std::copy(dmean.begin(), dmean.end(), out.row(t).begin());
    }
    return out;
}

}  // namespace cps
