#pragma once

// Token-level transformer encoder with continuous prompts.
//
// One forward pass over a sequence of k prompt rows followed by the real tokens:
//
//   H0 = [P'_0 .. P'_{k-1}, E[cls]+pos_0, E[t_1]+pos_1, ..., E[sep]+pos_{L-1}]
//   per layer l:
//     keys   = [V'_{.,l} ; H Wk]     values = [V'_{.,l} ; H Wv]
//     H1 = H + MHA(H Wq, keys, values) Wo
//     H  = H1 + tanh(H1 W1 + b1) W2 + b2
//   r  = row-normalize(H[k .. k+L-1])
//
// P' and V' come out of the reparameterization MLP applied to the raw prompt
// seeds. Pads are never attended to and never computed; their output rows are
// zero. There is no layer normalization.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cpsearch/corpus.hpp"
#include "cpsearch/numerics.hpp"

namespace cps {

struct EncoderDims {
    std::size_t vocab_size = 0;
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t max_len = 256;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix w1, b1;          // d x 4d, 1 x 4d
    Matrix w2, b2;          // 4d x d, 1 x d
};

struct EncoderParams {
    EncoderDims dims;
    Matrix embed;     // |V| x d
    Matrix position;  // max_len x d
    std::vector<LayerParams> layers;

    /// Zero-filled parameters of the given shape (gradient buffers).
    static EncoderParams zeros(const EncoderDims& dims);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, rounded to float.
    static EncoderParams random(const EncoderDims& dims, SeededRng& rng);

    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    std::size_t parameter_count() const;
};

/// Raw template parameters (phi) and reparameterization MLP (psi) for one side.
struct PromptState {
    std::size_t length = 0;  // k
    std::size_t layers = 0;  // ln
    std::size_t d = 0;
    Matrix seed;       // k x d
    Matrix deep_seed;  // (k*ln) x d, row = position*ln + layer
    Matrix w1, b1;     // d x d, 1 x d
    Matrix w2, b2;     // d x d, 1 x d

    static PromptState zeros(std::size_t k, std::size_t layers, std::size_t d);
    static PromptState random(std::size_t k, std::size_t layers, std::size_t d, SeededRng& rng);

    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    std::size_t parameter_count() const;
};

struct PromptOutputs {
    Matrix prompts;   // k x d, prepended to the input
    Matrix prefixes;  // (k*ln) x d, per-layer key/value slots
};

/// Intermediates of the reparameterization MLP for one stacked input.
struct ReparamCache {
    Matrix input;   // stacked [P; V]
    Matrix hidden;  // tanh(input W1 + b1)
};

PromptOutputs reparameterize(const Matrix& prompts, const Matrix& prefixes,
                             const PromptState& psi, ReparamCache* cache = nullptr);

/// Input-independent prompt generation: the template emits the seeds, which then
/// pass through the reparameterization network.
PromptOutputs generate_prompts(const PromptState& prompt, ReparamCache* cache = nullptr);

/// Accumulates gradients of phi and psi from gradients w.r.t. the generated outputs.
void backward_prompts(const PromptState& prompt, const ReparamCache& cache,
                      const PromptOutputs& grad_out, PromptState& grad);

/// Embedded input of k + true_length rows (pads are not materialized).
Matrix reconstruct_input(const Matrix* prompts, const TokenSequence& seq,
                         const EncoderParams& params);

struct TokenRepresentation {
    Matrix rows;              // padded_len x d; valid rows unit-norm, others zero
    std::vector<bool> valid;  // length padded_len

    std::size_t valid_count() const;
};

struct EncodeOptions {
    /// Hide prompt rows and prefix slots from attention (k=0 equivalence checks).
    bool mask_prompts = false;
};

struct LayerCache {
    Matrix input;    // T x d
    Matrix query;    // T x d
    Matrix keys;     // (k+T) x d
    Matrix values;   // (k+T) x d
    std::vector<Matrix> attention;  // per head, T x (k+T)
    Matrix mixed;    // T x d, concatenated head outputs
    Matrix hidden1;  // T x d
    Matrix ff;       // T x 4d, tanh activations
};

struct EncodeCache {
    std::size_t prompt_len = 0;
    std::size_t padded_len = 0;
    std::vector<std::int32_t> ids;  // real tokens only
    EncodeOptions options;
    std::vector<LayerCache> layers;
    Matrix final_hidden;  // T x d
    std::vector<double> norms;  // per real token
};

/// Forward pass. `prompts` may be null (fine-tune mode, k = 0).
TokenRepresentation encode(const TokenSequence& seq, const PromptOutputs* prompts,
                           const EncoderParams& params, const EncodeOptions& options = {},
                           EncodeCache* cache = nullptr);

/// Reverse pass from dL/dr. `param_grad` may be null when the base is frozen;
/// `prompt_grad` receives dL/dP' and dL/dV' when prompts were used.
void backward_encode(const EncodeCache& cache, const Matrix& grad_rows,
                     const EncoderParams& params, EncoderParams* param_grad,
                     PromptOutputs* prompt_grad);

/// Mean of the valid rows, L2-normalized.
std::vector<double> pool_snippet(const TokenRepresentation& r);

/// dL/dr from dL/df through pool_snippet; `r` must be the pooled representation.
Matrix backward_pool(const TokenRepresentation& r, std::span<const double> grad_pooled);

}  // namespace cps
