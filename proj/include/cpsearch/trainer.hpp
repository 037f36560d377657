#pragma once

// Contrastive training of the dual encoder.
//
// Two modes:
//   finetune  both encoders are trained, no prompt parameters exist;
//   prompt    one frozen base encoder serves both sides, and only the per-side
//             prompt seeds and reparameterization networks are trained.
// Two scoring rules: token-level interaction or pooled cosine.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpsearch/corpus.hpp"
#include "cpsearch/encoder.hpp"
#include "cpsearch/objective.hpp"

namespace cps {

enum class TrainMode { kFinetune, kPrompt };
enum class Scoring { kInteraction, kCosine };

std::string to_string(TrainMode m);
std::string to_string(Scoring s);
TrainMode parse_mode(const std::string& s);
Scoring parse_scoring(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::kPrompt;
    Scoring scoring = Scoring::kInteraction;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    std::size_t epochs = 10;
    double tau = kDefaultTemperature;
    double lambda = 0.9;
    std::size_t kc = 50;
    std::size_t kt = 50;
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t max_len_code = 256;
    std::size_t max_len_query = 128;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    /// Throws ConfigError on any violated constraint.
    void validate() const;
    /// Prompt lengths that actually apply (zero in finetune mode).
    std::size_t code_prompt_len() const { return mode == TrainMode::kPrompt ? kc : 0; }
    std::size_t query_prompt_len() const { return mode == TrainMode::kPrompt ? kt : 0; }

    nlohmann::json to_json() const;
    /// Overlays keys present in `j` onto this config; unknown keys are rejected.
    void merge_json(const nlohmann::json& j);
};

struct Checkpoint {
    TrainConfig config;
    std::uint64_t vocab_hash = 0;
    std::size_t vocab_size = 0;
    EncoderParams code_encoder;
    /// Absent when both sides share `code_encoder` (prompt mode).
    std::optional<EncoderParams> query_encoder;
    std::optional<PromptState> code_prompt;
    std::optional<PromptState> query_prompt;
    std::vector<double> epoch_losses;

    const EncoderParams& query_base() const { return query_encoder ? *query_encoder : code_encoder; }
    bool shared_base() const { return !query_encoder.has_value(); }

    std::size_t trainable_parameter_count() const;
    std::size_t total_parameter_count() const;

    /// Every persisted tensor in file order (excluding the config blob).
    void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;
    void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
    /// Tensors updated by the optimizer in this checkpoint's mode.
    void for_each_trainable(const std::function<void(const std::string&, Matrix&)>& fn);

    /// Serialized bytes of the base encoder(s) only.
    std::string base_bytes() const;

    bool operator==(const Checkpoint& other) const;
};

/// Fresh parameters drawn from named streams of config.seed. In prompt mode
/// `base` (when given) supplies the frozen encoder(s) instead of a random draw.
Checkpoint initialize(const TrainConfig& config, const Vocabulary& vocab,
                      const Checkpoint* base = nullptr);

/// Encodes the code side, with prompts when the checkpoint has them.
TokenRepresentation encode_code(const Checkpoint& cp, const TokenSequence& seq);
TokenRepresentation encode_query(const Checkpoint& cp, const TokenSequence& seq);

TokenSequence tokenize_code(const Checkpoint& cp, const Vocabulary& vocab, std::string_view text);
TokenSequence tokenize_query(const Checkpoint& cp, const Vocabulary& vocab, std::string_view text);

/// Gradient buffers shaped like a checkpoint's trainable tensors.
struct Gradients {
    std::optional<EncoderParams> code_encoder;
    std::optional<EncoderParams> query_encoder;
    std::optional<PromptState> code_prompt;
    std::optional<PromptState> query_prompt;

    static Gradients zeros_like(const Checkpoint& cp);
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
};

/// Forward pass over one batch of pairs and, when `grads` is given, the exact
/// reverse-mode gradients of the batch loss (accumulated into `grads`).
LossValue batch_objective(const Checkpoint& cp, std::span<const TokenSequence> codes,
                          std::span<const TokenSequence> queries, Gradients* grads);

struct EpochReport {
    std::size_t epoch = 0;  // 1-based
    double mean_loss = 0.0;
};

/// Runs config.epochs epochs of shuffled in-batch contrastive training with AdamW.
/// `base` (prompt mode only) supplies frozen encoder weights, e.g. from a
/// warm-up fine-tune run. Throws NumericalError naming epoch and batch on a NaN loss.
Checkpoint train(const std::vector<Document>& docs, const Vocabulary& vocab,
                 const TrainConfig& config, const Checkpoint* base = nullptr,
                 const std::function<void(const EpochReport&)>& on_epoch = {});

struct GradCheckOptions {
    std::uint64_t seed = 0;
    std::size_t vocab_size = 40;
    std::size_t max_seq_len = 12;
    std::size_t samples_per_tensor = 200;
    double step = 1e-4;
    double min_margin = 1e-6;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
    std::size_t coordinates_skipped = 0;
    std::size_t batches_rejected = 0;
    std::vector<std::string> tensors;

    bool passed(double threshold = 1e-4) const { return max_rel_err <= threshold; }
};

/// Compares analytic gradients with central differences on a random toy model
/// and batch built from `config` (batch_size pairs, prompts per config.mode).
GradCheckReport grad_check(const TrainConfig& config, const GradCheckOptions& options = {});

inline constexpr std::array<char, 4> kCheckpointMagic = {'C', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& cp);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint.
std::array<std::uint8_t, 32> checkpoint_fingerprint(const Checkpoint& cp);

}  // namespace cps
