#pragma once

// <code, description> pairs, vocabulary and tokenization.
//
// Tokenizer rules, applied in order:
//   1. split on ASCII whitespace;
//   2. every ASCII punctuation character except '_' becomes its own token;
//   3. '_' separates identifier parts and is dropped;
//   4. a lowercase-to-uppercase transition starts a new part ("getUserName"
//      -> get user name);
//   5. ASCII letters are lowercased. Digits and non-ASCII bytes stay in words.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpsearch/numerics.hpp"

namespace cps {

struct Document {
    std::string id;
    std::string code_text;
    std::string doc_text;
};

std::vector<Document> load_jsonl(const std::filesystem::path& path);
/// Same as load_jsonl over an in-memory string; `source` labels errors.
std::vector<Document> parse_jsonl(std::string_view text, std::string_view source = "<memory>");

std::vector<std::string> split_tokens(std::string_view text);

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::size_t kReservedCount = 4;

class Vocabulary {
public:
    /// Reserved tokens only.
    Vocabulary();
    explicit Vocabulary(std::vector<std::string> tokens);

    std::int32_t id_of(std::string_view token) const;
    const std::string& token_of(std::int32_t id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// One token per line; line number is the id.
    std::string serialize() const;
    static Vocabulary deserialize(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    /// FNV-1a of the serialized form, recorded in checkpoints.
    std::uint64_t hash() const;

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

/// Tokens from both sides of every document with count >= min_count, at most
/// max_size entries in total (reserved included), ordered by descending frequency then token.
Vocabulary build_vocab(const std::vector<Document>& docs, std::size_t min_count,
                       std::size_t max_size);

struct TokenSequence {
    std::vector<std::int32_t> ids;
    std::size_t true_length = 0;
    std::vector<bool> mask;

    std::size_t padded_length() const { return ids.size(); }
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

/// Throws DataError when a sequence violates its padding/mask layout.
void validate_sequence(const TokenSequence& seq);

enum class BatchMode { kTraining, kEvaluation };

/// Shuffled index batches over `count` items. Training drops the short tail.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   SeededRng& rng, BatchMode mode);

}  // namespace cps
