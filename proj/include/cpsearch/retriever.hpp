#pragma once

// Offline token-level index over candidate code snippets, exact brute-force
// search, and MRR / Recall@k / FRank evaluation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpsearch/corpus.hpp"
#include "cpsearch/trainer.hpp"

namespace cps {

struct IndexEntry {
    std::string id;
    Matrix rows;  // true_length x d, float-representable values
};

struct SearchIndex {
    std::array<std::uint8_t, 32> fingerprint{};
    double lambda = 0.9;
    std::vector<IndexEntry> entries;

    std::size_t size() const { return entries.size(); }
};

inline constexpr std::array<char, 4> kIndexMagic = {'C', 'P', 'I', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;

/// Encodes the code side of every candidate once, in input order.
SearchIndex build_index(const Checkpoint& cp, const Vocabulary& vocab,
                        const std::vector<Document>& candidates);

std::string serialize_index(const SearchIndex& idx);
SearchIndex deserialize_index(std::string_view bytes);
void save_index(const SearchIndex& idx, const std::filesystem::path& path);
SearchIndex load_index(const std::filesystem::path& path);

struct SearchHit {
    std::string id;
    double score = 0.0;
};

/// Scores the query against every candidate; descending score, ties by id.
std::vector<SearchHit> rank_all(const SearchIndex& idx, const TokenRepresentation& query,
                                Scoring scoring, double lambda);

std::vector<SearchHit> search(const SearchIndex& idx, std::string_view query_text,
                              const Checkpoint& cp, const Vocabulary& vocab, std::size_t top_k,
                              double lambda);

struct EvalQuery {
    std::string text;
    std::string truth_id;
};

struct EvalReport {
    double mrr = 0.0;
    double recall1 = 0.0;
    double recall5 = 0.0;
    double recall10 = 0.0;
    std::vector<std::size_t> franks;  // 1-based
    std::size_t num_queries = 0;

    double recall_at(std::size_t k) const;
    nlohmann::json to_json() const;
};

/// Aggregates MRR and Recall@{1,5,10} from per-query FRanks.
EvalReport report_from_franks(std::vector<std::size_t> franks);

EvalReport evaluate(const SearchIndex& idx, const std::vector<EvalQuery>& queries,
                    const Checkpoint& cp, const Vocabulary& vocab, double lambda);

/// Queries from a corpus: description text, truth = document id.
std::vector<EvalQuery> queries_from(const std::vector<Document>& docs);

}  // namespace cps
