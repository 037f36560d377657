#pragma once

// Programmatically generated corpora shared by the unit and acceptance suites.

#include <string>
#include <vector>

#include "cpsearch/corpus.hpp"
#include "cpsearch/numerics.hpp"

namespace cps::testing {

/// `count` distinct <code, description> pairs built from verb/noun/argument
/// word lists; both sides mention the same identifiers.
inline std::vector<Document> overfit_corpus(std::size_t count = 32) {
    static const char* verbs[] = {"get", "set", "load", "save", "parse", "render", "merge", "sort"};
    static const char* nouns[] = {"user", "config", "file", "token", "image", "record", "graph", "cache"};
    static const char* args[] = {"path", "index", "value", "name"};
    std::vector<Document> docs;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string verb = verbs[i % 8];
        const std::string noun = nouns[(i / 8 + i) % 8];
        const std::string arg = args[(i / 2) % 4];
        std::string cap = noun;
        cap[0] = static_cast<char>(cap[0] - 'a' + 'A');
        Document d;
        d.id = "fn" + std::to_string(i);
        d.code_text = "def " + verb + cap + "(" + arg + "):\n    return " + noun + "_store." + verb +
                      "(" + arg + ")";
        d.doc_text = verb + " the " + noun + " for the given " + arg;
        docs.push_back(std::move(d));
    }
    return docs;
}

/// 64 documents; each holds the same 15 common tokens plus one unique token
/// ("uniq<i>") at a position drawn from `seed`. The query repeats a shuffled
/// subset of the common tokens around the unique token.
inline std::vector<std::string> needle_common() {
    std::vector<std::string> common;
    for (int i = 0; i < 15; ++i) common.push_back("common" + std::to_string(i));
    return common;
}

inline std::string needle_query(std::size_t i, SeededRng& rng) {
    std::vector<std::string> query = needle_common();
    shuffle(query, rng);
    query.resize(5);
    query.insert(query.begin() + static_cast<std::ptrdiff_t>(rng.below(query.size() + 1)),
                 "uniq" + std::to_string(i));
    std::string text;
    for (const auto& t : query) text += (text.empty() ? "" : " ") + t;
    return text;
}

inline std::vector<Document> needle_corpus(std::uint64_t seed, std::size_t count = 64) {
    const std::vector<std::string> common = needle_common();
    auto rng = SeededRng::stream(seed, "needle");
    std::vector<Document> docs;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string unique = "uniq" + std::to_string(i);
        std::vector<std::string> code = common;
        shuffle(code, rng);
        code.insert(code.begin() + static_cast<std::ptrdiff_t>(rng.below(code.size() + 1)), unique);
        Document d;
        d.id = "doc" + std::to_string(i);
        for (const auto& t : code) d.code_text += (d.code_text.empty() ? "" : " ") + t;
        d.doc_text = needle_query(i, rng);
        docs.push_back(std::move(d));
    }
    return docs;
}

/// Fresh queries for the needle corpus: new common-token subsets around each
/// document's unique token. Returned as (text, truth id).
inline std::vector<std::pair<std::string, std::string>> needle_heldout(std::uint64_t seed,
                                                                       std::size_t count = 64) {
    auto rng = SeededRng::stream(seed, "needle.heldout");
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < count; ++i) out.emplace_back(needle_query(i, rng), "doc" + std::to_string(i));
    return out;
}

}  // namespace cps::testing
