// Index file layout (little-endian):
//   "CPIX" | u32 version | 32-byte model fingerprint | f64 lambda | u32 entry count
//   per entry: u32 id length, id bytes, u32 true_length, u32 d, true_length*d float32
//   u32 CRC-32 of every preceding byte

#include "cpsearch/retriever.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <unordered_map>

#include "cpsearch/binary_io.hpp"
#include "cpsearch/interaction.hpp"

namespace cps {

namespace {

TokenRepresentation as_representation(const Matrix& rows) {
    TokenRepresentation r;
    r.rows = rows;
    r.valid.assign(rows.rows(), true);
    return r;
}

void check_fingerprint(const SearchIndex& idx, const Checkpoint& cp) {
    if (checkpoint_fingerprint(cp) != idx.fingerprint)
        throw DataError("index was built from a different checkpoint");
}

}  // namespace

SearchIndex build_index(const Checkpoint& cp, const Vocabulary& vocab,
                        const std::vector<Document>& candidates) {
    if (candidates.empty()) throw DataError("build_index: empty candidate set");
    if (vocab.hash() != cp.vocab_hash) throw DataError("build_index: vocabulary does not match checkpoint");
    SearchIndex idx;
    idx.fingerprint = checkpoint_fingerprint(cp);
    idx.lambda = cp.config.lambda;
    std::set<std::string> seen;
    std::vector<std::string> failures;
    for (const auto& doc : candidates) {
        if (!seen.insert(doc.id).second) throw DataError("build_index: duplicate id \"" + doc.id + "\"");
        TokenSequence seq;
        try {
            seq = tokenize_code(cp, vocab, doc.code_text);
        } catch (const DataError& e) {
            failures.push_back(doc.id + ": " + e.what());
            continue;
        }
        const auto rep = encode_code(cp, seq);
        IndexEntry e{doc.id, Matrix(seq.true_length, rep.rows.cols())};
        for (std::size_t t = 0; t < seq.true_length; ++t)
            std::copy(rep.rows.row(t).begin(), rep.rows.row(t).end(), e.rows.row(t).begin());
        round_to_float(e.rows);
        idx.entries.push_back(std::move(e));
    }
    if (!failures.empty()) {
        std::string msg = "build_index: tokenization failed for";
        for (const auto& f : failures) msg += " [" + f + "]";
        throw DataError(msg);
    }
    return idx;
}

std::string serialize_index(const SearchIndex& idx) {
    ByteWriter w;
    w.raw(std::string_view(kIndexMagic.data(), kIndexMagic.size()));
    w.u32(kIndexVersion);
    w.raw(std::string_view(reinterpret_cast<const char*>(idx.fingerprint.data()), idx.fingerprint.size()));
    w.f64(idx.lambda);
    w.u32(static_cast<std::uint32_t>(idx.entries.size()));
    for (const auto& e : idx.entries) {
        w.str(e.id);
        w.u32(static_cast<std::uint32_t>(e.rows.rows()));
        w.u32(static_cast<std::uint32_t>(e.rows.cols()));
        for (double v : e.rows.data()) w.f32(static_cast<float>(v));
    }
    return w.finish_with_crc();
}

SearchIndex deserialize_index(std::string_view bytes) {
    const std::string ctx = "index";
    if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(kIndexMagic.data(), 4))
        throw DataError("index: bad magic");
    {
        ByteReader head(bytes.substr(4), ctx);
        const std::uint32_t version = head.u32();
        if (version != kIndexVersion)
            throw DataError("index: unsupported version " + std::to_string(version) + " (expected " +
                            std::to_string(kIndexVersion) + ")");
    }
    ByteReader r(check_crc(bytes, ctx), ctx);
    r.raw(8);
    SearchIndex idx;
    const auto fp = r.raw(idx.fingerprint.size());
    std::memcpy(idx.fingerprint.data(), fp.data(), fp.size());
    idx.lambda = r.f64();
    const std::uint32_t count = r.u32();
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        IndexEntry e;
        e.id = r.str();
        if (!seen.insert(e.id).second) throw DataError("index: duplicate id \"" + e.id + "\"");
        const std::uint32_t len = r.u32();
        const std::uint32_t d = r.u32();
        if (len == 0 || d == 0) throw DataError("index: empty entry \"" + e.id + "\"");
        e.rows = Matrix(len, d);
        for (double& v : e.rows.data()) v = static_cast<double>(r.f32());
        idx.entries.push_back(std::move(e));
    }
    if (r.remaining() != 0) throw DataError("index: trailing bytes after entries");
    return idx;
}

void save_index(const SearchIndex& idx, const std::filesystem::path& path) {
    write_file(path, serialize_index(idx));
}

SearchIndex load_index(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return deserialize_index(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<SearchHit> rank_all(const SearchIndex& idx, const TokenRepresentation& query,
                                Scoring scoring, double lambda) {
    std::vector<SearchHit> hits;
    hits.reserve(idx.size());
    std::vector<double> fq;
    if (scoring == Scoring::kCosine) fq = pool_snippet(query);
    for (const auto& e : idx.entries) {
        const auto cand = as_representation(e.rows);
        double s;
        if (scoring == Scoring::kInteraction) {
            s = score_pair(cand, query, lambda).s;
        } else {
            // Stored rows are float-rounded, so renormalize before the unit check.
            s = dot(pool_snippet(cand), fq);
        }
        hits.push_back({e.id, s});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    return hits;
}

std::vector<SearchHit> search(const SearchIndex& idx, std::string_view query_text,
                              const Checkpoint& cp, const Vocabulary& vocab, std::size_t top_k,
                              double lambda) {
    if (top_k == 0) throw ConfigError("search: top_k must be at least 1");
    check_fingerprint(idx, cp);
    const auto seq = tokenize_query(cp, vocab, query_text);
    auto hits = rank_all(idx, encode_query(cp, seq), cp.config.scoring, lambda);
    if (hits.size() > top_k) hits.resize(top_k);
    return hits;
}

double EvalReport::recall_at(std::size_t k) const {
    if (franks.empty()) return 0.0;
    const auto hit = std::count_if(franks.begin(), franks.end(), [k](std::size_t r) { return r <= k; });
    return static_cast<double>(hit) / static_cast<double>(franks.size());
}

nlohmann::json EvalReport::to_json() const {
    return nlohmann::json{{"mrr", mrr},
                          {"recall", {{"1", recall1}, {"5", recall5}, {"10", recall10}}},
                          {"franks", franks},
                          {"num_queries", num_queries}};
}

EvalReport report_from_franks(std::vector<std::size_t> franks) {
    EvalReport r;
    r.franks = std::move(franks);
    r.num_queries = r.franks.size();
    if (r.franks.empty()) return r;
    double rr = 0.0;
    for (std::size_t f : r.franks) {
        if (f == 0) throw NumericalError("FRank is 1-based");
        rr += 1.0 / static_cast<double>(f);
    }
    r.mrr = rr / static_cast<double>(r.franks.size());
    r.recall1 = r.recall_at(1);
    r.recall5 = r.recall_at(5);
    r.recall10 = r.recall_at(10);
    return r;
}

EvalReport evaluate(const SearchIndex& idx, const std::vector<EvalQuery>& queries,
                    const Checkpoint& cp, const Vocabulary& vocab, double lambda) {
    check_fingerprint(idx, cp);
    std::unordered_map<std::string, std::size_t> present;
    for (std::size_t i = 0; i < idx.entries.size(); ++i) present.emplace(idx.entries[i].id, i);
    for (const auto& q : queries) {
        if (!present.count(q.truth_id))
            throw DataError("evaluate: truth id \"" + q.truth_id + "\" is not in the index");
    }
    std::vector<std::size_t> franks;
    franks.reserve(queries.size());
    for (const auto& q : queries) {
        const auto seq = tokenize_query(cp, vocab, q.text);
        const auto hits = rank_all(idx, encode_query(cp, seq), cp.config.scoring, lambda);
        for (std::size_t r = 0; r < hits.size(); ++r) {
            if (hits[r].id == q.truth_id) {
                franks.push_back(r + 1);
                break;
            }
        }
    }
    return report_from_franks(std::move(franks));
}

std::vector<EvalQuery> queries_from(const std::vector<Document>& docs) {
    std::vector<EvalQuery> q;
    q.reserve(docs.size());
    for (const auto& d : docs) q.push_back({d.doc_text, d.id});
    return q;
}

}  // namespace cps
