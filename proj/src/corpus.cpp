#include "cpsearch/corpus.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cpsearch/binary_io.hpp"
#include "cpsearch/errors.hpp"

namespace cps {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) && c != '_'; }
bool is_lower(unsigned char c) { return c >= 'a' && c <= 'z'; }
bool is_upper(unsigned char c) { return c >= 'A' && c <= 'Z'; }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

const char* kReserved[kReservedCount] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

}  // namespace

std::vector<Document> parse_jsonl(std::string_view text, std::string_view source) {
    std::vector<Document> docs;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        ++line_no;
        start = end + 1;
        if (trim(line).empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = std::string(source) + ":" + std::to_string(line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
        auto field = [&](const char* name) -> std::string {
            auto it = obj.find(name);
            if (it == obj.end()) throw DataError(where + ": missing field \"" + name + "\"");
            if (!it->is_string()) throw DataError(where + ": field \"" + name + "\" is not a string");
            std::string v = it->get<std::string>();
            if (trim(v).empty()) throw DataError(where + ": field \"" + name + "\" is empty");
            return v;
        };
        Document d;
        d.code_text = field("code");
        d.doc_text = field("doc");
        if (auto it = obj.find("id"); it != obj.end()) {
            if (!it->is_string()) throw DataError(where + ": field \"id\" is not a string");
            d.id = it->get<std::string>();
        } else {
            d.id = std::to_string(line_no - 1);
        }
        docs.push_back(std::move(d));
        if (end == text.size()) break;
    }
    return docs;
}

std::vector<Document> load_jsonl(const std::filesystem::path& path) {
    return parse_jsonl(read_file(path), path.string());
}

std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    unsigned char prev = 0;
    for (unsigned char c : text) {
        if (is_space(c) || c == '_') {
            flush();
        } else if (is_punct(c)) {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        } else {
            if (is_upper(c) && is_lower(prev) && !cur.empty()) flush();
            cur.push_back(is_upper(c) ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
        }
        prev = c;
    }
    flush();
    return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    tokens_.assign(std::begin(kReserved), std::end(kReserved));
    for (auto& t : tokens) {
        if (std::find(std::begin(kReserved), std::end(kReserved), t) != std::end(kReserved)) continue;
        tokens_.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.empty() || t.find('\n') != std::string::npos)
            throw DataError("vocabulary: invalid token at id " + std::to_string(i));
        if (!index_.emplace(t, static_cast<std::int32_t>(i)).second)
            throw DataError("vocabulary: duplicate token \"" + t + "\"");
    }
}

std::int32_t Vocabulary::id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw DataError("vocabulary: id out of range " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    if (lines.size() < kReservedCount)
        throw DataError("vocabulary: fewer lines than reserved tokens");
    for (std::size_t i = 0; i < kReservedCount; ++i) {
        if (lines[i] != kReserved[i])
            throw DataError("vocabulary: line " + std::to_string(i + 1) + " must be " + kReserved[i]);
    }
    lines.erase(lines.begin(), lines.begin() + kReservedCount);
    return Vocabulary(std::move(lines));
}

void Vocabulary::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::uint64_t Vocabulary::hash() const { return fnv1a64(serialize()); }

Vocabulary build_vocab(const std::vector<Document>& docs, std::size_t min_count,
                       std::size_t max_size) {
    if (min_count == 0) throw ConfigError("build_vocab: min_count must be at least 1");
    if (max_size < kReservedCount)
        throw ConfigError("build_vocab: max_size must leave room for the reserved tokens");
    if (docs.empty()) throw DataError("build_vocab: empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& d : docs) {
        for (const auto* text : {&d.code_text, &d.doc_text})
            for (auto& t : split_tokens(*text)) ++counts[std::move(t)];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : counts) {
        if (n >= min_count) ranked.emplace_back(tok, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > max_size - kReservedCount) ranked.resize(max_size - kReservedCount);
    std::vector<std::string> tokens;
    tokens.reserve(ranked.size());
    for (auto& [tok, n] : ranked) tokens.push_back(tok);
    return Vocabulary(std::move(tokens));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 3) throw ConfigError("tokenize: max_len must be at least 3");
    auto parts = split_tokens(text);
    if (parts.empty()) throw DataError("tokenize: text is empty after tokenization");
    const std::size_t keep = std::min(parts.size(), max_len - 2);
    TokenSequence seq;
    seq.ids.assign(max_len, kPadId);
    seq.mask.assign(max_len, false);
    seq.ids[0] = kClsId;
    for (std::size_t i = 0; i < keep; ++i) seq.ids[i + 1] = vocab.id_of(parts[i]);
    seq.ids[keep + 1] = kSepId;
    seq.true_length = keep + 2;
    for (std::size_t i = 0; i < seq.true_length; ++i) seq.mask[i] = true;
    return seq;
}

void validate_sequence(const TokenSequence& seq) {
    const std::size_t n = seq.ids.size();
    if (seq.mask.size() != n) throw DataError("sequence: mask length differs from ids");
    if (seq.true_length < 2 || seq.true_length > n) throw DataError("sequence: bad true_length");
    if (seq.ids.front() != kClsId || seq.ids[seq.true_length - 1] != kSepId)
        throw DataError("sequence: missing [CLS]/[SEP] framing");
    for (std::size_t i = 0; i < n; ++i) {
        const bool real = i < seq.true_length;
        if (seq.mask[i] != real) throw DataError("sequence: mask disagrees with true_length");
        if (!real && seq.ids[i] != kPadId) throw DataError("sequence: non-pad id after true_length");
    }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   SeededRng& rng, BatchMode mode) {
    if (batch_size == 0) throw ConfigError("make_batches: batch_size must be positive");
    if (mode == BatchMode::kTraining && batch_size < 2)
        throw ConfigError("make_batches: training needs batch_size >= 2 for in-batch negatives");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < count; s += batch_size) {
        const std::size_t e = std::min(count, s + batch_size);
        if (e - s < batch_size && mode == BatchMode::kTraining) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return batches;
}

}  // namespace cps
