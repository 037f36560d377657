#include "cpsearch/diagnostics.hpp"

#include <cmath>
#include <cstdio>

#include "cpsearch/retriever.hpp"

namespace cps {

namespace {

void check_unit(const Vec& v, const char* what) {
    if (std::abs(norm2(v) - 1.0) > 1e-6)
        throw NumericalError(std::string(what) + ": expected unit vectors");
}

double squared_distance(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double alignment(const std::vector<std::pair<Vec, Vec>>& pairs) {
    if (pairs.empty()) throw NumericalError("alignment: empty input");
    double sum = 0.0;
    for (const auto& [x, y] : pairs) {
        check_unit(x, "alignment");
        check_unit(y, "alignment");
        sum += squared_distance(x, y);
    }
    return sum / static_cast<double>(pairs.size());
}

double uniformity(const std::vector<Vec>& points) {
    if (points.size() < 2) throw NumericalError("uniformity: needs at least 2 points");
    for (const auto& p : points) check_unit(p, "uniformity");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            sum += std::exp(-2.0 * squared_distance(points[i], points[j]));
            ++count;
        }
    }
    return std::log(sum / static_cast<double>(count));
}

nlohmann::json QualityReport::to_json() const {
    return nlohmann::json{{"model", model},
                          {"alignment", alignment},
                          {"uniformity_query", uniformity_query},
                          {"uniformity_code", uniformity_code},
                          {"mrr", mrr},
                          {"samples", samples}};
}

std::string QualityReport::csv_row() const {
    return model + "," + fmt(alignment) + "," + fmt(uniformity_query) + "," + fmt(uniformity_code) +
           "," + fmt(mrr);
}

QualityReport quality_report(const Checkpoint& cp, const Vocabulary& vocab,
                             const std::vector<Document>& eval_set, const std::string& model_name) {
    std::vector<std::pair<Vec, Vec>> pairs;
    std::vector<Vec> codes, queries;
    for (const auto& doc : eval_set) {
        auto fx = pool_snippet(encode_code(cp, tokenize_code(cp, vocab, doc.code_text)));
        auto fy = pool_snippet(encode_query(cp, tokenize_query(cp, vocab, doc.doc_text)));
        codes.push_back(fx);
        queries.push_back(fy);
        pairs.emplace_back(std::move(fx), std::move(fy));
    }
    QualityReport q;
    q.model = model_name;
    q.samples = eval_set.size();
    q.alignment = alignment(pairs);
    q.uniformity_query = uniformity(queries);
    q.uniformity_code = uniformity(codes);
    const auto idx = build_index(cp, vocab, eval_set);
    q.mrr = evaluate(idx, queries_from(eval_set), cp, vocab, cp.config.lambda).mrr;
    return q;
}

}  // namespace cps
