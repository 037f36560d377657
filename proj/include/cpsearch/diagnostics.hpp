#pragma once

// Alignment and uniformity of snippet-level representations on the unit sphere.
//   alignment  = mean over positive pairs of |f(x) - f(y)|^2
//   uniformity = log mean over distinct unordered pairs of exp(-2 |f(a) - f(b)|^2)

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpsearch/corpus.hpp"
#include "cpsearch/trainer.hpp"

namespace cps {

using Vec = std::vector<double>;

double alignment(const std::vector<std::pair<Vec, Vec>>& pairs);
double uniformity(const std::vector<Vec>& points);

struct QualityReport {
    std::string model;
    double alignment = 0.0;
    double uniformity_query = 0.0;
    double uniformity_code = 0.0;
    double mrr = 0.0;
    std::size_t samples = 0;

    nlohmann::json to_json() const;
    std::string csv_row() const;
};

inline constexpr const char* kQualityCsvHeader = "model,alignment,uniformity_query,uniformity_code,mrr";

/// Pooled representations of every pair in `eval_set`, plus MRR of the
/// descriptions retrieving their own code within the set.
QualityReport quality_report(const Checkpoint& cp, const Vocabulary& vocab,
                             const std::vector<Document>& eval_set, const std::string& model_name);

}  // namespace cps
