#pragma once

#include <cstddef>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "coalfake/corpus.hpp"

namespace coalfake::metrics {

/// Binary classification scores with fake as the positive class. Undefined ratios
/// (no predicted or no actual positives) score 0.
struct BinaryMetrics {
  double acc = 0, prec = 0, rec = 0, f1 = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

BinaryMetrics binary_metrics(const std::vector<int>& truth, const std::vector<int>& predicted);

struct SourceReport {
  std::map<std::string, BinaryMetrics> per_source;
  double macro_f1 = 0.0;  // unweighted mean of per-source F1
};

/// Scores p(fake) >= 0.5 against gold labels, separately for each source. Every source in
/// `expected_sources` must have at least one record. Throws for records without a gold
/// label or without a probability.
SourceReport evaluate(const std::vector<NewsRecord>& records, const std::map<std::string, double>& prob_fake,
                      const std::vector<std::string>& expected_sources = {});

nlohmann::json to_json(const BinaryMetrics& m);
nlohmann::json to_json(const SourceReport& r);  // {"per_source": {...}, "macro_f1": x}
SourceReport source_report_from_json(const nlohmann::json& j);

}  // namespace coalfake::metrics
