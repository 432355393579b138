#include "coalfake/metrics.hpp"

#include "coalfake/util.hpp"

namespace coalfake::metrics {

BinaryMetrics binary_metrics(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("truth and predictions differ in length");
  BinaryMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] != 0, p = predicted[i] != 0;
    if (t && p) ++m.tp;
    else if (!t && p) ++m.fp;
    else if (t) ++m.fn;
    else ++m.tn;
  }
  const auto n = static_cast<double>(truth.size());
  const auto tp = static_cast<double>(m.tp);
  m.acc = n > 0 ? static_cast<double>(m.tp + m.tn) / n : 0.0;
  m.prec = m.tp + m.fp > 0 ? tp / static_cast<double>(m.tp + m.fp) : 0.0;
  m.rec = m.tp + m.fn > 0 ? tp / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = m.prec + m.rec > 0 ? 2 * m.prec * m.rec / (m.prec + m.rec) : 0.0;
  return m;
}

SourceReport evaluate(const std::vector<NewsRecord>& records, const std::map<std::string, double>& prob_fake,
                      const std::vector<std::string>& expected_sources) {
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_source;
  for (const auto& s : expected_sources) by_source[s];
  for (const auto& r : records) {
    if (!r.gold_label) throw InvalidArgument("record " + r.id + " has no gold label");
    const auto it = prob_fake.find(r.id);
    if (it == prob_fake.end()) throw InvalidArgument("no prediction for record " + r.id);
    auto& [t, p] = by_source[r.source];
    t.push_back(to_int(*r.gold_label));
    p.push_back(it->second >= 0.5 ? 1 : 0);
  }
  if (by_source.empty()) throw InvalidArgument("empty test set");
  SourceReport rep;
  for (const auto& [source, tp] : by_source) {
    if (tp.first.empty()) throw InvalidArgument("test source '" + source + "' is empty");
    rep.per_source[source] = binary_metrics(tp.first, tp.second);
    rep.macro_f1 += rep.per_source[source].f1;
  }
  rep.macro_f1 /= static_cast<double>(rep.per_source.size());
  return rep;
}

nlohmann::json to_json(const BinaryMetrics& m) {
  return {{"acc", m.acc}, {"prec", m.prec}, {"rec", m.rec}, {"f1", m.f1}};
}

nlohmann::json to_json(const SourceReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [s, m] : r.per_source) per[s] = to_json(m);
  return {{"per_source", per}, {"macro_f1", r.macro_f1}};
}

SourceReport source_report_from_json(const nlohmann::json& j) {
  SourceReport r;
  for (const auto& [s, m] : j.at("per_source").items()) {
    BinaryMetrics b;
    b.acc = m.at("acc").get<double>();
    b.prec = m.at("prec").get<double>();
    b.rec = m.at("rec").get<double>();
    b.f1 = m.at("f1").get<double>();
    r.per_source[s] = b;
  }
  r.macro_f1 = j.at("macro_f1").get<double>();
  return r;
}

}  // namespace coalfake::metrics
