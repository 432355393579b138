#include "coalfake/cost.hpp"

#include <cmath>

#include "coalfake/util.hpp"

namespace coalfake {

namespace {
constexpr double kNanosPerUsd = 1e9;

std::int64_t nanos_per_token(double usd_per_1m) { return std::llround(usd_per_1m * kNanosPerUsd / 1e6); }
std::int64_t nanos(double usd) { return std::llround(usd * kNanosPerUsd); }
}  // namespace

CostLedger::CostLedger(CostRates rates) : rates_(rates) {
  if (rates_.unit_tokens <= 0) throw InvalidArgument("unit_tokens must be positive");
}

CostLedger::CostLedger(const CostLedger& other) {
  std::lock_guard lock(other.mu_);
  rates_ = other.rates_;
  prompt_tokens_ = other.prompt_tokens_;
  completion_tokens_ = other.completion_tokens_;
  human_tokens_ = other.human_tokens_;
  human_units_ = other.human_units_;
  items_ = other.items_;
}

CostLedger& CostLedger::operator=(const CostLedger& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  rates_ = other.rates_;
  prompt_tokens_ = other.prompt_tokens_;
  completion_tokens_ = other.completion_tokens_;
  human_tokens_ = other.human_tokens_;
  human_units_ = other.human_units_;
  items_ = other.items_;
  return *this;
}

void CostLedger::charge_llm(const std::string& record_id, std::int64_t prompt_tokens,
                            std::int64_t completion_tokens) {
  if (prompt_tokens < 0 || completion_tokens < 0) throw InvalidArgument("negative token count");
  std::lock_guard lock(mu_);
  prompt_tokens_ += prompt_tokens;
  completion_tokens_ += completion_tokens;
  items_.push_back({record_id, "llm", prompt_tokens, completion_tokens, 0, 0});
}

void CostLedger::charge_human(const std::string& record_id, std::int64_t tokens) {
  if (tokens < 0) throw InvalidArgument("negative token count");
  const std::int64_t units = (tokens + rates_.unit_tokens - 1) / rates_.unit_tokens;
  std::lock_guard lock(mu_);
  human_tokens_ += tokens;
  human_units_ += units;
  items_.push_back({record_id, "human", 0, 0, tokens, units});
}

std::int64_t CostLedger::llm_prompt_tokens() const {
  std::lock_guard lock(mu_);
  return prompt_tokens_;
}
std::int64_t CostLedger::llm_completion_tokens() const {
  std::lock_guard lock(mu_);
  return completion_tokens_;
}
std::int64_t CostLedger::human_tokens() const {
  std::lock_guard lock(mu_);
  return human_tokens_;
}
std::int64_t CostLedger::human_units() const {
  std::lock_guard lock(mu_);
  return human_units_;
}

std::int64_t CostLedger::llm_nanos_locked() const {
  return prompt_tokens_ * nanos_per_token(rates_.in_per_1m) +
         completion_tokens_ * nanos_per_token(rates_.out_per_1m);
}

double CostLedger::llm_usd() const {
  std::lock_guard lock(mu_);
  return static_cast<double>(llm_nanos_locked()) / kNanosPerUsd;
}

double CostLedger::human_usd() const {
  std::lock_guard lock(mu_);
  return static_cast<double>(human_units_ * nanos(rates_.human_per_unit)) / kNanosPerUsd;
}

double CostLedger::total_usd() const {
  std::lock_guard lock(mu_);
  return static_cast<double>(llm_nanos_locked() + human_units_ * nanos(rates_.human_per_unit)) / kNanosPerUsd;
}

std::vector<LedgerItem> CostLedger::take_items() {
  std::lock_guard lock(mu_);
  return std::exchange(items_, {});
}

nlohmann::json to_json(const LedgerItem& item) {
  return {{"record_id", item.record_id},         {"kind", item.kind},
          {"prompt_tokens", item.prompt_tokens}, {"completion_tokens", item.completion_tokens},
          {"human_tokens", item.human_tokens},   {"human_units", item.human_units}};
}

LedgerItem ledger_item_from_json(const nlohmann::json& j) {
  return {j.at("record_id").get<std::string>(), j.at("kind").get<std::string>(),
          j.at("prompt_tokens").get<std::int64_t>(), j.at("completion_tokens").get<std::int64_t>(),
          j.at("human_tokens").get<std::int64_t>(), j.at("human_units").get<std::int64_t>()};
}

nlohmann::json CostLedger::to_json() const {
  std::lock_guard lock(mu_);
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : items_) items.push_back(coalfake::to_json(it));
  return {{"rates",
           {{"in_per_1M", rates_.in_per_1m},
            {"out_per_1M", rates_.out_per_1m},
            {"human_per_unit", rates_.human_per_unit},
            {"unit_tokens", rates_.unit_tokens}}},
          {"llm_prompt_tokens", prompt_tokens_},
          {"llm_completion_tokens", completion_tokens_},
          {"human_tokens", human_tokens_},
          {"human_units", human_units_},
          {"pending_items", items}};
}

CostLedger CostLedger::from_json(const nlohmann::json& j) {
  CostRates r;
  const auto& rj = j.at("rates");
  r.in_per_1m = rj.at("in_per_1M").get<double>();
  r.out_per_1m = rj.at("out_per_1M").get<double>();
  r.human_per_unit = rj.at("human_per_unit").get<double>();
  r.unit_tokens = rj.at("unit_tokens").get<std::int64_t>();
  CostLedger l(r);
  l.prompt_tokens_ = j.at("llm_prompt_tokens").get<std::int64_t>();
  l.completion_tokens_ = j.at("llm_completion_tokens").get<std::int64_t>();
  l.human_tokens_ = j.at("human_tokens").get<std::int64_t>();
  l.human_units_ = j.at("human_units").get<std::int64_t>();
  for (const auto& it : j.value("pending_items", nlohmann::json::array()))
    l.items_.push_back(ledger_item_from_json(it));
  return l;
}

}  // namespace coalfake
