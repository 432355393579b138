#pragma once

#include <cstdint>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace coalfake {

/// Prices in USD. Defaults: $3.00 / $6.00 per 1M input / output tokens, $0.11 per
/// 50-token human labelling unit.
struct CostRates {
  double in_per_1m = 3.00;
  double out_per_1m = 6.00;
  double human_per_unit = 0.11;
  std::int64_t unit_tokens = 50;
};

struct LedgerItem {
  std::string record_id;
  std::string kind;  // "llm" | "human"
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t human_tokens = 0;
  std::int64_t human_units = 0;
};

/// Token and cost accounting. Money is kept in integer nano-dollars so that totals are
/// exact sums of per-call charges. All members are safe to call concurrently.
class CostLedger {
 public:
  explicit CostLedger(CostRates rates = {});
  CostLedger(const CostLedger& other);
  CostLedger& operator=(const CostLedger& other);

  void charge_llm(const std::string& record_id, std::int64_t prompt_tokens, std::int64_t completion_tokens);
  /// Charges ceil(tokens / unit_tokens) units.
  void charge_human(const std::string& record_id, std::int64_t tokens);

  std::int64_t llm_prompt_tokens() const;
  std::int64_t llm_completion_tokens() const;
  std::int64_t human_tokens() const;
  std::int64_t human_units() const;

  double llm_usd() const;
  double human_usd() const;
  double total_usd() const;

  const CostRates& rates() const { return rates_; }

  /// Items charged since the last call; clears the list.
  std::vector<LedgerItem> take_items();

  nlohmann::json to_json() const;
  static CostLedger from_json(const nlohmann::json& j);

 private:
  std::int64_t llm_nanos_locked() const;

  CostRates rates_;
  mutable std::mutex mu_;
  std::int64_t prompt_tokens_ = 0;
  std::int64_t completion_tokens_ = 0;
  std::int64_t human_tokens_ = 0;
  std::int64_t human_units_ = 0;
  std::vector<LedgerItem> items_;
};

nlohmann::json to_json(const LedgerItem& item);
LedgerItem ledger_item_from_json(const nlohmann::json& j);

}  // namespace coalfake
