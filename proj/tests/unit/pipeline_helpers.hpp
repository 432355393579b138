#pragma once

#include "coalfake/config.hpp"

namespace testing_helpers {

// A small synthetic run that finishes a round in well under a second.
inline nlohmann::json tiny_config(std::uint64_t seed = 0) {
  using nlohmann::json;
  return coalfake::config::merge(
      coalfake::config::defaults(),
      json{{"seed", seed},
           {"corpus", {{"demo_per_source", 10}, {"synth", {{"enabled", true}, {"n_domains", 3}, {"per_domain", 150}}}}},
           {"sampling", {{"M_per_round", 60}}},
           {"model", {{"d", 8}, {"hidden", 8}, {"epochs", 8}, {"batch", 32}, {"lr_generator", 1e-3}}},
           {"verifier", {{"ngram", 1}, {"epochs", 10}}},
           {"stop", {{"max_rounds", 3}, {"patience", 5}}}});
}

}  // namespace testing_helpers
