#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coalfake/util.hpp"

namespace coalfake {

/// One news article.
struct NewsRecord {
  std::string id;
  std::string text;
  std::string source;
  std::optional<Label> gold_label;

  bool operator==(const NewsRecord&) const = default;
};

namespace corpus {

struct SplitSpec {
  std::size_t demo_per_source = 100;
  double pool_frac = 0.75;
  std::uint64_t seed = 0;
};

struct CorpusSplit {
  std::vector<NewsRecord> demo;
  std::vector<NewsRecord> pool;
  std::vector<NewsRecord> test;
};

/// Reads JSON Lines with "id", "text" and optional "label". Blank lines are skipped.
/// Throws IoError for a missing file, InvalidArgument for malformed lines or duplicate ids.
std::vector<NewsRecord> load_jsonl(const std::filesystem::path& path, const std::string& source);

/// Per source: demo_per_source records into demo, then floor(pool_frac * rest) into pool,
/// the remainder into test. Sampling is uniform and seeded per source; each output list
/// keeps the input order.
CorpusSplit split(const std::vector<NewsRecord>& records, const SplitSpec& spec);

/// Knobs for the synthetic multi-domain generator.
///
/// Each domain owns an anchor phrase (repeated in every record) and a small aspect
/// vocabulary. A record is the anchor phrase plus `words_per_record` aspect words. Under
/// the mock encoder the anchor phrase fixes the blob centre and the aspect words act as
/// Gaussian jitter. The clean label is the side of a domain-specific hyperplane through the
/// blob centre on which the record's embedding falls.
struct SynthSpec {
  std::size_t n_domains = 3;
  std::size_t per_domain = 100;
  std::vector<std::size_t> domain_sizes;  // overrides per_domain when nonempty
  double noise = 0.0;
  std::uint64_t seed = 0;

  std::size_t anchor_words = 3;
  std::size_t anchor_repeat = 4;
  std::size_t vocab_per_domain = 12;
  std::size_t words_per_record = 6;
  double margin = 0.02;  // minimum |projection| of a normalized embedding on the label direction

  int encoder_dim = 16;
  std::optional<std::uint64_t> encoder_seed;  // defaults to seed
};

struct SynthCorpus {
  std::vector<NewsRecord> records;     // gold_label carries the injected noise
  std::vector<Label> clean_labels;     // latent rule, aligned with records
  std::vector<std::size_t> domain_of;  // blob index, aligned with records
};

SynthCorpus synth_corpus(const SynthSpec& spec);
SynthCorpus synth_corpus(std::size_t n_domains, std::size_t per_domain, double noise, std::uint64_t seed);

std::string synth_source_name(std::size_t domain);

/// Distinct source tags in order of first appearance.
std::vector<std::string> sources_of(const std::vector<NewsRecord>& records);

}  // namespace corpus
}  // namespace coalfake
