#include "coalfake/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_set>

#include "coalfake/encoder.hpp"

namespace coalfake::corpus {

std::vector<NewsRecord> load_jsonl(const std::filesystem::path& path, const std::string& source) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open corpus file: " + path.string());

  std::vector<NewsRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto where = [&] { return path.string() + ":" + std::to_string(lineno); };

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidArgument(where() + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text"))
      throw InvalidArgument(where() + ": expected an object with \"id\" and \"text\"");

    NewsRecord r;
    r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    if (!j["text"].is_string()) throw InvalidArgument(where() + ": \"text\" must be a string");
    r.text = j["text"].get<std::string>();
    if (trim(r.text).empty()) throw InvalidArgument(where() + ": empty text for id " + r.id);
    r.source = source;
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& lj = j["label"];
      std::string raw = lj.is_string() ? lj.get<std::string>() : lj.dump();
      auto lab = parse_label(raw);
      if (!lab) throw InvalidArgument(where() + ": unrecognized label '" + raw + "'");
      r.gold_label = *lab;
    }
    if (!seen.insert(r.id).second) throw InvalidArgument(where() + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

CorpusSplit split(const std::vector<NewsRecord>& records, const SplitSpec& spec) {
  if (!(spec.pool_frac > 0.0 && spec.pool_frac < 1.0))
    throw InvalidArgument("pool_frac must lie in (0, 1)");

  std::map<std::string, std::vector<std::size_t>> by_source;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!ids.insert(records[i].id).second)
      throw InvalidArgument("duplicate id '" + records[i].id + "'");
    by_source[records[i].source].push_back(i);
  }

  enum class Part : char { kDemo, kPool, kTest };
  std::vector<Part> part(records.size(), Part::kTest);

  for (const auto& [source, idx] : by_source) {
    if (idx.size() < spec.demo_per_source)
      throw InvalidArgument("source '" + source + "' has " + std::to_string(idx.size()) +
                            " records, fewer than demo_per_source=" +
                            std::to_string(spec.demo_per_source));
    std::vector<std::size_t> order = idx;
    Rng rng(derive_seed(spec.seed, source));
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t rest = order.size() - spec.demo_per_source;
    const auto n_pool =
        static_cast<std::size_t>(std::floor(spec.pool_frac * static_cast<double>(rest) + 1e-9));
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k < spec.demo_per_source)
        part[order[k]] = Part::kDemo;
      else if (k < spec.demo_per_source + n_pool)
        part[order[k]] = Part::kPool;
    }
  }

  CorpusSplit out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (part[i]) {
      case Part::kDemo: out.demo.push_back(records[i]); break;
      case Part::kPool: out.pool.push_back(records[i]); break;
      case Part::kTest: out.test.push_back(records[i]); break;
    }
  }
  return out;
}

std::string synth_source_name(std::size_t domain) { return "domain" + std::to_string(domain); }

std::vector<std::string> sources_of(const std::vector<NewsRecord>& records) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records)
    if (seen.insert(r.source).second) out.push_back(r.source);
  return out;
}

namespace {

std::string make_word(Rng& rng) {
  static constexpr std::string_view kOnset = "bdfgklmnprstvz";
  static constexpr std::string_view kVowel = "aeiou";
  std::uniform_int_distribution<int> syllables(2, 4);
  std::uniform_int_distribution<std::size_t> on(0, kOnset.size() - 1);
  std::uniform_int_distribution<std::size_t> vo(0, kVowel.size() - 1);
  std::string w;
  for (int s = syllables(rng); s > 0; --s) {
    w.push_back(kOnset[on(rng)]);
    w.push_back(kVowel[vo(rng)]);
  }
  return w;
}

}  // namespace

SynthCorpus synth_corpus(const SynthSpec& spec) {
  if (spec.n_domains < 2) throw InvalidArgument("synth_corpus needs n_domains >= 2");
  if (!(spec.noise >= 0.0 && spec.noise <= 0.5)) throw InvalidArgument("noise must lie in [0, 0.5]");
  if (!spec.domain_sizes.empty() && spec.domain_sizes.size() != spec.n_domains)
    throw InvalidArgument("domain_sizes must have n_domains entries");
  if (spec.vocab_per_domain == 0 || spec.words_per_record == 0 || spec.anchor_words == 0)
    throw InvalidArgument("synth vocabulary sizes must be positive");

  const encoder::MockEncoder enc(spec.encoder_dim, spec.encoder_seed.value_or(spec.seed));
  Rng vocab_rng(derive_seed(spec.seed, "synth-vocab"));

  std::set<std::string> used;
  auto fresh_word = [&] {
    for (;;) {
      std::string w = make_word(vocab_rng);
      if (used.insert(w).second) return w;
    }
  };

  struct Domain {
    std::vector<std::string> anchors;
    std::vector<std::string> vocab;
    Eigen::VectorXd centre;     // raw anchor contribution
    Eigen::VectorXd direction;  // unit, orthogonal to centre
  };
  std::vector<Domain> domains(spec.n_domains);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& d : domains) {
    d.centre = Eigen::VectorXd::Zero(spec.encoder_dim);
    for (std::size_t a = 0; a < spec.anchor_words; ++a) {
      d.anchors.push_back(fresh_word());
      d.centre += static_cast<double>(spec.anchor_repeat) * enc.token_vector(d.anchors.back());
    }
    Eigen::VectorXd vocab_mean = Eigen::VectorXd::Zero(spec.encoder_dim);
    for (std::size_t v = 0; v < spec.vocab_per_domain; ++v) {
      d.vocab.push_back(fresh_word());
      vocab_mean += enc.token_vector(d.vocab.back()) / static_cast<double>(spec.vocab_per_domain);
    }
    Eigen::VectorXd dir(spec.encoder_dim);
    for (int i = 0; i < dir.size(); ++i) dir[i] = gauss(vocab_rng);
    // Orthogonal to the expected record vector, so the hyperplane splits the domain roughly in half.
    const Eigen::VectorXd c = (d.centre + static_cast<double>(spec.words_per_record) * vocab_mean).normalized();
    dir -= dir.dot(c) * c;
    d.direction = dir.normalized();
  }

  SynthCorpus out;
  Rng rng(derive_seed(spec.seed, "synth-records"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t j = 0; j < spec.n_domains; ++j) {
    const auto& d = domains[j];
    const std::size_t n = spec.domain_sizes.empty() ? spec.per_domain : spec.domain_sizes[j];
    std::uniform_int_distribution<std::size_t> pick(0, d.vocab.size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::string> tokens;
      double proj = 0.0;
      // Rejection keeps every record at least `margin` away from the label hyperplane.
      for (int attempt = 0;; ++attempt) {
        tokens.clear();
        for (const auto& a : d.anchors)
          for (std::size_t r = 0; r < spec.anchor_repeat; ++r) tokens.push_back(a);
        Eigen::VectorXd z = d.centre;
        for (std::size_t w = 0; w < spec.words_per_record; ++w) {
          tokens.push_back(d.vocab[pick(rng)]);
          z += enc.token_vector(tokens.back());
        }
        proj = d.direction.dot(z) / z.norm();
        if (std::abs(proj) >= spec.margin || attempt >= 1000) break;
      }
      std::shuffle(tokens.begin(), tokens.end(), rng);

      std::string text;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t) text.push_back(' ');
        text += tokens[t];
      }
      text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      text.push_back('.');

      const Label clean = proj > 0.0 ? Label::kFake : Label::kReal;
      Label gold = clean;
      if (unif(rng) < spec.noise) gold = clean == Label::kFake ? Label::kReal : Label::kFake;

      char idbuf[32];
      std::snprintf(idbuf, sizeof idbuf, "d%zu-%05zu", j, i);
      out.records.push_back(NewsRecord{idbuf, std::move(text), synth_source_name(j), gold});
      out.clean_labels.push_back(clean);
      out.domain_of.push_back(j);
    }
  }
  return out;
}

SynthCorpus synth_corpus(std::size_t n_domains, std::size_t per_domain, double noise, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_domains = n_domains;
  spec.per_domain = per_domain;
  spec.noise = noise;
  spec.seed = seed;
  return synth_corpus(spec);
}

}  // namespace coalfake::corpus
