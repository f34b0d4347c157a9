#include "klg/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <iomanip>

#include <json.hpp>

#include "klg/io_util.hpp"

namespace klg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// LabelVocab

LabelVocab LabelVocab::from_names(std::vector<std::string> names) {
  LabelVocab v;
  std::set<std::string> seen;
  size_t no_rel = names.size();
  for (size_t i = 0; i < names.size(); ++i) {
    if (!seen.insert(names[i]).second) {
      throw VocabError("duplicate label name: " + names[i]);
    }
    if (names[i] == "no_relation") no_rel = i;
  }
  if (no_rel == names.size()) {
    throw VocabError("label vocabulary must contain \"no_relation\"");
  }
  v.names = std::move(names);
  v.no_relation_id = no_rel;
  return v;
}

const std::string& LabelVocab::name(size_t id) const {
  if (id >= names.size()) {
    throw ContractError("label id " + std::to_string(id) + " out of range");
  }
  return names[id];
}

size_t LabelVocab::id_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw VocabError("unknown label: " + name);
}

const std::vector<Example>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ContractError("unknown split: " + name);
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation

namespace {

const char* kRelationNames[] = {
    "per:employer",       "org:ceo",            "per:birthplace",
    "org:founded_by",     "per:spouse",         "loc:capital_of",
    "org:headquarters",   "per:schools",        "org:subsidiary_of",
    "per:residence",      "per:deathplace",     "org:shareholder",
    "per:sibling",        "loc:contains",       "org:product",
    "per:title",          "org:member_of",      "per:parent",
    "loc:borders",        "org:dissolved_in",   "per:age",
    "loc:population_of",  "org:website",        "per:nationality",
};
constexpr size_t kNumRelationNames = sizeof(kRelationNames) / sizeof(char*);

const char* kTypeCycle[] = {"PER", "ORG", "LOC", "MISC"};

struct LabelBank {
  std::vector<std::string> head_pool;
  std::vector<std::string> tail_pool;
  std::vector<std::string> verbs;
  std::string head_type;
  std::string tail_type;
};

struct TemplateBanks {
  std::vector<LabelBank> banks;           // indexed by positive rank (0-based)
  std::vector<std::string> fillers;
  std::vector<std::string> years;
  std::vector<std::string> global_vocab;  // sorted union, for noise draws
};

std::string positive_name(size_t rank) {
  if (rank < kNumRelationNames) return kRelationNames[rank];
  std::ostringstream os;
  os << "rel:extra_" << rank;
  return os.str();
}

TemplateBanks build_banks(size_t n_positive) {
  TemplateBanks tb;
  tb.fillers = {"the", "a", "of", "in", "was", "by", ",", "."};
  tb.years = {"1987", "1999", "2003", "2011", "2015", "2020"};
  std::set<std::string> all(tb.fillers.begin(), tb.fillers.end());
  all.insert(tb.years.begin(), tb.years.end());
  for (size_t p = 0; p < n_positive; ++p) {
    LabelBank bank;
    const std::string tag = std::to_string(p + 1);
    for (int i = 0; i < 6; ++i) {
      bank.head_pool.push_back("E" + tag + "H" + std::to_string(i));
      bank.tail_pool.push_back("E" + tag + "T" + std::to_string(i));
    }
    for (int i = 0; i < 3; ++i) {
      bank.verbs.push_back("V" + tag + char('A' + i));
    }
    bank.head_type = kTypeCycle[p % 4];
    bank.tail_type = kTypeCycle[(p + 1 + p / 4) % 4];
    all.insert(bank.head_pool.begin(), bank.head_pool.end());
    all.insert(bank.tail_pool.begin(), bank.tail_pool.end());
    all.insert(bank.verbs.begin(), bank.verbs.end());
    tb.banks.push_back(std::move(bank));
  }
  tb.global_vocab.assign(all.begin(), all.end());
  return tb;
}

std::vector<std::string> draw_entity(const std::vector<std::string>& pool,
                                     Rng& rng) {
  const size_t len = 1 + rng.below(2);
  const size_t first = rng.below(pool.size());
  std::vector<std::string> out = {pool[first]};
  if (len == 2) {
    size_t second = rng.below(pool.size() - 1);
    if (second >= first) ++second;
    out.push_back(pool[second]);
  }
  return out;
}

// Assembles one sentence from the bank of `tmpl_label`, with entities drawn
// from `head_label`/`tail_label` pools (all equal for positive examples).
Example assemble(const TemplateBanks& tb, size_t tmpl_label, size_t head_label,
                 size_t tail_label, Rng& rng) {
  const LabelBank& tmpl_bank = tb.banks[tmpl_label];
  const LabelBank& head_bank = tb.banks[head_label];
  const LabelBank& tail_bank = tb.banks[tail_label];
  const std::vector<std::string> head = draw_entity(head_bank.head_pool, rng);
  const std::vector<std::string> tail = draw_entity(tail_bank.tail_pool, rng);
  const size_t variant = rng.below(3);
  const std::string& year = tb.years[rng.below(tb.years.size())];

  Example ex;
  ex.head_type = head_bank.head_type;
  ex.tail_type = tail_bank.tail_type;
  auto put = [&ex](const std::string& tok) { ex.tokens.push_back(tok); };
  auto put_span = [&ex](const std::vector<std::string>& ent) {
    Span s{ex.tokens.size(), ex.tokens.size() + ent.size()};
    for (const std::string& tok : ent) ex.tokens.push_back(tok);
    return s;
  };
  switch (variant) {
    case 0:
      ex.head = put_span(head);
      put("the");
      put(tmpl_bank.verbs[0]);
      put("of");
      ex.tail = put_span(tail);
      put(".");
      break;
    case 1:
      ex.head = put_span(head);
      put(tmpl_bank.verbs[1]);
      ex.tail = put_span(tail);
      put("in");
      put(year);
      put(".");
      break;
    default:
      put("the");
      ex.tail = put_span(tail);
      put("was");
      put(tmpl_bank.verbs[2]);
      put("by");
      ex.head = put_span(head);
      put(",");
      break;
  }
  return ex;
}

void apply_noise(Example& ex, const TemplateBanks& tb, double noise, Rng& rng) {
  if (noise <= 0.0) return;
  for (std::string& tok : ex.tokens) {
    if (rng.uniform() < noise) {
      tok = tb.global_vocab[rng.below(tb.global_vocab.size())];
    }
  }
}

std::vector<Example> generate_split(const TemplateBanks& tb,
                                    const LabelVocab& vocab,
                                    const std::vector<double>& zipf_cdf,
                                    const CorpusSpec& spec,
                                    const std::string& split_name, size_t count,
                                    Rng rng) {
  const size_t n_positive = tb.banks.size();
  std::vector<Example> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    Example ex;
    if (rng.uniform() < spec.no_relation_rate) {
      const size_t tmpl = rng.below(n_positive);
      const size_t head = rng.below(n_positive);
      size_t tail = rng.below(n_positive - 1);
      if (tail >= head) ++tail;  // mismatched pools make the pair unrelated
      ex = assemble(tb, tmpl, head, tail, rng);
      ex.label = vocab.no_relation_id;
    } else {
      const double u = rng.uniform();
      size_t rank = static_cast<size_t>(
          std::lower_bound(zipf_cdf.begin(), zipf_cdf.end(), u) -
          zipf_cdf.begin());
      if (rank >= n_positive) rank = n_positive - 1;
      ex = assemble(tb, rank, rank, rank, rng);
      ex.label = vocab.id_of(positive_name(rank));
    }
    apply_noise(ex, tb, spec.template_noise, rng);
    std::ostringstream id;
    id << split_name << "-" << std::setw(6) << std::setfill('0') << i;
    ex.id = id.str();
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  if (spec.n_labels < 12) {
    throw ConfigError("n_labels must be >= 12, got " +
                      std::to_string(spec.n_labels));
  }
  if (spec.train_size == 0 || spec.dev_size == 0 || spec.test_size == 0) {
    throw ConfigError("corpus split sizes must be positive");
  }
  if (spec.template_noise < 0.0 || spec.template_noise > 1.0) {
    throw ConfigError("template_noise must lie in [0,1]");
  }
  if (spec.no_relation_rate < 0.0 || spec.no_relation_rate >= 1.0) {
    throw ConfigError("no_relation_rate must lie in [0,1)");
  }
  const size_t n_positive = spec.n_labels - 1;

  std::vector<std::string> names = {"no_relation"};
  for (size_t p = 0; p < n_positive; ++p) names.push_back(positive_name(p));

  Corpus corpus;
  corpus.vocab = LabelVocab::from_names(std::move(names));
  corpus.seed = spec.seed;

  const TemplateBanks tb = build_banks(n_positive);

  // Zipf CDF over positive ranks; exponent 0 degenerates to uniform.
  std::vector<double> cdf(n_positive);
  double total = 0.0;
  for (size_t j = 0; j < n_positive; ++j) {
    total += std::pow(static_cast<double>(j + 1), -spec.zipf_exponent);
    cdf[j] = total;
  }
  for (double& v : cdf) v /= total;

  Rng root(spec.seed);
  corpus.train = generate_split(tb, corpus.vocab, cdf, spec, "train",
                                spec.train_size, root.derive(1));
  corpus.dev = generate_split(tb, corpus.vocab, cdf, spec, "dev",
                              spec.dev_size, root.derive(2));
  corpus.test = generate_split(tb, corpus.vocab, cdf, spec, "test",
                               spec.test_size, root.derive(3));
  return corpus;
}

// ---------------------------------------------------------------------------
// Encoding

EncodedExample encode_example(const Example& ex, bool use_types) {
  const size_t n = ex.tokens.size();
  const bool valid_spans =
      ex.head.begin < ex.head.end && ex.head.end <= n &&
      ex.tail.begin < ex.tail.end && ex.tail.end <= n &&
      (ex.head.end <= ex.tail.begin || ex.tail.end <= ex.head.begin);
  if (!valid_spans) {
    throw ContractError("encode_example: invalid or overlapping spans in " +
                        ex.id);
  }
  EncodedExample out;
  out.tokens.reserve(n + 6);
  const bool head_type = use_types && !ex.head_type.empty();
  const bool tail_type = use_types && !ex.tail_type.empty();
  for (size_t i = 0; i <= n; ++i) {
    if (i == ex.head.begin) {
      if (head_type) out.tokens.push_back(ex.head_type);
      out.tokens.push_back("@");
      out.head.begin = out.tokens.size();
    }
    if (i == ex.head.end) {
      out.head.end = out.tokens.size();
      out.tokens.push_back("@");
    }
    if (i == ex.tail.begin) {
      if (tail_type) out.tokens.push_back(ex.tail_type);
      out.tokens.push_back("#");
      out.tail.begin = out.tokens.size();
    }
    if (i == ex.tail.end) {
      out.tail.end = out.tokens.size();
      out.tokens.push_back("#");
    }
    if (i < n) out.tokens.push_back(ex.tokens[i]);
  }
  return out;
}

std::vector<std::string> apply_prompt(const EncodedExample& enc,
                                      std::span<const size_t> topk_labels,
                                      const LabelVocab& vocab, Rng& rng) {
  if (topk_labels.empty()) {
    throw ContractError("apply_prompt: empty candidate set");
  }
  std::vector<size_t> order(topk_labels.begin(), topk_labels.end());
  rng.shuffle(order);
  std::vector<std::string> out = enc.tokens;
  out.insert(out.end(), {"Choose", "a", "relation", "from", "{"});
  for (size_t i = 0; i < order.size(); ++i) {
    out.push_back(vocab.name(order[i]));
    if (i + 1 < order.size()) out.push_back(",");
  }
  out.insert(out.end(), {"}", "for", "the"});
  for (size_t i = enc.head.begin; i < enc.head.end; ++i)
    out.push_back(enc.tokens[i]);
  out.insert(out.end(), {"and", "the"});
  for (size_t i = enc.tail.begin; i < enc.tail.end; ++i)
    out.push_back(enc.tokens[i]);
  return out;
}

// ---------------------------------------------------------------------------
// I/O

namespace {

json example_to_json(const Example& ex, const LabelVocab& vocab) {
  json j;
  j["id"] = ex.id;
  j["tokens"] = ex.tokens;
  j["head"] = {ex.head.begin, ex.head.end};
  j["tail"] = {ex.tail.begin, ex.tail.end};
  j["head_type"] = ex.head_type;
  j["tail_type"] = ex.tail_type;
  j["label"] = vocab.name(ex.label);
  return j;
}

Span span_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() ||
      !j[1].is_number_unsigned()) {
    throw ParseError(where + ": span must be a two-integer array");
  }
  return Span{j[0].get<size_t>(), j[1].get<size_t>()};
}

Example example_from_json(const json& j, const LabelVocab& vocab,
                          const std::string& where) {
  for (const char* field :
       {"id", "tokens", "head", "tail", "head_type", "tail_type", "label"}) {
    if (!j.contains(field)) {
      throw ParseError(where + ": missing field \"" + field + "\"");
    }
  }
  Example ex;
  ex.id = j["id"].get<std::string>();
  ex.tokens = j["tokens"].get<std::vector<std::string>>();
  ex.head = span_from_json(j["head"], where);
  ex.tail = span_from_json(j["tail"], where);
  ex.head_type = j["head_type"].get<std::string>();
  ex.tail_type = j["tail_type"].get<std::string>();
  ex.label = vocab.id_of(j["label"].get<std::string>());
  return ex;
}

void write_split(const std::vector<Example>& split, const LabelVocab& vocab,
                 const fs::path& path) {
  std::ostringstream os;
  for (const Example& ex : split) {
    os << example_to_json(ex, vocab).dump() << "\n";
  }
  atomic_write_file(path, os.str());
}

std::vector<Example> read_split(const LabelVocab& vocab, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where =
        path.filename().string() + " line " + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(where + ": invalid JSON");
    out.push_back(example_from_json(j, vocab, where));
  }
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  atomic_write_file(dir / "labels.json", json(corpus.vocab.names).dump() + "\n");
  json meta;
  meta["seed"] = corpus.seed;
  atomic_write_file(dir / "meta.json", meta.dump() + "\n");
  write_split(corpus.train, corpus.vocab, dir / "train.jsonl");
  write_split(corpus.dev, corpus.vocab, dir / "dev.jsonl");
  write_split(corpus.test, corpus.vocab, dir / "test.jsonl");
}

Corpus read_corpus(const fs::path& dir) {
  const fs::path labels_path = dir / "labels.json";
  std::ifstream in(labels_path);
  if (!in) throw IoError("cannot open " + labels_path.string());
  json names = json::parse(in, nullptr, false);
  if (names.is_discarded() || !names.is_array()) {
    throw ParseError(labels_path.string() + ": expected a JSON array of labels");
  }
  Corpus corpus;
  corpus.vocab = LabelVocab::from_names(names.get<std::vector<std::string>>());
  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (meta_in) {
    json meta = json::parse(meta_in, nullptr, false);
    if (!meta.is_discarded() && meta.contains("seed")) {
      corpus.seed = meta["seed"].get<uint64_t>();
    }
  }
  corpus.train = read_split(corpus.vocab, dir / "train.jsonl");
  corpus.dev = read_split(corpus.vocab, dir / "dev.jsonl");
  corpus.test = read_split(corpus.vocab, dir / "test.jsonl");
  return corpus;
}

}  // namespace klg
