#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "klg/errors.hpp"
#include "klg/rng.hpp"

namespace klg {

// Ordered label names; ids are indices into names.
struct LabelVocab {
  std::vector<std::string> names;
  size_t no_relation_id = 0;

  static LabelVocab from_names(std::vector<std::string> names);
  size_t size() const { return names.size(); }
  const std::string& name(size_t id) const;
  size_t id_of(const std::string& name) const;  // throws VocabError
};

struct Span {
  size_t begin = 0;
  size_t end = 0;  // half-open
  bool operator==(const Span&) const = default;
};

// One relation-classification instance.
struct Example {
  std::string id;
  std::vector<std::string> tokens;
  Span head;
  Span tail;
  std::string head_type;
  std::string tail_type;
  size_t label = 0;
};

struct Corpus {
  LabelVocab vocab;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  uint64_t seed = 0;

  const std::vector<Example>& split(const std::string& name) const;
};

struct CorpusSpec {
  size_t n_labels = 21;  // total, including no_relation
  double zipf_exponent = 1.2;
  size_t train_size = 4000;
  size_t dev_size = 1000;
  size_t test_size = 1000;
  double template_noise = 0.15;
  double no_relation_rate = 0.3;
  uint64_t seed = 1;
};

// Synthetic long-tailed corpus: positive-class frequencies follow a Zipf law
// with the given exponent; tokens come from per-label template banks with
// entity slots; template_noise is the per-token probability of substitution
// by a random vocabulary token. no_relation examples mix entity pools of two
// different labels. Deterministic given spec.seed.
Corpus generate_corpus(const CorpusSpec& spec);

struct EncodedExample {
  std::vector<std::string> tokens;
  Span head;  // original entity tokens, markers/type tokens excluded
  Span tail;
};

// Head entity enclosed by "@ ... @", tail by "# ... #". With use_types, the
// type token goes immediately before each opening marker. Original token
// order is preserved.
EncodedExample encode_example(const Example& ex, bool use_types);

// Appends "Choose a relation from { ... } for the <e1> and the <e2>" with the
// candidate label names in a uniformly random order.
std::vector<std::string> apply_prompt(const EncodedExample& enc,
                                      std::span<const size_t> topk_labels,
                                      const LabelVocab& vocab, Rng& rng);

// Directory layout: labels.json, meta.json, {train,dev,test}.jsonl.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace klg
