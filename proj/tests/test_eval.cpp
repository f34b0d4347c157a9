#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "klg/data.hpp"
#include "klg/eval.hpp"
#include "klg/rng.hpp"

using namespace klg;
namespace fs = std::filesystem;

namespace {

// Straightforward confusion-matrix oracle, written independently of eval.cpp.
struct Oracle {
  std::map<size_t, size_t> tp, fp, fn;
  Oracle(std::span<const size_t> preds, std::span<const size_t> golds) {
    for (size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == golds[i]) {
        ++tp[golds[i]];
      } else {
        ++fp[preds[i]];
        ++fn[golds[i]];
      }
    }
  }
  double micro_excl(size_t skip) {
    double TP = 0, FP = 0, FN = 0;
    for (auto& [c, v] : tp)
      if (c != skip) TP += v;
    for (auto& [c, v] : fp)
      if (c != skip) FP += v;
    for (auto& [c, v] : fn)
      if (c != skip) FN += v;
    const double p = TP + FP > 0 ? TP / (TP + FP) : 0;
    const double r = TP + FN > 0 ? TP / (TP + FN) : 0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0;
  }
  double class_f1(size_t c) {
    const double TP = tp[c], FP = fp[c], FN = fn[c];
    const double p = TP + FP > 0 ? TP / (TP + FP) : 0;
    const double r = TP + FN > 0 ? TP / (TP + FN) : 0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0;
  }
};

}  // namespace

TEST_CASE("micro_f1_excl basic cases") {
  // all correct, some gold no_relation (id 0)
  std::vector<size_t> golds = {0, 1, 2, 0, 3};
  std::vector<size_t> preds = golds;
  CHECK(micro_f1_excl(preds, golds, 0) == 1.0);

  // everything predicted no_relation while positives exist
  std::vector<size_t> all_no = {0, 0, 0, 0, 0};
  CHECK(micro_f1_excl(all_no, golds, 0) == 0.0);

  std::vector<size_t> shorter = {0, 1};
  CHECK_THROWS_AS(micro_f1_excl(shorter, golds, 0), ContractError);
}

TEST_CASE("micro_f1_excl matches the confusion-matrix oracle") {
  // hand-built 6-example confusion
  std::vector<size_t> golds = {1, 1, 2, 2, 0, 3};
  std::vector<size_t> preds = {1, 2, 2, 0, 1, 3};
  Oracle oracle(preds, golds);
  CHECK(std::abs(micro_f1_excl(preds, golds, 0) - oracle.micro_excl(0)) <=
        1e-12);

  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<size_t> g, p;
    for (int i = 0; i < 60; ++i) {
      g.push_back(rng.below(8));
      p.push_back(rng.below(8));
    }
    Oracle o(p, g);
    CHECK(std::abs(micro_f1_excl(p, g, 0) - o.micro_excl(0)) <= 1e-12);
  }
}

TEST_CASE("micro_f1_excl is invariant under relabeling that fixes no_relation") {
  Rng rng(17);
  std::vector<size_t> golds, preds;
  for (int i = 0; i < 200; ++i) {
    golds.push_back(rng.below(6));
    preds.push_back(rng.below(6));
  }
  const double base = micro_f1_excl(preds, golds, 0);
  // permutation over {1..5} fixing 0
  std::vector<size_t> perm = {0, 3, 5, 1, 4, 2};
  std::vector<size_t> g2, p2;
  for (size_t v : golds) g2.push_back(perm[v]);
  for (size_t v : preds) p2.push_back(perm[v]);
  CHECK(micro_f1_excl(p2, g2, 0) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("macro_f1 basic cases and oracle agreement") {
  std::vector<size_t> golds = {1, 2, 1, 2};
  std::vector<size_t> perfect = golds;
  std::vector<size_t> exclude = {0};
  CHECK(macro_f1(perfect, golds, exclude, 3) == 1.0);

  // class 1 perfect, class 2 never right -> mean of 1.0 and 0.0
  std::vector<size_t> golds2 = {1, 1, 2};
  std::vector<size_t> half = {1, 1, 0};
  CHECK(macro_f1(half, golds2, exclude, 3) ==
        doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(23);
  std::vector<size_t> g, p;
  for (int i = 0; i < 100; ++i) {
    g.push_back(rng.below(7));
    p.push_back(rng.below(7));
  }
  Oracle o(p, g);
  double want = 0.0;
  for (size_t c = 1; c < 7; ++c) want += o.class_f1(c);
  want /= 6.0;
  CHECK(macro_f1(p, g, exclude, 7) == doctest::Approx(want).epsilon(1e-12));

  std::vector<size_t> all = {0, 1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(macro_f1(p, g, all, 7), ContractError);
}

TEST_CASE("macro equals micro when supports and per-class F1s coincide") {
  // each positive class has TP=1, FP=1, FN=1
  std::vector<size_t> preds = {1, 2, 1, 2};
  std::vector<size_t> golds = {1, 2, 2, 1};
  std::vector<size_t> exclude = {0};
  const double macro = macro_f1(preds, golds, exclude, 3);
  const double micro = micro_f1_excl(preds, golds, 0);
  CHECK(macro == doctest::Approx(micro).epsilon(1e-15));
  CHECK(macro == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("head_tail_report blocks partition the pooled counts") {
  CorpusSpec spec;
  spec.n_labels = 21;
  spec.train_size = 2000;
  spec.dev_size = 50;
  spec.test_size = 400;
  spec.seed = 11;
  Corpus corpus = generate_corpus(spec);

  Rng rng(31);
  std::vector<size_t> golds, preds;
  for (const Example& ex : corpus.test) {
    golds.push_back(ex.label);
    preds.push_back(rng.below(corpus.vocab.size()));
  }
  MetricsReport report = head_tail_report(preds, golds, corpus);

  CHECK(report.head_labels.size() == 10);
  CHECK(report.tail_labels.size() == 10);
  for (size_t h : report.head_labels) {
    CHECK(std::find(report.tail_labels.begin(), report.tail_labels.end(), h) ==
          report.tail_labels.end());
  }

  // pooled TP equals head TP + tail TP (+ middle TP, empty with 20 positives)
  Oracle o(preds, golds);
  size_t head_tp = 0, tail_tp = 0, all_tp = 0;
  for (size_t c : report.head_labels) head_tp += o.tp[c];
  for (size_t c : report.tail_labels) tail_tp += o.tp[c];
  for (auto& [c, v] : o.tp) {
    if (c != corpus.vocab.no_relation_id) all_tp += v;
  }
  CHECK(all_tp == head_tp + tail_tp);

  // with head+tail covering all positives, re-pooling the two blocks'
  // counts reproduces the pooled metric
  size_t fp_sum = 0, fn_sum = 0;
  for (size_t c : report.head_labels) {
    fp_sum += o.fp[c];
    fn_sum += o.fn[c];
  }
  for (size_t c : report.tail_labels) {
    fp_sum += o.fp[c];
    fn_sum += o.fn[c];
  }
  const double p = double(all_tp) / double(all_tp + fp_sum);
  const double r = double(all_tp) / double(all_tp + fn_sum);
  CHECK(report.micro_f1 == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-12));

  // supports sum to the test-set size
  size_t support = 0;
  for (const PerClassMetrics& m : report.per_class) support += m.support;
  CHECK(support == corpus.test.size());
}

TEST_CASE("head_tail_report flags an empty tail block as undefined") {
  CorpusSpec spec;
  spec.n_labels = 21;
  spec.train_size = 2000;
  spec.dev_size = 50;
  spec.test_size = 100;
  spec.seed = 3;
  Corpus corpus = generate_corpus(spec);
  // restrict golds to the single most frequent class so the tail is empty
  std::vector<size_t> order = labels_by_train_frequency(corpus);
  std::vector<size_t> golds(40, order.front());
  std::vector<size_t> preds(40, order.front());
  MetricsReport report = head_tail_report(preds, golds, corpus);
  CHECK(report.head_block.defined);
  CHECK_FALSE(report.tail_block.defined);
}

TEST_CASE("head_tail_report needs at least 21 labels") {
  CorpusSpec spec;
  spec.n_labels = 12;
  spec.train_size = 100;
  spec.dev_size = 10;
  spec.test_size = 10;
  Corpus corpus = generate_corpus(spec);
  std::vector<size_t> golds(10, 1), preds(10, 1);
  CHECK_THROWS_AS(head_tail_report(preds, golds, corpus), ConfigError);
}

TEST_CASE("weight_norm_report values") {
  LabelVocab vocab =
      LabelVocab::from_names({"no_relation", "a", "b", "c"});
  // weight matrix [2 x 4]; class c's vector is column c
  Tensor w = Tensor::from({2, 4}, {0, 3, 0, 1,
                                   0, 4, 0, 2});
  std::vector<size_t> order = {1, 2, 3};
  auto norms = weight_norm_report(w, vocab, order);
  REQUIRE(norms.size() == 3);
  CHECK(norms[0].first == "a");
  CHECK(norms[0].second == doctest::Approx(5.0).epsilon(1e-15));  // 3-4-5
  CHECK(norms[1].second == 0.0);
  CHECK(norms[2].second ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));

  // matches direct sqrt-of-sum-of-squares and is zero iff the column is zero
  Rng rng(7);
  Tensor wr = Tensor::zeros({5, 4});
  for (double& v : wr.data()) v = rng.uniform(-2, 2);
  auto norms2 = weight_norm_report(wr, vocab, order);
  for (size_t idx = 0; idx < order.size(); ++idx) {
    double sq = 0;
    for (size_t i = 0; i < 5; ++i) sq += wr.at(i, order[idx]) * wr.at(i, order[idx]);
    CHECK(std::abs(norms2[idx].second - std::sqrt(sq)) <= 1e-12);
    CHECK(norms2[idx].second >= 0.0);
  }

  // no_relation is skipped even if listed in the order
  std::vector<size_t> with_no_rel = {0, 1};
  CHECK(weight_norm_report(w, vocab, with_no_rel).size() == 1);
}

TEST_CASE("emit_csv writes header plus one line per record") {
  const fs::path path = fs::temp_directory_path() / "klg_test_curve.csv";
  CsvTable table;
  table.columns = {"k", "recall"};
  std::vector<double> curve = {0.75, 0.9, 0.99, 1.0};
  for (size_t i = 0; i < curve.size(); ++i) {
    table.rows.push_back({std::to_string(i + 1), csv_real(curve[i])});
  }
  emit_csv(table, path);

  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == curve.size() + 1);
  CHECK(lines[0] == "# k,recall");

  // re-parse reproduces the values to 6 significant digits
  for (size_t i = 0; i < curve.size(); ++i) {
    std::istringstream row(lines[i + 1]);
    std::string kfield, rfield;
    std::getline(row, kfield, ',');
    std::getline(row, rfield, ',');
    const double parsed = std::stod(rfield);
    CHECK(parsed == doctest::Approx(curve[i]).epsilon(1e-6));
  }
  fs::remove(path);
}

TEST_CASE("emit_csv with no rows produces a header-only file") {
  const fs::path path = fs::temp_directory_path() / "klg_test_empty.csv";
  CsvTable table;
  table.columns = {"label", "norm"};
  emit_csv(table, path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == "# label,norm");
  fs::remove(path);
}
