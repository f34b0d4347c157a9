#include "klg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "klg/io_util.hpp"

namespace klg {

namespace {

struct Counts {
  size_t tp = 0, fp = 0, fn = 0;
};

double f1_of(double p, double r) { return p + r > 0.0 ? 2 * p * r / (p + r) : 0.0; }

std::vector<Counts> per_class_counts(std::span<const size_t> preds,
                                     std::span<const size_t> golds,
                                     size_t n_labels) {
  if (preds.size() != golds.size()) {
    throw ContractError("metric inputs differ in length: " +
                        std::to_string(preds.size()) + " vs " +
                        std::to_string(golds.size()));
  }
  std::vector<Counts> counts(n_labels);
  for (size_t i = 0; i < preds.size(); ++i) {
    const size_t p = preds[i], g = golds[i];
    if (p >= n_labels || g >= n_labels) {
      throw ContractError("label id out of range in metric inputs");
    }
    if (p == g) {
      ++counts[g].tp;
    } else {
      ++counts[p].fp;
      ++counts[g].fn;
    }
  }
  return counts;
}

PrfBlock pool(const std::vector<Counts>& counts,
              std::span<const size_t> classes) {
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t c : classes) {
    tp += counts[c].tp;
    fp += counts[c].fp;
    fn += counts[c].fn;
  }
  PrfBlock block;
  block.defined = tp + fn > 0;
  block.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  block.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  block.micro_f1 = f1_of(block.precision, block.recall);
  return block;
}

}  // namespace

double micro_f1_excl(std::span<const size_t> preds,
                     std::span<const size_t> golds, size_t no_relation_id) {
  size_t n_labels = no_relation_id + 1;
  for (size_t v : preds) n_labels = std::max(n_labels, v + 1);
  for (size_t v : golds) n_labels = std::max(n_labels, v + 1);
  std::vector<Counts> counts = per_class_counts(preds, golds, n_labels);
  std::vector<size_t> classes;
  for (size_t c = 0; c < n_labels; ++c) {
    if (c != no_relation_id) classes.push_back(c);
  }
  return pool(counts, classes).micro_f1;
}

double macro_f1(std::span<const size_t> preds, std::span<const size_t> golds,
                std::span<const size_t> exclude, size_t n_labels) {
  std::vector<Counts> counts = per_class_counts(preds, golds, n_labels);
  std::set<size_t> excluded(exclude.begin(), exclude.end());
  double total = 0.0;
  size_t n = 0;
  for (size_t c = 0; c < n_labels; ++c) {
    if (excluded.count(c)) continue;
    const Counts& k = counts[c];
    const double p = k.tp + k.fp > 0 ? double(k.tp) / double(k.tp + k.fp) : 0.0;
    const double r = k.tp + k.fn > 0 ? double(k.tp) / double(k.tp + k.fn) : 0.0;
    total += f1_of(p, r);
    ++n;
  }
  if (n == 0) throw ContractError("macro_f1: every class is excluded");
  return total / static_cast<double>(n);
}

std::vector<size_t> labels_by_train_frequency(const Corpus& corpus) {
  std::map<size_t, size_t> freq;
  for (size_t id = 0; id < corpus.vocab.size(); ++id) {
    if (id != corpus.vocab.no_relation_id) freq[id] = 0;
  }
  for (const Example& ex : corpus.train) {
    if (ex.label != corpus.vocab.no_relation_id) ++freq[ex.label];
  }
  std::vector<size_t> order;
  for (const auto& [id, count] : freq) order.push_back(id);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return freq[a] != freq[b] ? freq[a] > freq[b] : a < b;
  });
  return order;
}

MetricsReport head_tail_report(std::span<const size_t> preds,
                               std::span<const size_t> golds,
                               const Corpus& corpus) {
  const size_t n_labels = corpus.vocab.size();
  if (n_labels < 21) {
    throw ConfigError(
        "head/tail breakdown needs at least 21 labels (10 head + 10 tail + "
        "no_relation), got " +
        std::to_string(n_labels));
  }
  std::vector<Counts> counts = per_class_counts(preds, golds, n_labels);

  MetricsReport report;
  const std::vector<size_t> by_freq = labels_by_train_frequency(corpus);
  report.head_labels.assign(by_freq.begin(), by_freq.begin() + 10);
  report.tail_labels.assign(by_freq.end() - 10, by_freq.end());

  report.micro_f1 = micro_f1_excl(preds, golds, corpus.vocab.no_relation_id);
  const std::vector<size_t> exclude = {corpus.vocab.no_relation_id};
  report.macro_f1 = macro_f1(preds, golds, exclude, n_labels);
  for (size_t c = 0; c < n_labels; ++c) {
    PerClassMetrics m;
    m.label = c;
    const Counts& k = counts[c];
    m.support = k.tp + k.fn;
    m.precision = k.tp + k.fp > 0 ? double(k.tp) / double(k.tp + k.fp) : 0.0;
    m.recall = k.tp + k.fn > 0 ? double(k.tp) / double(k.tp + k.fn) : 0.0;
    m.f1 = f1_of(m.precision, m.recall);
    report.per_class.push_back(m);
  }
  report.head_block = pool(counts, report.head_labels);
  report.tail_block = pool(counts, report.tail_labels);
  return report;
}

std::vector<std::pair<std::string, double>> weight_norm_report(
    Tensor classifier_weight, const LabelVocab& vocab,
    std::span<const size_t> order) {
  if (classifier_weight.rank() != 2 || classifier_weight.cols() != vocab.size()) {
    throw DimensionError("weight_norm_report: classifier shape " +
                         classifier_weight.shape_str() + " does not map to " +
                         std::to_string(vocab.size()) + " labels");
  }
  std::vector<std::pair<std::string, double>> out;
  for (size_t c : order) {
    if (c == vocab.no_relation_id) continue;
    double sq = 0.0;
    for (size_t i = 0; i < classifier_weight.rows(); ++i) {
      const double v = classifier_weight.at(i, c);
      sq += v * v;
    }
    out.emplace_back(vocab.name(c), std::sqrt(sq));
  }
  return out;
}

std::string csv_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void emit_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "#";
  for (size_t i = 0; i < table.columns.size(); ++i) {
    os << (i == 0 ? " " : ",") << table.columns[i];
  }
  os << "\n";
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      os << row[i];
    }
    os << "\n";
  }
  atomic_write_file(path, os.str());
}

nlohmann::ordered_json report_to_json(const MetricsReport& report,
                                      const LabelVocab& vocab) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["micro_f1"] = report.micro_f1;
  j["macro_f1"] = report.macro_f1;
  auto block = [](const PrfBlock& b) {
    ordered_json o;
    o["precision"] = b.precision;
    o["recall"] = b.recall;
    o["micro_f1"] = b.micro_f1;
    o["defined"] = b.defined;
    return o;
  };
  j["head_block"] = block(report.head_block);
  j["tail_block"] = block(report.tail_block);
  auto names = [&vocab](const std::vector<size_t>& ids) {
    std::vector<std::string> out;
    for (size_t id : ids) out.push_back(vocab.name(id));
    return out;
  };
  j["head_labels"] = names(report.head_labels);
  j["tail_labels"] = names(report.tail_labels);
  ordered_json per_class = ordered_json::array();
  for (const PerClassMetrics& m : report.per_class) {
    ordered_json o;
    o["label"] = vocab.name(m.label);
    o["precision"] = m.precision;
    o["recall"] = m.recall;
    o["f1"] = m.f1;
    o["support"] = m.support;
    per_class.push_back(std::move(o));
  }
  j["per_class"] = std::move(per_class);
  return j;
}

}  // namespace klg
