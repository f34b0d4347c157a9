#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "klg/data.hpp"
#include "klg/tensor.hpp"

namespace klg {

struct PrfBlock {
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
  bool defined = true;  // false when the block has no gold examples
};

struct PerClassMetrics {
  size_t label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  size_t support = 0;
};

struct MetricsReport {
  double micro_f1 = 0.0;  // excluding no_relation
  double macro_f1 = 0.0;  // over positive classes
  std::vector<PerClassMetrics> per_class;
  PrfBlock head_block;
  PrfBlock tail_block;
  std::vector<size_t> head_labels;
  std::vector<size_t> tail_labels;
};

// Micro-F1 with TP/FP/FN pooled over every class except no_relation.
double micro_f1_excl(std::span<const size_t> preds,
                     std::span<const size_t> golds, size_t no_relation_id);

// Unweighted mean of per-class F1 over non-excluded classes. Classes with
// zero support and zero predictions contribute F1 = 0 and are counted.
double macro_f1(std::span<const size_t> preds, std::span<const size_t> golds,
                std::span<const size_t> exclude, size_t n_labels);

// Positive labels ordered by train frequency, most frequent first; ties by
// ascending label id.
std::vector<size_t> labels_by_train_frequency(const Corpus& corpus);

// Full report with the 10-most/10-least-frequent head/tail breakdown.
MetricsReport head_tail_report(std::span<const size_t> preds,
                               std::span<const size_t> golds,
                               const Corpus& corpus);

// Per-class L2 norms of the classifier weight columns, no_relation excluded,
// in the given label order (head -> tail).
std::vector<std::pair<std::string, double>> weight_norm_report(
    Tensor classifier_weight, const LabelVocab& vocab,
    std::span<const size_t> order);

// CSV with a leading "# col1,col2,..." header line; reals rendered with six
// significant digits.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};
std::string csv_real(double v);
void emit_csv(const CsvTable& table, const std::filesystem::path& path);

nlohmann::ordered_json report_to_json(const MetricsReport& report,
                                      const LabelVocab& vocab);

}  // namespace klg
