#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "klg/checkpoint.hpp"
#include "klg/data.hpp"
#include "klg/rng.hpp"
#include "klg/tensor.hpp"

namespace klg {

// Token-string to embedding-row mapping, frozen at build time from the
// training split. Unseen tokens map to "<unk>".
struct TokenVocab {
  std::vector<std::string> tokens;  // sorted, unique, includes "<unk>"
  size_t unk_id = 0;

  static TokenVocab build(const Corpus& corpus, bool use_types,
                          bool include_prompt_tokens);
  size_t size() const { return tokens.size(); }
  size_t id_of(const std::string& token) const;
  std::vector<size_t> ids_of(std::span<const std::string> toks) const;
};

// Trainable token embeddings plus the relation-representation map shared by
// the base classifier and the graph model.
struct Backbone {
  TokenVocab tvocab;
  bool use_types = true;
  Tensor embeddings;  // [V x d]
  Tensor w_rel;       // [2d x d]
  Tensor b_rel;       // [d]

  size_t dim() const { return b_rel.size(); }
  std::vector<Tensor> parameters() const;
  Backbone clone() const;
};

Backbone init_backbone(TokenVocab tvocab, size_t dim, bool use_types, Rng& rng);

// Max-pooled span embeddings, concatenated and mapped to the relation
// representation r (rank-1, length d).
Tensor backbone_rep(Graph& g, const Backbone& bb, const EncodedExample& enc);

struct EncoderParams {
  Backbone bb;
  Tensor w_cls;  // [d x N]
  Tensor b_cls;  // [N]

  size_t n_labels() const { return b_cls.size(); }
  std::vector<Tensor> parameters() const;
  EncoderParams clone() const;
};

EncoderParams init_encoder(TokenVocab tvocab, size_t dim, size_t n_labels,
                           bool use_types, Rng& rng);

struct BaseForward {
  Tensor rep;     // [d]
  Tensor logits;  // [N]
};
BaseForward forward_relation_rep(Graph& g, const EncoderParams& params,
                                 const EncodedExample& enc);

// Ranked candidate labels with probabilities for one example.
// probs are non-increasing; ties break by ascending label id, so the
// ordering is total and labels[0] is the argmax prediction.
struct TopKSet {
  std::string example_id;
  std::vector<size_t> labels;
  std::vector<double> probs;

  TopKSet prefix(size_t k) const;
};

using TopKMap = std::map<std::string, TopKSet>;

// Optional per-example input rewrite (the prompt baseline hooks in here).
using InputTransform = std::function<EncodedExample(const Example&)>;

std::vector<TopKSet> predict_topk(const EncoderParams& params,
                                  std::span<const Example> examples, size_t k,
                                  const InputTransform& transform = nullptr);

std::vector<size_t> predict_labels(const EncoderParams& params,
                                   std::span<const Example> examples,
                                   const InputTransform& transform = nullptr);

// gamma * CE(gold) + (1-gamma)/k * sum over s(Top-k) of CE(j).
Tensor label_smoothing_loss(Graph& g, Tensor logits, size_t gold,
                            std::span<const size_t> topk_labels, double gamma);

// Entry k-1 holds the fraction of examples whose gold label appears among
// the first k candidates. Requires full rankings (k = N).
std::vector<double> topk_recall_curve(std::span<const TopKSet> sets,
                                      std::span<const Example> examples,
                                      size_t n_labels);

struct KChoice {
  size_t k = 1;
  bool fallback = false;  // curve never reached the threshold
};
KChoice choose_k(std::span<const double> recall_curve, double threshold);

enum class BaseMode { plain, label_smoothing, prompt };

struct BaseTrainConfig {
  size_t epochs = 10;
  size_t batch_size = 16;
  double learning_rate = 0.1;
  size_t dim = 16;
  bool use_types = true;
  uint64_t seed = 1;
  BaseMode mode = BaseMode::plain;
  double gamma = 0.9;  // label-smoothing weight on the gold label
  size_t topk_k = 6;   // |s(Top-k)| consumed by label smoothing / prompts
};

struct TrainLog {
  struct Epoch {
    size_t epoch = 0;
    double train_loss = 0.0;
    double dev_micro_f1 = 0.0;
  };
  std::vector<Epoch> epochs;
  size_t best_epoch = 0;
};

// Mini-batch gradient descent on mean cross-entropy (or the label-smoothing
// variant); returns the snapshot with the best dev Micro-F1 (excluding
// no_relation), earliest epoch on ties. The untrained initialization counts
// as epoch 0. label_smoothing and prompt modes need the Top-k map.
EncoderParams train_base(const Corpus& corpus, const BaseTrainConfig& config,
                         const TopKMap* topk = nullptr,
                         TrainLog* log = nullptr);

// Builds the prompt-augmented transform used by BaseMode::prompt.
InputTransform make_prompt_transform(const LabelVocab& vocab,
                                     const TopKMap& topk, size_t k,
                                     bool use_types,
                                     std::shared_ptr<Rng> rng);

// --- Top-k sets file (JSON Lines: id, labels as ranked names, probs) -------
void write_topk_file(std::span<const TopKSet> sets, const LabelVocab& vocab,
                     const std::filesystem::path& path);
std::vector<TopKSet> read_topk_file(const LabelVocab& vocab,
                                    const std::filesystem::path& path);
TopKMap topk_by_id(std::span<const TopKSet> sets);

// --- checkpoint conversion --------------------------------------------------
Checkpoint encoder_to_checkpoint(const EncoderParams& params,
                                 const LabelVocab& vocab);
EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt);

}  // namespace klg
