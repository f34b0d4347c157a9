#include "klg/base_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "klg/eval.hpp"
#include "klg/io_util.hpp"
#include "klg/optim.hpp"

namespace klg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TokenVocab

TokenVocab TokenVocab::build(const Corpus& corpus, bool use_types,
                             bool include_prompt_tokens) {
  std::set<std::string> toks;
  toks.insert("<unk>");
  for (const Example& ex : corpus.train) {
    EncodedExample enc = encode_example(ex, use_types);
    toks.insert(enc.tokens.begin(), enc.tokens.end());
  }
  if (include_prompt_tokens) {
    for (const char* t :
         {"Choose", "a", "relation", "from", "{", ",", "}", "for", "the", "and"}) {
      toks.insert(t);
    }
    toks.insert(corpus.vocab.names.begin(), corpus.vocab.names.end());
  }
  TokenVocab v;
  v.tokens.assign(toks.begin(), toks.end());
  v.unk_id = v.id_of("<unk>");
  return v;
}

size_t TokenVocab::id_of(const std::string& token) const {
  auto it = std::lower_bound(tokens.begin(), tokens.end(), token);
  if (it != tokens.end() && *it == token) {
    return static_cast<size_t>(it - tokens.begin());
  }
  return unk_id;
}

std::vector<size_t> TokenVocab::ids_of(std::span<const std::string> toks) const {
  std::vector<size_t> out;
  out.reserve(toks.size());
  for (const std::string& t : toks) out.push_back(id_of(t));
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Tensor gaussian(std::vector<size_t> shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Weight matrices are fan-in scaled; embeddings start at unit scale so the
// span features carry signal from step one.
Tensor fan_in_init(size_t rows, size_t cols, Rng& rng) {
  return gaussian({rows, cols}, 1.0 / std::sqrt(double(rows)), rng);
}

}  // namespace

Backbone init_backbone(TokenVocab tvocab, size_t dim, bool use_types, Rng& rng) {
  if (dim == 0) throw ConfigError("hidden size must be positive");
  Backbone bb;
  bb.use_types = use_types;
  bb.embeddings = gaussian({tvocab.size(), dim}, 1.0, rng);
  bb.w_rel = fan_in_init(2 * dim, dim, rng);
  bb.b_rel = Tensor::zeros({dim}, true);
  bb.tvocab = std::move(tvocab);
  return bb;
}

std::vector<Tensor> Backbone::parameters() const {
  return {embeddings, w_rel, b_rel};
}

Backbone Backbone::clone() const {
  Backbone out;
  out.tvocab = tvocab;
  out.use_types = use_types;
  out.embeddings = embeddings.clone();
  out.w_rel = w_rel.clone();
  out.b_rel = b_rel.clone();
  return out;
}

EncoderParams init_encoder(TokenVocab tvocab, size_t dim, size_t n_labels,
                           bool use_types, Rng& rng) {
  EncoderParams p;
  p.bb = init_backbone(std::move(tvocab), dim, use_types, rng);
  p.w_cls = fan_in_init(dim, n_labels, rng);
  p.b_cls = Tensor::zeros({n_labels}, true);
  return p;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out = bb.parameters();
  out.push_back(w_cls);
  out.push_back(b_cls);
  return out;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams out;
  out.bb = bb.clone();
  out.w_cls = w_cls.clone();
  out.b_cls = b_cls.clone();
  return out;
}

// ---------------------------------------------------------------------------
// Forward

Tensor backbone_rep(Graph& g, const Backbone& bb, const EncodedExample& enc) {
  if (enc.head.begin >= enc.head.end || enc.tail.begin >= enc.tail.end) {
    throw ContractError("backbone_rep: empty entity span after encoding");
  }
  auto span_ids = [&](const Span& s) {
    std::vector<std::string> toks(enc.tokens.begin() + long(s.begin),
                                  enc.tokens.begin() + long(s.end));
    return bb.tvocab.ids_of(toks);
  };
  Tensor e1 = g.max_rows(g.gather_rows(bb.embeddings, span_ids(enc.head)));
  Tensor e2 = g.max_rows(g.gather_rows(bb.embeddings, span_ids(enc.tail)));
  return g.affine(g.concat(e1, e2), bb.w_rel, bb.b_rel);
}

BaseForward forward_relation_rep(Graph& g, const EncoderParams& params,
                                 const EncodedExample& enc) {
  BaseForward out;
  out.rep = backbone_rep(g, params.bb, enc);
  out.logits = g.affine(out.rep, params.w_cls, params.b_cls);
  return out;
}

// ---------------------------------------------------------------------------
// Top-k extraction

TopKSet TopKSet::prefix(size_t k) const {
  if (k == 0 || k > labels.size()) {
    throw ContractError("TopKSet::prefix: k=" + std::to_string(k) +
                        " exceeds available " + std::to_string(labels.size()) +
                        " entries for " + example_id);
  }
  TopKSet out;
  out.example_id = example_id;
  out.labels.assign(labels.begin(), labels.begin() + long(k));
  out.probs.assign(probs.begin(), probs.begin() + long(k));
  return out;
}

namespace {

std::vector<double> stable_softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

EncodedExample default_encode(const Example& ex, bool use_types) {
  return encode_example(ex, use_types);
}

}  // namespace

std::vector<TopKSet> predict_topk(const EncoderParams& params,
                                  std::span<const Example> examples, size_t k,
                                  const InputTransform& transform) {
  const size_t n_labels = params.n_labels();
  if (k == 0 || k > n_labels) {
    throw ConfigError("predict_topk: k=" + std::to_string(k) +
                      " outside [1," + std::to_string(n_labels) + "]");
  }
  std::vector<TopKSet> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) {
    EncodedExample enc =
        transform ? transform(ex) : default_encode(ex, params.bb.use_types);
    Graph g;
    BaseForward fwd = forward_relation_rep(g, params, enc);
    const std::vector<double> probs = stable_softmax(fwd.logits.data());
    std::vector<size_t> order(n_labels);
    for (size_t i = 0; i < n_labels; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
    });
    TopKSet set;
    set.example_id = ex.id;
    for (size_t i = 0; i < k; ++i) {
      set.labels.push_back(order[i]);
      set.probs.push_back(probs[order[i]]);
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<size_t> predict_labels(const EncoderParams& params,
                                   std::span<const Example> examples,
                                   const InputTransform& transform) {
  std::vector<size_t> out;
  out.reserve(examples.size());
  for (const TopKSet& set : predict_topk(params, examples, 1, transform)) {
    out.push_back(set.labels[0]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Tensor label_smoothing_loss(Graph& g, Tensor logits, size_t gold,
                            std::span<const size_t> topk_labels, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) {
    throw ConfigError("label smoothing gamma must lie in [0,1], got " +
                      std::to_string(gamma));
  }
  if (topk_labels.empty()) {
    throw ContractError("label_smoothing_loss: empty Top-k set");
  }
  Tensor gold_term = g.scale(g.cross_entropy(logits, gold), gamma);
  std::vector<Tensor> terms;
  terms.reserve(topk_labels.size());
  for (size_t j : topk_labels) terms.push_back(g.cross_entropy(logits, j));
  Tensor smooth = g.scale(g.add_n(terms),
                          (1.0 - gamma) / double(topk_labels.size()));
  return g.add(gold_term, smooth);
}

// ---------------------------------------------------------------------------
// Recall curve and k choice

std::vector<double> topk_recall_curve(std::span<const TopKSet> sets,
                                      std::span<const Example> examples,
                                      size_t n_labels) {
  if (sets.size() != examples.size()) {
    throw ContractError("topk_recall_curve: " + std::to_string(sets.size()) +
                        " sets vs " + std::to_string(examples.size()) +
                        " examples");
  }
  if (sets.empty()) throw ContractError("topk_recall_curve: no examples");
  std::vector<size_t> hits(n_labels, 0);
  for (size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].example_id != examples[i].id) {
      throw ContractError("topk_recall_curve: id mismatch at index " +
                          std::to_string(i) + ": " + sets[i].example_id +
                          " vs " + examples[i].id);
    }
    if (sets[i].labels.size() != n_labels) {
      throw ContractError(
          "topk_recall_curve: set " + sets[i].example_id + " covers " +
          std::to_string(sets[i].labels.size()) + " of " +
          std::to_string(n_labels) + " labels");
    }
    const auto& labels = sets[i].labels;
    const auto pos = std::find(labels.begin(), labels.end(), examples[i].label);
    if (pos != labels.end()) ++hits[size_t(pos - labels.begin())];
  }
  std::vector<double> curve(n_labels, 0.0);
  size_t cum = 0;
  for (size_t kk = 0; kk < n_labels; ++kk) {
    cum += hits[kk];
    curve[kk] = double(cum) / double(sets.size());
  }
  return curve;
}

KChoice choose_k(std::span<const double> recall_curve, double threshold) {
  if (recall_curve.empty()) {
    throw ContractError("choose_k: empty recall curve");
  }
  for (size_t i = 0; i < recall_curve.size(); ++i) {
    if (recall_curve[i] >= threshold) return {i + 1, false};
  }
  return {recall_curve.size(), true};
}

// ---------------------------------------------------------------------------
// Training

InputTransform make_prompt_transform(const LabelVocab& vocab,
                                     const TopKMap& topk, size_t k,
                                     bool use_types,
                                     std::shared_ptr<Rng> rng) {
  return [&vocab, &topk, k, use_types, rng](const Example& ex) {
    auto it = topk.find(ex.id);
    if (it == topk.end()) {
      throw ContractError("no Top-k set for example " + ex.id);
    }
    EncodedExample enc = encode_example(ex, use_types);
    const TopKSet sliced = it->second.prefix(std::min(k, it->second.labels.size()));
    enc.tokens = apply_prompt(enc, sliced.labels, vocab, *rng);
    return enc;
  };
}

EncoderParams train_base(const Corpus& corpus, const BaseTrainConfig& config,
                         const TopKMap* topk, TrainLog* log) {
  if (corpus.train.empty() || corpus.dev.empty()) {
    throw ContractError("train_base: train and dev splits must be nonempty");
  }
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  const bool needs_topk = config.mode != BaseMode::plain;
  if (needs_topk && topk == nullptr) {
    throw ContractError("train_base: this mode requires Top-k sets");
  }

  Rng root(config.seed);
  Rng init_rng = root.derive(1);
  Rng shuffle_rng = root.derive(2);
  auto prompt_rng = std::make_shared<Rng>(root.derive(3));

  TokenVocab tvocab =
      TokenVocab::build(corpus, config.use_types, config.mode == BaseMode::prompt);
  EncoderParams params = init_encoder(std::move(tvocab), config.dim,
                                      corpus.vocab.size(), config.use_types,
                                      init_rng);

  InputTransform transform;
  if (config.mode == BaseMode::prompt) {
    transform = make_prompt_transform(corpus.vocab, *topk, config.topk_k,
                                      config.use_types, prompt_rng);
  }

  auto topk_labels_for = [&](const Example& ex) -> std::vector<size_t> {
    auto it = topk->find(ex.id);
    if (it == topk->end()) {
      throw ContractError("no Top-k set for example " + ex.id);
    }
    return it->second.prefix(std::min(config.topk_k, it->second.labels.size()))
        .labels;
  };

  auto dev_f1 = [&](const EncoderParams& p) {
    std::vector<size_t> golds;
    golds.reserve(corpus.dev.size());
    for (const Example& ex : corpus.dev) golds.push_back(ex.label);
    const std::vector<size_t> preds =
        predict_labels(p, corpus.dev, transform);
    return micro_f1_excl(preds, golds, corpus.vocab.no_relation_id);
  };

  EncoderParams best = params.clone();
  double best_f1 = dev_f1(params);
  size_t best_epoch = 0;
  if (log) log->epochs.push_back({0, 0.0, best_f1});

  std::vector<size_t> order(corpus.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::vector<Tensor> trainable = params.parameters();

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    size_t step = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t stop = std::min(start + config.batch_size, order.size());
      Graph g;
      std::vector<Tensor> losses;
      for (size_t i = start; i < stop; ++i) {
        const Example& ex = corpus.train[order[i]];
        EncodedExample enc =
            transform ? transform(ex) : encode_example(ex, config.use_types);
        BaseForward fwd = forward_relation_rep(g, params, enc);
        if (config.mode == BaseMode::label_smoothing) {
          const std::vector<size_t> labels = topk_labels_for(ex);
          losses.push_back(label_smoothing_loss(g, fwd.logits, ex.label,
                                                labels, config.gamma));
        } else {
          losses.push_back(g.cross_entropy(fwd.logits, ex.label));
        }
      }
      Tensor batch_loss = g.scale(g.add_n(losses), 1.0 / double(losses.size()));
      const double loss_value = batch_loss.scalar_value();
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("base training diverged at epoch " +
                              std::to_string(epoch) + " step " +
                              std::to_string(step));
      }
      loss_sum += loss_value * double(losses.size());
      g.backward(batch_loss);
      sgd_step(trainable, config.learning_rate);
      ++step;
    }
    const double f1 = dev_f1(params);
    if (log) {
      log->epochs.push_back({epoch, loss_sum / double(order.size()), f1});
    }
    if (f1 > best_f1) {
      best_f1 = f1;
      best = params.clone();
      best_epoch = epoch;
    }
  }
  if (log) log->best_epoch = best_epoch;
  return best;
}

// ---------------------------------------------------------------------------
// Top-k sets file

void write_topk_file(std::span<const TopKSet> sets, const LabelVocab& vocab,
                     const std::filesystem::path& path) {
  std::ostringstream os;
  for (const TopKSet& set : sets) {
    json j;
    j["id"] = set.example_id;
    std::vector<std::string> names;
    names.reserve(set.labels.size());
    for (size_t id : set.labels) names.push_back(vocab.name(id));
    j["labels"] = names;
    j["probs"] = set.probs;
    os << j.dump() << "\n";
  }
  atomic_write_file(path, os.str());
}

std::vector<TopKSet> read_topk_file(const LabelVocab& vocab,
                                    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TopKSet> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where =
        path.filename().string() + " line " + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(where + ": invalid JSON");
    for (const char* field : {"id", "labels", "probs"}) {
      if (!j.contains(field)) {
        throw ParseError(where + ": missing field \"" + field + "\"");
      }
    }
    TopKSet set;
    set.example_id = j["id"].get<std::string>();
    for (const auto& name : j["labels"]) {
      set.labels.push_back(vocab.id_of(name.get<std::string>()));
    }
    set.probs = j["probs"].get<std::vector<double>>();
    if (set.probs.size() != set.labels.size()) {
      throw ParseError(where + ": labels and probs differ in length");
    }
    out.push_back(std::move(set));
  }
  return out;
}

TopKMap topk_by_id(std::span<const TopKSet> sets) {
  TopKMap map;
  for (const TopKSet& set : sets) map[set.example_id] = set;
  return map;
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint encoder_to_checkpoint(const EncoderParams& params,
                                 const LabelVocab& vocab) {
  Checkpoint ckpt;
  ckpt.kind = "base";
  ckpt.meta["dim"] = params.bb.dim();
  ckpt.meta["n_labels"] = params.n_labels();
  ckpt.meta["use_types"] = params.bb.use_types;
  ckpt.meta["token_vocab"] = params.bb.tvocab.tokens;
  ckpt.meta["label_names"] = vocab.names;
  ckpt.tensors["embeddings"] = params.bb.embeddings;
  ckpt.tensors["w_rel"] = params.bb.w_rel;
  ckpt.tensors["b_rel"] = params.bb.b_rel;
  ckpt.tensors["w_cls"] = params.w_cls;
  ckpt.tensors["b_cls"] = params.b_cls;
  return ckpt;
}

EncoderParams encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "base") {
    throw ParseError("expected a base checkpoint, got kind \"" + ckpt.kind +
                     "\"");
  }
  EncoderParams p;
  p.bb.tvocab.tokens =
      ckpt.meta.at("token_vocab").get<std::vector<std::string>>();
  if (!std::is_sorted(p.bb.tvocab.tokens.begin(), p.bb.tvocab.tokens.end())) {
    throw ParseError("checkpoint token vocabulary is not sorted");
  }
  p.bb.tvocab.unk_id = p.bb.tvocab.id_of("<unk>");
  p.bb.use_types = ckpt.meta.at("use_types").get<bool>();
  p.bb.embeddings = ckpt.tensor("embeddings");
  p.bb.w_rel = ckpt.tensor("w_rel");
  p.bb.b_rel = ckpt.tensor("b_rel");
  p.w_cls = ckpt.tensor("w_cls");
  p.b_cls = ckpt.tensor("b_cls");
  return p;
}

}  // namespace klg
