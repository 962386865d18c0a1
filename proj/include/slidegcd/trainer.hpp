#pragma once

// Warmup, collaborative training, frozen-buffer inference and
// cross-validated evaluation of the MIL baseline and the graph branch.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "slidegcd/config.hpp"
#include "slidegcd/hgcn.hpp"
#include "slidegcd/losses.hpp"
#include "slidegcd/metrics.hpp"
#include "slidegcd/mil_backbone.hpp"
#include "slidegcd/node_buffer.hpp"
#include "slidegcd/optim.hpp"
#include "slidegcd/slide_graph.hpp"

namespace slidegcd {

enum class Arm { MilOnly, SlideGcd };

inline std::string arm_name(Arm a) { return a == Arm::MilOnly ? "mil_only_baseline" : "slidegcd"; }

struct Model {
  TrainConfig cfg;
  BackboneParams backbone;
  AggParams agg;
  GcnParams gcn;
  NodeBuffer buffer;

  // Draws backbone, AGG and GCN weights from rng in that order.
  template <class Rng>
  static Model init(const TrainConfig& cfg, Rng& rng) {
    validate(cfg);
    Model m;
    m.cfg = cfg;
    m.backbone = BackboneParams::init(cfg.backbone, cfg.d_p, cfg.d_s, cfg.attention_dim(), cfg.classes, rng);
    m.agg = AggParams::init(cfg.d_s, cfg.d_h, rng);
    m.gcn = GcnParams::init(cfg.d_s, cfg.buffer_capacity, cfg.mlp_dim(), cfg.classes, rng);
    m.buffer = NodeBuffer(cfg.buffer_capacity, cfg.d_s);
    return m;
  }

  static Model init(const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    return init(cfg, rng);
  }

  // AGG weights actually used for graph construction.
  AggParams effective_agg() const {
    if (cfg.agg_mode == AggMode::FixedRandom) return agg;
    AggParams tied;
    tied.w1 = Parameter("agg.w1", gcn.theta1.value.block(0, cfg.d_s, 0, cfg.d_h));
    tied.b1 = Parameter("agg.b1", Matrix(1, cfg.d_h));
    tied.w2 = Parameter("agg.w2", Matrix::identity(cfg.d_h));
    tied.b2 = Parameter("agg.b2", Matrix(1, cfg.d_h));
    return tied;
  }

  std::vector<Parameter*> graph_parameters() { return gcn.all(); }
};

struct StepDiagnostics {
  std::size_t nodes = 0;
  std::size_t live_rows = 0;
  // Largest |grad| that reached the detached buffer rows of X0 (must stay 0).
  double buffer_rows_grad_max = 0.0;
  bool buffer_rows_detached = true;
  double live_rows_grad_max = 0.0;
  bool k_clamped = false;
};

struct StepRecord {
  std::string phase;  // "warmup" or "formal"
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
};

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j = {{"phase", r.phase}, {"epoch", r.epoch}, {"step", r.step}};
  j.update(to_json(r.loss));
  return j;
}

using StepLogger = std::function<void(const StepRecord&)>;

// ---------------------------------------------------------------------------
// Graph construction and the graph branch

inline Hypergraph build_slide_graph(const Model& m, const Matrix& nodes, std::size_t centers) {
  return knn_hyperedges(agg_project(nodes, m.effective_agg()), m.cfg.k, 0, centers);
}

// Graph branch for rows [0, batch_rows) given a fixed propagation operator.
inline GraphPrediction graph_branch(Tape& t, const BoundGcn& g, const Value& x0, const Matrix& propagation,
                                    std::size_t batch_rows, const TrainConfig& cfg) {
  Value p = t.constant(propagation);
  HopStack hops = run_hops(x0, p, g, cfg.leaky_slope);
  Value hprime = centering_attention(hops.h, g, cfg.centering);
  return cls_graph(hprime, g, 0, batch_rows);
}

struct CollaborativeForward {
  LossTerms loss;
  AssembledNodes nodes;
  Value live;
  Hypergraph graph;
  Matrix propagation;
  Matrix mil_logits;
};

// Full forward of one collaborative step. With `push` the detached batch
// embeddings enter `buffer` first; otherwise the buffer must already hold
// the batch at its head. When `fixed_propagation` is given the kNN step is
// skipped and that operator is used instead; `fixed_teacher` likewise
// replaces the MIL logits on the KD side.
inline CollaborativeForward collaborative_forward(Tape& t, Model& m, std::span<const SlideBag* const> batch,
                                                  NodeBuffer& buffer, bool push,
                                                  const Matrix* fixed_propagation = nullptr,
                                                  const Matrix* fixed_teacher = nullptr) {
  CollaborativeForward f;
  BoundBackbone bb = bind(t, m.backbone);
  BoundGcn g = bind(t, m.gcn);
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto* b : batch) {
    ids.push_back(b->id);
    labels.push_back(b->label);
  }
  f.live = embed_batch(t, bb, batch);
  if (push) buffer.push_batch(f.live.data(), ids, labels);
  f.nodes = assemble_node_matrix(t, buffer, f.live, ids);
  if (fixed_propagation != nullptr) {
    f.propagation = *fixed_propagation;
  } else {
    f.graph = build_slide_graph(m, f.nodes.x0.data(), batch.size());
    f.propagation = build_propagation_operator(f.graph);
  }
  GraphPrediction graph = graph_branch(t, g, f.nodes.x0, f.propagation, batch.size(), m.cfg);
  Value mil_logits = cls_mil(bb, f.live);
  f.mil_logits = mil_logits.data();
  Value teacher = fixed_teacher != nullptr ? t.constant(*fixed_teacher) : mil_logits;
  f.loss = total_loss(softmax_rows(mil_logits), teacher, graph.probs, graph.logits, labels, m.cfg.kd_weight,
                      m.cfg.t_hat);
  return f;
}

inline void push_batch_embeddings(NodeBuffer& buffer, const Matrix& embeddings,
                                  std::span<const SlideBag* const> batch) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto* b : batch) {
    ids.push_back(b->id);
    labels.push_back(b->label);
  }
  buffer.push_batch(embeddings, ids, labels);
}

// Embed -> push -> assemble -> AGG/kNN -> HGC x2 -> attention -> heads ->
// loss -> backward -> Adam.
inline LossBreakdown collaborative_step(Model& m, std::span<const SlideBag* const> batch, Adam& opt,
                                        StepDiagnostics* diag = nullptr) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  if (batch.size() > m.cfg.buffer_capacity) throw Error(ErrorCode::CapacityExceeded, "batch larger than buffer");

  Tape t;
  CollaborativeForward f = collaborative_forward(t, m, batch, m.buffer, true);
  opt.zero_grad();
  t.backward(f.loss.total);
  opt.step();

  if (diag != nullptr) {
    diag->nodes = f.nodes.x0.rows();
    diag->live_rows = batch.size();
    diag->k_clamped = f.graph.k_clamped;
    diag->live_rows_grad_max = f.live.grad().max_abs();
    if (f.nodes.buffer_rows.valid()) {
      diag->buffer_rows_grad_max = f.nodes.buffer_rows.grad().max_abs();
      diag->buffer_rows_detached = !f.nodes.buffer_rows.requires_grad() &&
                                   t.parents(f.nodes.buffer_rows.id()).empty();
    }
  }
  return f.loss.breakdown();
}

// CE(MIL) only; updates whatever parameters `opt` owns.
inline LossBreakdown mil_step(Model& m, std::span<const SlideBag* const> batch, Adam& opt) {
  Tape t;
  BoundBackbone bb = bind(t, m.backbone);
  std::vector<int> labels;
  for (const auto* b : batch) labels.push_back(b->label);
  Value ce = cross_entropy(softmax_rows(cls_mil(bb, embed_batch(t, bb, batch))), labels);
  opt.zero_grad();
  t.backward(ce);
  opt.step();
  const double v = ce.data()(0, 0);
  return {v, 0.0, 0.0, v, m.cfg.kd_weight, m.cfg.t_hat};
}

template <class Rng>
std::vector<std::vector<const SlideBag*>> make_batches(std::span<const SlideBag> data, std::size_t batch_size,
                                                       Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<const SlideBag*>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const SlideBag*> b;
    for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(&data[order[j]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

// One warmup pass: backbone + Cls_MIL only. Returns the mean batch loss.
template <class Rng>
double warmup_epoch(Model& m, std::span<const SlideBag> data, Adam& opt, Rng& rng, std::size_t epoch = 0,
                    const StepLogger& log = {}) {
  double sum = 0.0;
  std::size_t step = 0;
  auto batches = make_batches(data, m.cfg.batch_size, rng);
  for (const auto& b : batches) {
    LossBreakdown l = mil_step(m, b, opt);
    sum += l.total;
    if (log) log({"warmup", epoch, step, l});
    ++step;
  }
  return sum / static_cast<double>(batches.size());
}

// Embeds the training set with frozen weights and pushes it into the buffer.
template <class Rng>
void seed_buffer(Model& m, std::span<const SlideBag> data, Rng& rng) {
  for (const auto& b : make_batches(data, m.cfg.batch_size, rng)) {
    Tape t;
    BoundBackbone frozen = bind_frozen(t, m.backbone);
    push_batch_embeddings(m.buffer, embed_batch(t, frozen, b).data(), b);
  }
}

struct TrainHooks {
  StepLogger log;
  std::function<void(const StepDiagnostics&)> on_collaborative_step;
};

inline Model train_model(const TrainConfig& cfg, std::span<const SlideBag> train, Arm arm,
                         const TrainHooks& hooks = {}) {
  validate(cfg);
  if (train.empty()) throw Error(ErrorCode::EmptyInput, "empty training set");
  for (const auto& b : train) validate_bag(b, cfg.d_p, static_cast<int>(cfg.classes));

  std::mt19937_64 rng(cfg.seed);
  Model m = Model::init(cfg, rng);

  std::size_t epoch = 0;
  if (cfg.warmup_epochs > 0) {
    Adam warm(m.backbone.trainable(), cfg.warmup_lr);
    for (; epoch < cfg.warmup_epochs; ++epoch) warmup_epoch(m, train, warm, rng, epoch, hooks.log);
  }
  if (arm == Arm::SlideGcd && cfg.seed_buffer_from_warmup) seed_buffer(m, train, rng);

  std::vector<Parameter*> params = m.backbone.trainable();
  if (arm == Arm::SlideGcd) {
    for (auto* p : m.graph_parameters()) params.push_back(p);
  }
  Adam opt(params, cfg.formal_lr);
  for (std::size_t e = 0; e < cfg.epochs; ++e, ++epoch) {
    std::size_t step = 0;
    for (const auto& b : make_batches(train, cfg.batch_size, rng)) {
      LossBreakdown l;
      if (arm == Arm::SlideGcd) {
        StepDiagnostics d;
        l = collaborative_step(m, b, opt, &d);
        if (hooks.on_collaborative_step) hooks.on_collaborative_step(d);
      } else {
        l = mil_step(m, b, opt);
      }
      if (hooks.log) hooks.log({"formal", epoch, step, l});
      ++step;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  int predicted = 0;
  std::vector<double> probs;
};

// Frozen-state graph inference. The queries form the head of the node set,
// followed by the newest buffer slots that fit in the attention capacity;
// each query is the center of one kNN hyperedge. Queries go through in chunks
// of the training batch size so the node set matches the training layout.
// The buffer is not modified.
inline std::vector<Prediction> infer_batch(const Model& m, std::span<const SlideBag* const> queries) {
  if (m.buffer.empty()) throw Error(ErrorCode::EmptyBuffer, "inference needs a trained buffer");
  const std::size_t cap = m.cfg.buffer_capacity;
  if (cap < 2) throw Error(ErrorCode::BufferOverCapacity, "attention capacity < 2 leaves no room for buffer nodes");
  std::vector<Prediction> out;
  const std::size_t chunk = std::clamp<std::size_t>(m.cfg.batch_size, 1, cap - 1);
  for (std::size_t start = 0; start < queries.size(); start += chunk) {
    auto part = queries.subspan(start, std::min(chunk, queries.size() - start));
    Tape t;
    BoundBackbone bb = bind_frozen(t, m.backbone);
    BoundGcn g = bind_frozen(t, m.gcn);
    Value q = embed_batch(t, bb, part);
    const std::size_t from_buffer = std::min(m.buffer.size(), cap - part.size());
    Value nodes = from_buffer > 0 ? concat_rows({q, t.constant(m.buffer.embeddings(0, from_buffer))}) : q;
    Hypergraph graph = build_slide_graph(m, nodes.data(), part.size());
    GraphPrediction pred = graph_branch(t, g, nodes, build_propagation_operator(graph), part.size(), m.cfg);
    const Matrix& probs = pred.probs.data();
    for (std::size_t i = 0; i < part.size(); ++i) {
      auto row = probs.row(i);
      out.push_back({static_cast<int>(argmax(row)), {row.begin(), row.end()}});
    }
  }
  return out;
}

inline Prediction infer_slide(const Model& m, const SlideBag& bag) {
  const SlideBag* q[] = {&bag};
  return infer_batch(m, q).front();
}

inline Matrix predict_mil(const Model& m, std::span<const SlideBag> bags) {
  Matrix out(bags.size(), m.cfg.classes);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    Tape t;
    BoundBackbone bb = bind_frozen(t, m.backbone);
    Value p = softmax_rows(cls_mil(bb, embed_slide(t, bb, bags[i].instances)));
    std::copy(p.data().values().begin(), p.data().values().end(), out.row(i).begin());
  }
  return out;
}

inline Matrix predict_graph(const Model& m, std::span<const SlideBag> bags) {
  Matrix out(bags.size(), m.cfg.classes);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    Prediction p = infer_slide(m, bags[i]);
    std::copy(p.probs.begin(), p.probs.end(), out.row(i).begin());
  }
  return out;
}

inline Matrix predict(const Model& m, Arm arm, std::span<const SlideBag> bags) {
  return arm == Arm::MilOnly ? predict_mil(m, bags) : predict_graph(m, bags);
}

// ---------------------------------------------------------------------------
// Cross-validation

// Per-class seeded shuffle, then round-robin fold assignment continuing
// across classes so fold sizes stay within one of each other.
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t classes,
                                                 std::size_t folds, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw Error(ErrorCode::LabelOutOfRange, std::to_string(labels[i]));
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].size() < folds) {
      throw Error(ErrorCode::InsufficientClassSamples, "class " + std::to_string(c) + " has " +
                                                           std::to_string(by_class[c].size()) + " samples for " +
                                                           std::to_string(folds) + " folds");
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold_of(labels.size());
  std::size_t offset = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) fold_of[members[j]] = (offset + j) % folds;
    offset += members.size();
  }
  return fold_of;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ArmReport {
  Arm arm = Arm::SlideGcd;
  std::vector<MetricsReport> folds;
  Summary acc, macro_f1;
  std::optional<Summary> macro_auc;
};

struct CvReport {
  std::size_t folds = 0;
  std::vector<ArmReport> arms;

  const ArmReport* find(Arm a) const {
    for (const auto& r : arms)
      if (r.arm == a) return &r;
    return nullptr;
  }
};

inline ArmReport summarize_arm(Arm arm, std::vector<MetricsReport> folds) {
  ArmReport r;
  r.arm = arm;
  std::vector<double> acc, f1, auc;
  for (const auto& m : folds) {
    acc.push_back(m.acc);
    f1.push_back(m.macro_f1);
    if (m.macro_auc) auc.push_back(*m.macro_auc);
  }
  r.acc = summarize(acc);
  r.macro_f1 = summarize(f1);
  if (!auc.empty()) r.macro_auc = summarize(auc);
  r.folds = std::move(folds);
  return r;
}

inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return seed * 1000003ULL + 7919ULL * fold; }

inline CvReport run_cv(std::span<const SlideBag> data, const TrainConfig& cfg, std::span<const Arm> arms,
                       const TrainHooks& hooks = {}) {
  validate(cfg);
  std::vector<int> labels;
  for (const auto& b : data) labels.push_back(b.label);
  const auto fold_of = stratified_folds(labels, cfg.classes, cfg.folds, cfg.seed);

  std::vector<std::vector<MetricsReport>> per_arm(arms.size());
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<SlideBag> train, test;
    std::vector<int> test_labels;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (fold_of[i] == f) {
        test.push_back(data[i]);
        test_labels.push_back(data[i].label);
      } else {
        train.push_back(data[i]);
      }
    }
    TrainConfig fc = cfg;
    fc.seed = fold_seed(cfg.seed, f);
    for (std::size_t a = 0; a < arms.size(); ++a) {
      Model m = train_model(fc, train, arms[a], hooks);
      per_arm[a].push_back(evaluate_metrics(predict(m, arms[a], test), test_labels));
    }
  }
  CvReport report;
  report.folds = cfg.folds;
  for (std::size_t a = 0; a < arms.size(); ++a) report.arms.push_back(summarize_arm(arms[a], std::move(per_arm[a])));
  return report;
}

inline nlohmann::json to_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline nlohmann::json to_json(const CvReport& r) {
  nlohmann::json arms = nlohmann::json::object();
  for (const auto& a : r.arms) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& m : a.folds) folds.push_back(to_json(m));
    arms[arm_name(a.arm)] = {{"per_fold", folds},
                             {"acc", to_json(a.acc)},
                             {"macro_f1", to_json(a.macro_f1)},
                             {"macro_auc", a.macro_auc ? to_json(*a.macro_auc) : nlohmann::json(nullptr)}};
  }
  nlohmann::json j = {{"folds", r.folds}, {"arms", arms}};
  const ArmReport* base = r.find(Arm::MilOnly);
  const ArmReport* gcd = r.find(Arm::SlideGcd);
  if (base != nullptr && gcd != nullptr) {
    nlohmann::json delta = {{"acc", gcd->acc.mean - base->acc.mean},
                            {"macro_f1", gcd->macro_f1.mean - base->macro_f1.mean}};
    delta["macro_auc"] = (base->macro_auc && gcd->macro_auc)
                             ? nlohmann::json(gcd->macro_auc->mean - base->macro_auc->mean)
                             : nlohmann::json(nullptr);
    j["improvement"] = delta;
  }
  return j;
}

}  // namespace slidegcd
