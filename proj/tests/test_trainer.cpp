#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "slidegcd/dataset.hpp"
#include "slidegcd/trainer.hpp"

namespace slidegcd {
namespace {

SyntheticSpec small_spec(std::size_t n = 60, std::size_t classes = 3, std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.num_slides = n;
  s.classes = classes;
  s.instances_min = 6;
  s.instances_max = 12;
  s.feature_dim = 8;
  s.witness_rate = 0.5;
  s.prototype_separation = 6.0;
  s.seed = seed;
  return s;
}

TrainConfig small_config(std::size_t classes = 3) {
  TrainConfig c;
  c.d_p = 8;
  c.d_s = 8;
  c.d_h = 4;
  c.classes = classes;
  c.batch_size = 6;
  c.buffer_capacity = 24;
  c.k = 4;
  c.warmup_epochs = 2;
  c.epochs = 2;
  c.formal_lr = 1e-3;
  return c;
}

std::vector<const SlideBag*> pointers(const std::vector<SlideBag>& bags, std::size_t begin, std::size_t end) {
  std::vector<const SlideBag*> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(&bags[i]);
  return out;
}

std::vector<Matrix> snapshot(const std::vector<const Parameter*>& ps) {
  std::vector<Matrix> out;
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

double dataset_ce(const Model& m, std::span<const SlideBag> bags) {
  Matrix probs = predict_mil(m, bags);
  double s = 0.0;
  for (std::size_t i = 0; i < bags.size(); ++i) s -= std::log(probs(i, static_cast<std::size_t>(bags[i].label)));
  return s / static_cast<double>(bags.size());
}

TEST(Warmup, LeavesGraphBranchBitIdentical) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  Model m = Model::init(cfg);
  const Model& cm = m;
  auto gcn_before = snapshot(cm.gcn.all());
  auto agg_before = snapshot(cm.agg.all());
  auto backbone_before = snapshot(cm.backbone.all());
  Adam opt(m.backbone.trainable(), cfg.warmup_lr);
  std::mt19937_64 rng(1);
  warmup_epoch(m, data.bags, opt, rng);
  EXPECT_EQ(snapshot(cm.gcn.all()), gcn_before);
  EXPECT_EQ(snapshot(cm.agg.all()), agg_before);
  EXPECT_NE(snapshot(cm.backbone.all()), backbone_before);
  EXPECT_TRUE(m.buffer.empty());
}

TEST(Warmup, CrossEntropyDecreasesOnSeparableToySet) {
  SyntheticSpec spec = small_spec(40, 2, 3);
  spec.witness_rate = 1.0;
  SyntheticData data = generate_synthetic(spec);
  TrainConfig cfg = small_config(2);
  Model m = Model::init(cfg);
  Adam opt(m.backbone.trainable(), cfg.warmup_lr);
  std::mt19937_64 rng(2);
  double prev = dataset_ce(m, data.bags);
  for (int epoch = 0; epoch < 5; ++epoch) {
    warmup_epoch(m, data.bags, opt, rng);
    const double now = dataset_ce(m, data.bags);
    EXPECT_LT(now, prev) << "epoch " << epoch;
    prev = now;
  }
}

TEST(Warmup, ZeroEpochsStartsFormalPhaseAtEpochZero) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.warmup_epochs = 0;
  cfg.epochs = 1;
  std::vector<StepRecord> records;
  TrainHooks hooks;
  hooks.log = [&](const StepRecord& r) { records.push_back(r); };
  train_model(cfg, data.bags, Arm::SlideGcd, hooks);
  ASSERT_FALSE(records.empty());
  EXPECT_EQ(records.front().phase, "formal");
  EXPECT_EQ(records.front().epoch, 0u);
}

TEST(Training, PhasesAreLoggedInOrder) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  std::vector<StepRecord> records;
  TrainHooks hooks;
  hooks.log = [&](const StepRecord& r) { records.push_back(r); };
  train_model(cfg, data.bags, Arm::SlideGcd, hooks);
  const std::size_t per_epoch = (data.bags.size() + cfg.batch_size - 1) / cfg.batch_size;
  ASSERT_EQ(records.size(), per_epoch * (cfg.warmup_epochs + cfg.epochs));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool warm = i < per_epoch * cfg.warmup_epochs;
    EXPECT_EQ(records[i].phase, warm ? "warmup" : "formal");
    EXPECT_EQ(records[i].epoch, i / per_epoch);
    if (warm) {
      EXPECT_EQ(records[i].loss.ce_graph, 0.0);
    }
  }
  nlohmann::json j = to_json(records.back());
  for (const char* key : {"epoch", "step", "ce_mil", "ce_graph", "kd", "total"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST(CollaborativeStep, DeterministicLossStreams) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  auto run = [&] {
    std::vector<LossBreakdown> out;
    TrainHooks hooks;
    hooks.log = [&](const StepRecord& r) { out.push_back(r.loss); };
    train_model(cfg, data.bags, Arm::SlideGcd, hooks);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(CollaborativeStep, BufferGrowsByBatchUpToCapacity) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.buffer_capacity = 16;
  Model m = Model::init(cfg);
  std::vector<Parameter*> params = m.backbone.trainable();
  for (auto* p : m.graph_parameters()) params.push_back(p);
  Adam opt(params, cfg.formal_lr);
  std::size_t prev = 0;
  for (std::size_t start = 0; start + 6 <= 42; start += 6) {
    auto batch = pointers(data.bags, start, start + 6);
    StepDiagnostics d;
    collaborative_step(m, batch, opt, &d);
    EXPECT_EQ(m.buffer.size(), std::min<std::size_t>(16, prev + 6));
    EXPECT_EQ(d.nodes, m.buffer.size());
    EXPECT_EQ(d.buffer_rows_grad_max, 0.0);
    EXPECT_TRUE(d.buffer_rows_detached);
    EXPECT_GT(d.live_rows_grad_max, 0.0);
    prev = m.buffer.size();
  }
}

TEST(CollaborativeStep, BatchLargerThanBufferIsRejected) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.buffer_capacity = 6;
  Model m = Model::init(cfg);
  Adam opt(m.backbone.trainable(), 1e-3);
  auto batch = pointers(data.bags, 0, 7);
  EXPECT_THROW(collaborative_step(m, batch, opt), Error);
}

TEST(CollaborativeStep, ZeroOperatorMatchesDirectForward) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.kd_weight = 0.0;
  Model m = Model::init(cfg);
  // Preload the buffer so the node set includes detached rows.
  push_batch_embeddings(m.buffer, oracle::pattern(6, 8, 0.4, 0.5), pointers(data.bags, 30, 36));
  auto batch = pointers(data.bags, 0, 5);
  Tape t;
  const Matrix zero(11, 11);
  CollaborativeForward f = collaborative_forward(t, m, batch, m.buffer, true, &zero);
  ASSERT_EQ(f.nodes.x0.rows(), 11u);

  const Model& cm = m;
  oracle::GcnWeights w{cm.gcn.theta1.value, cm.gcn.theta2.value, cm.gcn.w0.value,     cm.gcn.w1.value,
                       cm.gcn.mlp1_w.value, cm.gcn.mlp1_b.value, cm.gcn.mlp2_w.value, cm.gcn.mlp2_b.value};
  Matrix probs = oracle::softmax(oracle::graph_logits(f.nodes.x0.data(), zero, w, cfg.leaky_slope, 5));
  double ce = 0.0;
  for (std::size_t i = 0; i < 5; ++i) ce -= std::log(probs(i, static_cast<std::size_t>(batch[i]->label)) + 1e-12);
  ce /= 5.0;
  LossBreakdown b = f.loss.breakdown();
  EXPECT_NEAR(b.ce_graph, ce, 1e-12);
  EXPECT_EQ(b.total, b.ce_mil + b.ce_graph);
}

TEST(CollaborativeStep, TiedAggModeBuildsGraph) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.agg_mode = AggMode::TiedTheta1;
  Model m = Model::init(cfg);
  AggParams eff = m.effective_agg();
  EXPECT_EQ(eff.w1.value, m.gcn.theta1.value.block(0, cfg.d_s, 0, cfg.d_h));
  EXPECT_EQ(eff.w2.value, Matrix::identity(cfg.d_h));
  Adam opt(m.backbone.trainable(), 1e-3);
  EXPECT_NO_THROW(collaborative_step(m, pointers(data.bags, 0, 6), opt));
}

TEST(Inference, PureAndRepeatable) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  Model m = train_model(cfg, {data.bags.data(), 48}, Arm::SlideGcd);
  const Model& cm = m;
  const NodeBuffer buffer_before = m.buffer;
  const auto params_before = snapshot(cm.gcn.all());
  const auto backbone_before = snapshot(cm.backbone.all());
  Prediction a = infer_slide(m, data.bags[50]);
  Prediction b = infer_slide(m, data.bags[50]);
  EXPECT_EQ(a.predicted, b.predicted);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(m.buffer, buffer_before);
  EXPECT_EQ(snapshot(cm.gcn.all()), params_before);
  EXPECT_EQ(snapshot(cm.backbone.all()), backbone_before);
}

TEST(Inference, MinimalBufferWithIdenticalNode) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  cfg.k = 1;
  cfg.buffer_capacity = 2;
  cfg.batch_size = 1;
  Model m = Model::init(cfg);
  const SlideBag& q = data.bags[0];
  Tape t;
  Value e = embed_slide(t, bind_frozen(t, m.backbone), q.instances);
  const SlideBag* one[] = {&q};
  push_batch_embeddings(m.buffer, e.data(), one);

  Matrix nodes(2, cfg.d_s);
  std::copy(e.data().values().begin(), e.data().values().end(), nodes.row(0).begin());
  std::copy(e.data().values().begin(), e.data().values().end(), nodes.row(1).begin());
  EXPECT_EQ(build_slide_graph(m, nodes, 1).edges, (std::vector<std::vector<std::size_t>>{{0, 1}}));

  Prediction p = infer_slide(m, q);
  double s = 0.0;
  for (double v : p.probs) {
    EXPECT_TRUE(std::isfinite(v));
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Inference, EmptyBufferIsAnError) {
  SyntheticData data = generate_synthetic(small_spec());
  Model m = Model::init(small_config());
  try {
    infer_slide(m, data.bags[0]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBuffer);
  }
}

TEST(Inference, BatchAndSingleMostlyAgree) {
  SyntheticData data = generate_synthetic(small_spec(120, 4, 5));
  TrainConfig cfg = small_config(4);
  cfg.d_s = 32;
  cfg.d_h = 16;
  cfg.buffer_capacity = 64;
  cfg.k = 6;
  cfg.warmup_epochs = 5;
  cfg.epochs = 10;
  std::span<const SlideBag> all(data.bags);
  Model m = train_model(cfg, all.first(90), Arm::SlideGcd);
  auto queries = pointers(data.bags, 90, 120);
  std::vector<Prediction> batched = infer_batch(m, queries);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) agree += batched[i].predicted == infer_slide(m, *queries[i]).predicted;
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(queries.size()), 0.95);
}

TEST(Training, GradientIsolationOnEveryStep) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  std::size_t steps = 0;
  TrainHooks hooks;
  hooks.on_collaborative_step = [&](const StepDiagnostics& d) {
    ++steps;
    EXPECT_EQ(d.buffer_rows_grad_max, 0.0);
    EXPECT_TRUE(d.buffer_rows_detached);
  };
  train_model(cfg, data.bags, Arm::SlideGcd, hooks);
  EXPECT_EQ(steps, cfg.epochs * 10);
}

TEST(Training, MilArmNeverTouchesGraphBranch) {
  SyntheticData data = generate_synthetic(small_spec());
  TrainConfig cfg = small_config();
  Model fresh = Model::init(cfg);
  Model trained = train_model(cfg, data.bags, Arm::MilOnly);
  EXPECT_EQ(snapshot(std::as_const(trained).gcn.all()), snapshot(std::as_const(fresh).gcn.all()));
  EXPECT_TRUE(trained.buffer.empty());
}

TEST(Training, LossFallsOverFirstFormalEpoch) {
  SyntheticSpec spec;
  spec.seed = 0;
  SyntheticData data = generate_synthetic(spec);
  TrainConfig cfg;
  cfg.d_s = 32;
  cfg.d_h = 16;
  cfg.batch_size = 8;
  cfg.warmup_epochs = 0;
  cfg.epochs = 1;
  cfg.formal_lr = 1e-3;
  std::vector<double> totals;
  TrainHooks hooks;
  hooks.log = [&](const StepRecord& r) { totals.push_back(r.loss.total); };
  train_model(cfg, data.bags, Arm::SlideGcd, hooks);
  ASSERT_GE(totals.size(), 20u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += totals[i];
    last += totals[totals.size() - 1 - i];
  }
  EXPECT_LT(last, first);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter p("p", oracle::pattern(3, 3, 0.2));
  const Matrix before = p.value;
  Adam opt({&p}, 0.1);
  opt.zero_grad();
  opt.step();
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Matrix{{1.0, -2.0}});
  Adam opt({&p}, 0.01);
  p.grad = Matrix{{0.5, -3.0}};
  opt.step();
  // m_hat / sqrt(v_hat) = sign(g) on the first step.
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value(0, 1), -2.0 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
}

TEST(Metrics, PerfectPredictions) {
  Matrix s{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}};
  const int y[] = {0, 1, 2, 0};
  MetricsReport r = evaluate_metrics(s, y);
  EXPECT_EQ(r.acc, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  ASSERT_TRUE(r.macro_auc);
  EXPECT_EQ(*r.macro_auc, 1.0);
}

TEST(Metrics, HandRocExample) {
  Matrix s{{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.1, 0.9}};
  const int y[] = {0, 0, 1, 1};
  MetricsReport r = evaluate_metrics(s, y);
  EXPECT_EQ(r.per_class_auc[0], 1.0);
  EXPECT_EQ(r.per_class_auc[1], 1.0);
}

TEST(Metrics, AllTiedScoresGiveHalf) {
  Matrix s(6, 2, 0.5);
  const int y[] = {0, 1, 0, 1, 1, 0};
  EXPECT_EQ(*evaluate_metrics(s, y).macro_auc, 0.5);
}

TEST(Metrics, AucMatchesPairCountingOracle) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logits(30, 4);
    // Coarse scores so ties occur.
    for (auto& v : logits.values()) v = std::round(std::normal_distribution<double>(0, 1)(rng) * 2.0);
    Matrix s = oracle::softmax(logits);
    std::vector<int> y(30);
    for (auto& v : y) v = label(rng);
    MetricsReport r = evaluate_metrics(s, y);
    for (int k = 0; k < 4; ++k) {
      std::vector<double> col(30);
      for (std::size_t i = 0; i < 30; ++i) col[i] = s(i, static_cast<std::size_t>(k));
      if (!r.per_class_auc[k]) continue;
      EXPECT_NEAR(*r.per_class_auc[k], oracle::pair_auc(col, y, k), 1e-12);
    }
  }
}

TEST(Metrics, MacroF1AndEmptyClass) {
  // Class 2 is neither predicted nor present.
  Matrix s{{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.6, 0.3, 0.1}, {0.3, 0.6, 0.1}};
  const int y[] = {0, 1, 1, 1};
  MetricsReport r = evaluate_metrics(s, y);
  EXPECT_DOUBLE_EQ(r.acc, 0.75);
  // class 0: tp 1 fp 1 fn 0 -> 2/3; class 1: tp 2 fp 0 fn 1 -> 4/5; class 2 -> 0
  EXPECT_NEAR(r.macro_f1, (2.0 / 3.0 + 0.8 + 0.0) / 3.0, 1e-15);
  EXPECT_EQ(r.f1_empty_classes, std::vector<int>{2});
  EXPECT_FALSE(r.per_class_auc[2]);
}

TEST(Metrics, SingleClassHasNoAuc) {
  Matrix s{{0.7, 0.3}, {0.4, 0.6}};
  const int y[] = {1, 1};
  MetricsReport r = evaluate_metrics(s, y);
  EXPECT_FALSE(r.macro_auc);
  EXPECT_TRUE(to_json(r)["macro_auc"].is_null());
}

TEST(Metrics, RejectsNonDistributionRows) {
  const int y[] = {0};
  EXPECT_THROW(evaluate_metrics(Matrix{{0.7, 0.7}}, y), Error);
}

TEST(Folds, PartitionAndStratification) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t classes = 2 + rng() % 4, folds = 2 + rng() % 5;
    std::vector<int> labels;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t i = 0; i < folds + rng() % 20; ++i) labels.push_back(static_cast<int>(c));
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto fold_of = stratified_folds(labels, classes, folds, trial);
    ASSERT_EQ(fold_of.size(), labels.size());
    std::vector<std::map<int, double>> count(folds);
    std::map<int, double> total;
    std::vector<double> sizes(folds, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ASSERT_LT(fold_of[i], folds);
      count[fold_of[i]][labels[i]] += 1;
      total[labels[i]] += 1;
      sizes[fold_of[i]] += 1;
    }
    for (std::size_t f = 0; f < folds; ++f)
      for (const auto& [c, n] : total) EXPECT_LE(std::abs(count[f][c] - n / static_cast<double>(folds)), 1.0);
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1.0);
  }
}

TEST(Folds, InsufficientSamples) {
  const int labels[] = {0, 0, 0, 1, 1};
  try {
    stratified_folds(labels, 2, 3, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientClassSamples);
  }
}

TEST(Summary, SampleStandardDeviation) {
  const double v[] = {1.0, 2.0, 3.0, 4.0};
  Summary s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
}

TEST(CrossValidation, ReportsBothArmsAndDelta) {
  SyntheticData data = generate_synthetic(small_spec(45, 3, 11));
  TrainConfig cfg = small_config();
  cfg.folds = 3;
  cfg.epochs = 1;
  cfg.warmup_epochs = 1;
  const Arm arms[] = {Arm::MilOnly, Arm::SlideGcd};
  CvReport r = run_cv(data.bags, cfg, arms);
  ASSERT_EQ(r.arms.size(), 2u);
  for (const auto& a : r.arms) {
    EXPECT_EQ(a.folds.size(), 3u);
    EXPECT_GE(a.acc.mean, 0.0);
    EXPECT_LE(a.acc.mean, 1.0);
    EXPECT_GE(a.acc.std, 0.0);
  }
  nlohmann::json j = to_json(r);
  EXPECT_TRUE(j["arms"].contains("mil_only_baseline"));
  EXPECT_TRUE(j["arms"].contains("slidegcd"));
  EXPECT_NEAR(j["improvement"]["acc"].get<double>(), r.arms[1].acc.mean - r.arms[0].acc.mean, 1e-15);
  EXPECT_EQ(to_json(run_cv(data.bags, cfg, arms)).dump(), j.dump());
}

}  // namespace
}  // namespace slidegcd
