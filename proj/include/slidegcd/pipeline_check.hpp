#pragma once

// Finite-difference check of the whole collaborative loss on a small seeded
// instance: 4 live slides plus 12 buffered nodes, 4 classes.

#include <random>
#include <vector>

#include "slidegcd/gradcheck.hpp"
#include "slidegcd/trainer.hpp"

namespace slidegcd {

struct PipelineCheckSetup {
  std::size_t live = 4;
  std::size_t buffered = 12;
  std::size_t classes = 4;
  std::size_t d_p = 6;
  std::size_t d_s = 5;
  std::size_t d_h = 4;
  std::size_t k = 3;
  double eps = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

inline GradCheckReport pipeline_grad_check(const PipelineCheckSetup& s) {
  TrainConfig cfg;
  cfg.d_p = s.d_p;
  cfg.d_s = s.d_s;
  cfg.d_h = s.d_h;
  cfg.classes = s.classes;
  cfg.k = s.k;
  cfg.batch_size = s.live;
  cfg.buffer_capacity = s.live + s.buffered;
  cfg.seed = s.seed;
  Model m = Model::init(cfg);

  std::mt19937_64 rng(s.seed ^ 0x5eedu);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SlideBag> bags;
  for (std::size_t i = 0; i < s.live + s.buffered; ++i) {
    Matrix x(3 + i % 4, s.d_p);
    for (auto& v : x.values()) v = normal(rng);
    bags.push_back({"toy" + std::to_string(i), std::move(x), static_cast<int>(i % s.classes)});
  }
  std::vector<const SlideBag*> old, batch;
  for (std::size_t i = 0; i < s.buffered; ++i) old.push_back(&bags[s.live + i]);
  for (std::size_t i = 0; i < s.live; ++i) batch.push_back(&bags[i]);

  // Buffer: 12 stale embeddings, then the batch at the head.
  {
    Tape t;
    BoundBackbone bb = bind_frozen(t, m.backbone);
    push_batch_embeddings(m.buffer, embed_batch(t, bb, old).data(), old);
    push_batch_embeddings(m.buffer, embed_batch(t, bb, batch).data(), batch);
  }
  // kNN selection is piecewise constant and the KD teacher is gradient-
  // stopped, so both are held at their unperturbed values.
  Matrix propagation, teacher;
  {
    Tape t;
    CollaborativeForward f = collaborative_forward(t, m, batch, m.buffer, false);
    propagation = f.propagation;
    teacher = f.mil_logits;
  }

  std::vector<Parameter*> params = m.backbone.trainable();
  for (auto* p : m.graph_parameters()) params.push_back(p);
  return grad_check(
      [&](Tape& t) { return collaborative_forward(t, m, batch, m.buffer, false, &propagation, &teacher).loss.total; },
      params, s.eps, s.tol);
}

}  // namespace slidegcd
