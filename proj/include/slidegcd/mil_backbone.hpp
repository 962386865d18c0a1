#pragma once

// MIL backbone: bag of instance features -> one slide embedding, plus the
// MIL classifier head that produces the teacher logits.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "slidegcd/autodiff.hpp"

namespace slidegcd {

struct SlideBag {
  std::string id;
  Matrix instances;  // M x D_p
  int label = 0;
};

inline void validate_bag(const SlideBag& bag, std::size_t feature_dim, int num_classes) {
  if (bag.instances.rows() < 1) throw Error(ErrorCode::EmptyInput, "bag " + bag.id + " has no instances");
  if (bag.instances.cols() != feature_dim) {
    throw Error(ErrorCode::DimensionMismatch, "bag " + bag.id + " feature width " +
                                                  std::to_string(bag.instances.cols()) + " != " +
                                                  std::to_string(feature_dim));
  }
  if (!bag.instances.all_finite()) throw Error(ErrorCode::NonFiniteInput, "bag " + bag.id);
  if (bag.label < 0 || bag.label >= num_classes) {
    throw Error(ErrorCode::LabelOutOfRange, "bag " + bag.id + " label " + std::to_string(bag.label));
  }
}

enum class BackboneVariant { MeanPool, AttentionPool };

struct BackboneParams {
  BackboneVariant variant = BackboneVariant::MeanPool;
  Parameter proj_w;  // D_p x D_S
  Parameter proj_b;  // 1 x D_S
  Parameter att_v;   // D_S x D_a
  Parameter att_u;   // D_a x 1
  Parameter cls_w;   // D_S x C
  Parameter cls_b;   // 1 x C

  template <class Rng>
  static BackboneParams init(BackboneVariant variant, std::size_t d_p, std::size_t d_s, std::size_t d_a,
                             std::size_t classes, Rng& rng) {
    BackboneParams p;
    p.variant = variant;
    p.proj_w = Parameter("backbone.proj_w", Matrix::glorot(d_p, d_s, rng));
    p.proj_b = Parameter("backbone.proj_b", Matrix(1, d_s));
    p.att_v = Parameter("backbone.att_v", Matrix::glorot(d_s, d_a, rng));
    p.att_u = Parameter("backbone.att_u", Matrix::glorot(d_a, 1, rng));
    p.cls_w = Parameter("cls_mil.w", Matrix::glorot(d_s, classes, rng));
    p.cls_b = Parameter("cls_mil.b", Matrix(1, classes));
    return p;
  }

  std::size_t feature_dim() const { return proj_w.value.rows(); }
  std::size_t embed_dim() const { return proj_w.value.cols(); }
  std::size_t num_classes() const { return cls_w.value.cols(); }

  // Parameters that actually receive gradient for this variant.
  std::vector<Parameter*> trainable() {
    std::vector<Parameter*> out{&proj_w, &proj_b};
    if (variant == BackboneVariant::AttentionPool) {
      out.push_back(&att_v);
      out.push_back(&att_u);
    }
    out.push_back(&cls_w);
    out.push_back(&cls_b);
    return out;
  }

  std::vector<Parameter*> all() { return {&proj_w, &proj_b, &att_v, &att_u, &cls_w, &cls_b}; }
  std::vector<const Parameter*> all() const { return {&proj_w, &proj_b, &att_v, &att_u, &cls_w, &cls_b}; }
};

// Parameters placed on one tape.
struct BoundBackbone {
  BackboneVariant variant;
  Value proj_w, proj_b, att_v, att_u, cls_w, cls_b;
};

inline BoundBackbone bind(Tape& t, BackboneParams& p) {
  return {p.variant, t.param(p.proj_w), t.param(p.proj_b), t.param(p.att_v),
          t.param(p.att_u), t.param(p.cls_w), t.param(p.cls_b)};
}

inline BoundBackbone bind_frozen(Tape& t, const BackboneParams& p) {
  return {p.variant,
          t.constant(p.proj_w.value),
          t.constant(p.proj_b.value),
          t.constant(p.att_v.value),
          t.constant(p.att_u.value),
          t.constant(p.cls_w.value),
          t.constant(p.cls_b.value)};
}

// Per-instance attention weights (1 x M) of an attention-pool backbone.
inline Value attention_weights(const BoundBackbone& b, const Value& projected) {
  Value scores = matmul(tanh(matmul(projected, b.att_v)), b.att_u);  // M x 1
  return softmax_rows(transpose(scores));
}

// Slide embedding (1 x D_S) for one bag.
inline Value embed_slide(Tape& t, const BoundBackbone& b, const Matrix& instances) {
  if (instances.cols() != b.proj_w.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "bag feature width " + std::to_string(instances.cols()) +
                                                  " != " + std::to_string(b.proj_w.rows()));
  }
  if (instances.rows() == 0) throw Error(ErrorCode::EmptyInput, "empty bag");
  Value x = t.constant(instances);
  Value projected = add_bias(matmul(x, b.proj_w), b.proj_b);  // M x D_S
  switch (b.variant) {
    case BackboneVariant::MeanPool:
      return tanh(mean_rows(projected));
    case BackboneVariant::AttentionPool:
      return matmul(attention_weights(b, projected), projected);
  }
  throw Error(ErrorCode::InvalidValue, "unknown backbone variant");
}

inline Value embed_slide(Tape& t, const SlideBag& bag, BackboneParams& p) {
  return embed_slide(t, bind(t, p), bag.instances);
}

// Stacked embeddings B x D_S for a mini-batch.
inline Value embed_batch(Tape& t, const BoundBackbone& b, std::span<const SlideBag* const> batch) {
  std::vector<Value> rows;
  rows.reserve(batch.size());
  for (const auto* bag : batch) rows.push_back(embed_slide(t, b, bag->instances));
  return concat_rows(rows);
}

// Affine MIL head: B x D_S -> B x C logits.
inline Value cls_mil(const BoundBackbone& b, const Value& embedding) {
  if (embedding.cols() != b.cls_w.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "cls_mil input width " + std::to_string(embedding.cols()));
  }
  return add_bias(matmul(embedding, b.cls_w), b.cls_b);
}

}  // namespace slidegcd
