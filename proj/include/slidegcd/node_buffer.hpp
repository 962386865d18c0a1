#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "slidegcd/autodiff.hpp"

namespace slidegcd {

struct BufferSlot {
  std::vector<double> embedding;
  std::string slide_id;
  int label = -1;  // diagnostics only
  std::uint64_t insertion_step = 0;

  bool operator==(const BufferSlot&) const = default;
};

// Fixed-capacity FIFO of detached slide embeddings. slot(0) is the newest.
class NodeBuffer {
 public:
  NodeBuffer() = default;
  NodeBuffer(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0) throw InvalidValueError("buffer_capacity", "must be >= 1");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return slots_.size(); }
  bool empty() const noexcept { return slots_.empty(); }
  bool full() const noexcept { return slots_.size() == capacity_; }
  const BufferSlot& slot(std::size_t i) const { return slots_.at(i); }
  const std::deque<BufferSlot>& slots() const noexcept { return slots_; }
  std::uint64_t next_step() const noexcept { return next_step_; }

  // Row i of `embeddings` lands at slot i; the oldest overflow is evicted.
  void push_batch(const Matrix& embeddings, std::span<const std::string> ids, std::span<const int> labels) {
    const std::size_t b = embeddings.rows();
    if (b > capacity_) {
      throw Error(ErrorCode::CapacityExceeded,
                  "batch of " + std::to_string(b) + " exceeds capacity " + std::to_string(capacity_));
    }
    if (embeddings.cols() != dim_) {
      throw Error(ErrorCode::DimensionMismatch,
                  "embedding width " + std::to_string(embeddings.cols()) + " != " + std::to_string(dim_));
    }
    if (ids.size() != b || labels.size() != b) {
      throw Error(ErrorCode::DimensionMismatch, "ids/labels count != batch rows");
    }
    if (!embeddings.all_finite()) throw Error(ErrorCode::NonFiniteInput, "buffer push");
    const std::uint64_t step = next_step_++;
    for (std::size_t i = b; i-- > 0;) {
      auto row = embeddings.row(i);
      slots_.push_front(BufferSlot{{row.begin(), row.end()}, ids[i], labels[i], step});
    }
    while (slots_.size() > capacity_) slots_.pop_back();
  }

  // Slots [begin, end) stacked into a matrix.
  Matrix embeddings(std::size_t begin, std::size_t end) const {
    if (begin > end || end > slots_.size()) throw Error(ErrorCode::IndexOutOfRange, "buffer range");
    Matrix m(end - begin, dim_);
    for (std::size_t i = begin; i < end; ++i) std::copy(slots_[i].embedding.begin(), slots_[i].embedding.end(), m.row(i - begin).begin());
    return m;
  }

  void restore(std::deque<BufferSlot> slots, std::uint64_t next_step) {
    if (slots.size() > capacity_) throw Error(ErrorCode::CapacityExceeded, "restored slot count");
    for (const auto& s : slots) {
      if (s.embedding.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "restored slot width");
    }
    slots_ = std::move(slots);
    next_step_ = next_step;
  }

  bool operator==(const NodeBuffer&) const = default;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::deque<BufferSlot> slots_;
  std::uint64_t next_step_ = 0;
};

struct AssembledNodes {
  Value x0;           // n x D_S, live batch on top
  Value buffer_rows;  // detached rows B..n-1 (invalid when n == B)
  std::size_t live_count = 0;
};

// Node matrix X0 for one training step: the live (gradient-carrying) batch
// followed by every remaining buffer slot as a constant.
inline AssembledNodes assemble_node_matrix(Tape& t, const NodeBuffer& buf, const Value& live,
                                           std::span<const std::string> live_ids) {
  const std::size_t b = live.rows();
  if (live_ids.size() != b || buf.size() < b) {
    throw Error(ErrorCode::HeadMismatch, "buffer head shorter than live batch");
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (buf.slot(i).slide_id != live_ids[i]) {
      throw Error(ErrorCode::HeadMismatch, "slot " + std::to_string(i) + " holds " + buf.slot(i).slide_id +
                                               ", live batch has " + live_ids[i]);
    }
  }
  if (live.cols() != buf.dim()) throw Error(ErrorCode::DimensionMismatch, "live batch width");
  AssembledNodes out;
  out.live_count = b;
  if (buf.size() == b) {
    out.x0 = live;
    return out;
  }
  out.buffer_rows = t.constant(buf.embeddings(b, buf.size()));
  out.x0 = concat_rows({live, out.buffer_rows});
  return out;
}

}  // namespace slidegcd
