#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "slidegcd/node_buffer.hpp"

namespace slidegcd {
namespace {

void push(NodeBuffer& buf, const std::vector<std::string>& ids, double salt = 0.0) {
  Matrix e(ids.size(), buf.dim());
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < buf.dim(); ++j) e(i, j) = salt + static_cast<double>(i) + 0.1 * static_cast<double>(j);
  std::vector<int> labels(ids.size(), 0);
  buf.push_batch(e, ids, labels);
}

std::vector<std::string> ids_of(const NodeBuffer& buf) {
  std::vector<std::string> out;
  for (const auto& s : buf.slots()) out.push_back(s.slide_id);
  return out;
}

TEST(PushBatch, FifoExample) {
  NodeBuffer buf(3, 2);
  for (const char* id : {"a", "b", "c", "d"}) push(buf, {id});
  EXPECT_EQ(ids_of(buf), (std::vector<std::string>{"d", "c", "b"}));
}

TEST(PushBatch, FullBatchIntoEmptyBuffer) {
  NodeBuffer buf(4, 2);
  push(buf, {"w", "x", "y", "z"});
  EXPECT_EQ(ids_of(buf), (std::vector<std::string>{"w", "x", "y", "z"}));
  EXPECT_TRUE(buf.full());
  EXPECT_EQ(buf.embeddings(0, 4)(2, 1), 2.1);
}

TEST(PushBatch, StepCounterIncreasesPerPush) {
  NodeBuffer buf(5, 1);
  push(buf, {"a", "b"});
  push(buf, {"c"});
  EXPECT_EQ(buf.slot(0).insertion_step, 1u);
  EXPECT_EQ(buf.slot(1).insertion_step, 0u);
  EXPECT_EQ(buf.slot(2).insertion_step, 0u);
}

TEST(PushBatch, Errors) {
  NodeBuffer buf(2, 3);
  try {
    push(buf, {"a", "b", "c"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CapacityExceeded);
  }
  const std::string id[] = {"a"};
  const int label[] = {0};
  try {
    buf.push_batch(Matrix(1, 2), id, label);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_TRUE(buf.empty());
}

TEST(PushBatch, MatchesDequeOracleOn1000Sequences) {
  std::mt19937_64 rng(42);
  for (int seq = 0; seq < 1000; ++seq) {
    const std::size_t cap = 1 + rng() % 12;
    NodeBuffer buf(cap, 1);
    oracle::QueueSim sim{cap, {}};
    const int pushes = 1 + static_cast<int>(rng() % 15);
    int next = 0;
    for (int p = 0; p < pushes; ++p) {
      const std::size_t b = 1 + rng() % cap;
      std::vector<std::string> batch;
      for (std::size_t i = 0; i < b; ++i) batch.push_back("s" + std::to_string(next++));
      push(buf, batch);
      sim.push(batch);
      ASSERT_EQ(ids_of(buf), std::vector<std::string>(sim.ids.begin(), sim.ids.end())) << "sequence " << seq;
    }
  }
}

TEST(PushBatch, NeverExceedsCapacityUnder10kOperations) {
  std::mt19937_64 rng(7);
  NodeBuffer buf(17, 2);
  std::size_t expected = 0;
  for (int op = 0; op < 10000; ++op) {
    const std::size_t b = 1 + rng() % 17;
    std::vector<std::string> batch(b, "x" + std::to_string(op));
    push(buf, batch);
    expected = std::min<std::size_t>(17, expected + b);
    ASSERT_EQ(buf.size(), expected);
    ASSERT_LE(buf.size(), buf.capacity());
  }
}

TEST(AssembleNodeMatrix, EmptyBufferThenPushIsLiveBatch) {
  NodeBuffer buf(8, 2);
  Tape t;
  Matrix e = oracle::pattern(3, 2, 0.4);
  Value live = t.variable(e);
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::vector<int> labels{0, 1, 0};
  buf.push_batch(e, ids, labels);
  AssembledNodes nodes = assemble_node_matrix(t, buf, live, ids);
  EXPECT_EQ(nodes.x0.data(), e);
  EXPECT_FALSE(nodes.buffer_rows.valid());
}

TEST(AssembleNodeMatrix, NoPaddingBeforeBufferFills) {
  NodeBuffer buf(10, 2);
  push(buf, {"a", "b"});
  push(buf, {"c"}, 5.0);
  Tape t;
  Value live = t.variable(buf.embeddings(0, 1));
  const std::string id[] = {"c"};
  EXPECT_EQ(assemble_node_matrix(t, buf, live, id).x0.rows(), 3u);
}

TEST(AssembleNodeMatrix, GradientIsolation) {
  NodeBuffer buf(6, 3);
  push(buf, {"old1", "old2", "old3"});
  Tape t;
  Matrix e = oracle::pattern(2, 3, 1.2);
  Value live = t.variable(e);
  const std::vector<std::string> ids{"n1", "n2"};
  const std::vector<int> labels{1, 1};
  buf.push_batch(e, ids, labels);
  AssembledNodes nodes = assemble_node_matrix(t, buf, live, ids);
  ASSERT_EQ(nodes.x0.rows(), 5u);
  t.backward(sum_all(nodes.x0));
  EXPECT_EQ(live.grad(), Matrix(2, 3, 1.0));
  EXPECT_EQ(nodes.buffer_rows.grad(), Matrix(3, 3));
  EXPECT_FALSE(nodes.buffer_rows.requires_grad());
}

TEST(AssembleNodeMatrix, HeadMismatch) {
  NodeBuffer buf(4, 1);
  push(buf, {"a", "b"});
  Tape t;
  Value live = t.variable(Matrix(2, 1));
  const std::string wrong[] = {"b", "a"};
  try {
    assemble_node_matrix(t, buf, live, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HeadMismatch);
  }
}

TEST(NodeBuffer, DuplicateSlidesWhenCapacityExceedsDataset) {
  // N = 10 slides, L = 25, batches of 5 for ceil(25 / 10) = 3 epochs.
  NodeBuffer buf(25, 2);
  std::mt19937_64 rng(0);
  std::vector<std::string> slides;
  for (int i = 0; i < 10; ++i) slides.push_back("slide" + std::to_string(i));
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::shuffle(slides.begin(), slides.end(), rng);
    for (std::size_t s = 0; s < slides.size(); s += 5) push(buf, {slides.begin() + s, slides.begin() + s + 5});
  }
  const auto ids = ids_of(buf);
  EXPECT_EQ(ids.size(), 25u);
  EXPECT_LT(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
}

TEST(NodeBuffer, RestoreRoundTrip) {
  NodeBuffer a(4, 2);
  push(a, {"p", "q"});
  push(a, {"r"});
  NodeBuffer b(4, 2);
  b.restore(a.slots(), a.next_step());
  EXPECT_EQ(a, b);
  NodeBuffer small(1, 2);
  EXPECT_THROW(small.restore(a.slots(), 0), Error);
}

}  // namespace
}  // namespace slidegcd
