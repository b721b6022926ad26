#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "cep/encoder.hpp"
#include "cep/losses.hpp"
#include "cep/rng.hpp"

namespace cep {

enum class BankStrategy { kStatic, kDynamic };

struct QueueEntry {
  Tensor snippet;  // (T, H, W, C)
  int64_t video_id = 0;
  Tensor cached_feature;  // (D), populated under the static strategy
};

// Bounded FIFO of past snippets sourcing easy negatives.
class MemoryQueue {
 public:
  explicit MemoryQueue(int64_t capacity = 512);

  // Static strategy passes the feature computed by the proxy encoder at
  // enqueue time; dynamic passes nothing and re-encodes at sampling time.
  void enqueue(Tensor snippet, int64_t video_id,
               std::optional<Tensor> cached_feature = std::nullopt);

  size_t size() const { return entries_.size(); }
  int64_t capacity() const { return capacity_; }
  const QueueEntry& entry(size_t i) const { return entries_[i]; }

 private:
  int64_t capacity_;
  std::deque<QueueEntry> entries_;
};

// proxy <- m * proxy + (1 - m) * live, elementwise exact in the declared
// precision. m must lie in [0, 1).
void momentum_update(EncoderParams& proxy, const EncoderParams& live,
                     double m);

// Uniform sample (without replacement) of up to n_easy queue indices whose
// video_id differs from the anchor's. Cold queues yield fewer.
std::vector<size_t> sample_easy_indices(const MemoryQueue& queue,
                                        int64_t anchor_video_id,
                                        int64_t n_easy, Rng& rng);

// Assembles the negative set for one anchor triple. Easy negatives come
// from the queue (dynamic: encoded now by the proxy; static: cached at
// enqueue). Hard features are same-video embeddings already produced by the
// live encoder. Every embedding enters the tape as a requires_grad leaf
// behind stop_gradient; the leaves stay visible for zero-gradient checks.
NegativeSet build_negatives(Tape& tape, const MemoryQueue& queue,
                            int64_t anchor_video_id,
                            const std::vector<Tensor>& hard_features,
                            int64_t n_easy, BankStrategy strategy,
                            const EncoderParams& proxy, NormMode mode,
                            Rng& rng);

}  // namespace cep
