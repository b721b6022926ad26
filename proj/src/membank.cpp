#include "cep/membank.hpp"

#include <stdexcept>
#include <string>

namespace cep {

MemoryQueue::MemoryQueue(int64_t capacity) : capacity_(capacity) {
  if (capacity < 1) {
    throw std::invalid_argument("memory queue: capacity must be positive");
  }
}

void MemoryQueue::enqueue(Tensor snippet, int64_t video_id,
                          std::optional<Tensor> cached_feature) {
  QueueEntry e;
  e.snippet = std::move(snippet);
  e.video_id = video_id;
  if (cached_feature) e.cached_feature = std::move(*cached_feature);
  entries_.push_back(std::move(e));
  while (static_cast<int64_t>(entries_.size()) > capacity_) {
    entries_.pop_front();
  }
}

void momentum_update(EncoderParams& proxy, const EncoderParams& live,
                     double m) {
  if (m < 0.0 || m >= 1.0) {
    throw std::invalid_argument("momentum_update: m must be in [0,1), got " +
                                std::to_string(m));
  }
  std::vector<const Tensor*> live_tensors;
  live.for_each([&](const std::string&, const Tensor& t) {
    live_tensors.push_back(&t);
  });
  size_t idx = 0;
  proxy.for_each([&](const std::string& name, Tensor& t) {
    if (idx >= live_tensors.size() ||
        !t.same_shape(*live_tensors[idx])) {
      throw std::invalid_argument(
          "momentum_update: structural mismatch at parameter " + name);
    }
    const Tensor& src = *live_tensors[idx++];
    for (int64_t i = 0; i < t.numel(); ++i) {
      t.set(i, m * t.at(i) + (1.0 - m) * src.at(i));
    }
  });
  if (idx != live_tensors.size()) {
    throw std::invalid_argument("momentum_update: parameter count mismatch");
  }
}

std::vector<size_t> sample_easy_indices(const MemoryQueue& queue,
                                        int64_t anchor_video_id,
                                        int64_t n_easy, Rng& rng) {
  std::vector<size_t> eligible;
  eligible.reserve(queue.size());
  for (size_t i = 0; i < queue.size(); ++i) {
    if (queue.entry(i).video_id != anchor_video_id) eligible.push_back(i);
  }
  std::vector<size_t> out;
  const size_t want = static_cast<size_t>(n_easy);
  // partial Fisher-Yates over the eligible list
  for (size_t k = 0; k < want && k < eligible.size(); ++k) {
    const size_t j = k + static_cast<size_t>(rng.below(eligible.size() - k));
    std::swap(eligible[k], eligible[j]);
    out.push_back(eligible[k]);
  }
  return out;
}

NegativeSet build_negatives(Tape& tape, const MemoryQueue& queue,
                            int64_t anchor_video_id,
                            const std::vector<Tensor>& hard_features,
                            int64_t n_easy, BankStrategy strategy,
                            const EncoderParams& proxy, NormMode mode,
                            Rng& rng) {
  NegativeSet set;
  const std::vector<size_t> picks =
      sample_easy_indices(queue, anchor_video_id, n_easy, rng);

  std::vector<Tensor> easy_features;
  easy_features.reserve(picks.size());
  if (strategy == BankStrategy::kStatic) {
    for (size_t i : picks) {
      const QueueEntry& e = queue.entry(i);
      if (e.cached_feature.numel() == 0) {
        throw std::invalid_argument(
            "build_negatives: static strategy but entry has no cached feature");
      }
      easy_features.push_back(e.cached_feature);
    }
  } else if (!picks.empty()) {
    // one proxy-encoder batch over the sampled snippets, single chunk
    const EncoderConfig& cfg = proxy.cfg;
    const int64_t m = static_cast<int64_t>(picks.size());
    const Tensor& first = queue.entry(picks[0]).snippet;
    Tensor batch({m, cfg.t_snip, cfg.height, cfg.width, cfg.channels},
                 first.precision());
    const int64_t snip_elems = first.numel();
    for (int64_t r = 0; r < m; ++r) {
      const Tensor& s = queue.entry(picks[static_cast<size_t>(r)]).snippet;
      for (int64_t j = 0; j < snip_elems; ++j) {
        batch.set(r * snip_elems + j, s.at(j));
      }
    }
    Tensor features =
        encode_chunks_values(proxy, batch, 1, mode, tape.precision())[0];
    for (int64_t r = 0; r < m; ++r) {
      Tensor f({cfg.dim}, features.precision());
      for (int64_t j = 0; j < cfg.dim; ++j) {
        f.set(j, features.at(r * cfg.dim + j));
      }
      easy_features.push_back(std::move(f));
    }
  }

  for (Tensor& f : easy_features) {
    Var leaf = tape.leaf(std::move(f), true);
    set.probes.push_back(leaf);
    set.easy.push_back(stop_gradient(leaf));
  }
  for (const Tensor& f : hard_features) {
    Var leaf = tape.leaf(f, true);
    set.probes.push_back(leaf);
    set.hard.push_back(stop_gradient(leaf));
  }
  return set;
}

}  // namespace cep
