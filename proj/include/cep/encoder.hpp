#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "cep/tape.hpp"
#include "cep/tensor.hpp"

namespace cep {

enum class NormMode { kTgn, kBn };

struct EncoderConfig {
  int64_t t_snip = 8;
  int64_t height = 32, width = 32, channels = 3;
  int64_t dim = 64;  // embedding dimensionality D
  int64_t conv1_out = 16;
  int64_t conv2_out = 32;
  int64_t mix_width = 128;
  bool temporal_split = false;  // 2 x (D/2) heads over temporal halves
};

// Encoder parameters: per-frame conv stack with normalization, spatial
// mean-pool, temporal mixing affine, projection head.
struct EncoderParams {
  EncoderConfig cfg;
  Tensor conv1_w, conv1_b, norm1_scale, norm1_shift;
  Tensor conv2_w, conv2_b, norm2_scale, norm2_shift;
  Tensor mix_w, mix_b, head_w, head_b;
  Tensor mix2_w, mix2_b, head2_w, head2_b;  // second temporal half (split)

  static EncoderParams init(const EncoderConfig& cfg, uint64_t seed,
                            Precision prec);

  // Visits every live parameter as (name, tensor). Order is fixed.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;

  int64_t param_count() const;
};

// Per-tape leaf handles of the encoder parameters.
struct EncoderVars {
  std::vector<std::string> names;
  std::vector<Var> vars;

  Var at(const std::string& name) const;
};

EncoderVars leaf_encoder(Tape& tape, const EncoderParams& params,
                         bool requires_grad);

// Batched forward over a group tensor x of shape (M, n_chunks*T, H, W, C).
// Returns n_chunks embedding matrices of shape (M, D). Normalization
// statistics are chunk-local in TGN mode and whole-group in BN mode; both
// pool over (batch, height, width).
std::vector<Var> encode_chunks(Tape& tape, const EncoderVars& vars,
                               const EncoderConfig& cfg, Var x,
                               int64_t n_chunks, NormMode mode);

// Convenience no-grad forward: fresh private tape, values out.
std::vector<Tensor> encode_chunks_values(const EncoderParams& params,
                                         const Tensor& x, int64_t n_chunks,
                                         NormMode mode, Precision prec);

// One snippet (T, H, W, C) as a single-chunk batch of one.
Tensor encode_single(const EncoderParams& params, const Tensor& snippet,
                     NormMode mode, Precision prec);

// Plain batch normalization: one statistic per channel over everything
// except channels. Identical to tgn_norm with a single chunk.
Var bn_norm(Var x, Var scale, Var shift);

// Bounded history of parameter snapshots taken every s_snap steps,
// bootstrapping delayed ground-truth targets.
class SnapshotRing {
 public:
  SnapshotRing(int64_t k_delay, int64_t s_snap);

  void push(int64_t step, const EncoderParams& params);

  // Newest snapshot with step <= current_step - k_delay; the initial
  // parameters when none qualifies.
  const EncoderParams& delayed(int64_t current_step, int64_t k_delay) const;

  size_t size() const { return entries_.size(); }
  int64_t capacity() const { return capacity_; }
  int64_t entry_step(size_t i) const { return entries_[i].first; }
  const EncoderParams& entry_params(size_t i) const {
    return entries_[i].second;
  }

 private:
  int64_t capacity_;
  std::deque<std::pair<int64_t, EncoderParams>> entries_;
};

}  // namespace cep
