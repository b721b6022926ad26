#pragma once

#include <map>
#include <string>
#include <vector>

#include "cep/config.hpp"
#include "cep/metrics.hpp"
#include "cep/synthvideo.hpp"

namespace cep {

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Arithmetic in double, stored in the tensors' precision.
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                double momentum, double weight_decay);

// Weight decay applies to weights and normalization scales, not to biases
// or shifts.
bool decays(const std::string& param_name);

struct BatchItem {
  Tensor past, current, future;     // obfuscated per config
  std::vector<Tensor> hard_snips;   // same-clip windows outside the triple
  int64_t video_id = 0;
};

struct TrainState {
  TrainConfig cfg;
  int64_t step = 0;
  EncoderParams enc;
  EncoderParams proxy;
  PredictorParams mu;
  PredictorParams ups;
  std::map<std::string, Tensor> velocity;  // enc/..., mu/..., ups/...
  SnapshotRing ring;
  MemoryQueue queue;

  static TrainState init(const TrainConfig& cfg);
};

// Deterministic batch for one step: a pure function of (config, step).
std::vector<BatchItem> assemble_batch(const TrainConfig& cfg, int64_t step);

// Gradient magnitudes reaching the stop-gradient leaves of one step; both
// must be exactly zero.
struct StopGradProbe {
  double max_negative_grad_abs = 0.0;
  double max_target_grad_abs = 0.0;
  int64_t probed_negatives = 0;
  int64_t probed_targets = 0;
};

// One optimization step: encode, losses, backward, SGD, proxy momentum
// update, enqueue, snapshot. Throws on non-finite loss naming the term.
MetricsRecord train_step(TrainState& state, const std::vector<BatchItem>& batch,
                         StopGradProbe* probe = nullptr);

// Checkpoint round-trip of the full training state (queue contents are not
// persisted; resumed runs rewarm the queue).
void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path, const TrainConfig& cfg);

struct PretrainResult {
  std::string final_checkpoint;
  std::string metrics_path;
  std::vector<std::string> periodic_checkpoints;
};

// Runs cfg.steps training steps; writes metrics.jsonl, a checkpoint every
// 500 steps, and the final checkpoint under out_dir.
PretrainResult run_pretrain(const TrainConfig& cfg, const std::string& out_dir,
                            bool force = false);

// Pretraining pool uses video ids [0, steps * batch); probe pools live at
// disjoint offsets.
inline constexpr int64_t kProbeTrainIdBase = int64_t(1) << 20;
inline constexpr int64_t kProbeValIdBase = int64_t(1) << 21;

}  // namespace cep
