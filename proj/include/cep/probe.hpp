#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cep/config.hpp"
#include "cep/trainer.hpp"

namespace cep {

// Frozen-feature evaluation set: one embedding per clip from its centre
// snippet, no augmentation, balanced classes.
struct ProbeDataset {
  std::vector<std::vector<double>> features;
  std::vector<int32_t> labels;
  int64_t dim = 0;

  size_t size() const { return labels.size(); }
};

// Embeds `count` clips with video ids [id_base, id_base + count). Rejects
// pools overlapping the pretraining id range implied by cfg.
ProbeDataset extract_embeddings(const EncoderParams& enc,
                                const TrainConfig& cfg, int64_t id_base,
                                int64_t count);

// Multinomial logistic regression on frozen features: full-batch gradient
// descent, 500 iterations, lr 0.1. Returns validation top-1 in [0, 1].
double linear_probe(const ProbeDataset& train, const ProbeDataset& val);

// Extracts both probe pools for the encoder and runs the linear probe.
double probe_encoder(const EncoderParams& enc, const TrainConfig& cfg);

// Convenience: load a training checkpoint and probe its live encoder.
double probe_checkpoint_file(const std::string& checkpoint_path,
                             const TrainConfig& cfg);

}  // namespace cep
