#pragma once

#include <cstdint>
#include <string>

#include "cep/encoder.hpp"
#include "cep/membank.hpp"
#include "cep/predictors.hpp"

namespace cep {

enum class LossMode { kBoth, kCycleOnly, kNceOnly, kNceSharedPredictor };
enum class TargetMode { kDelayed, kLiveStopgrad };

// Every run hyperparameter. Defaults are the canonical configuration; each
// ablation study flips exactly one field.
struct TrainConfig {
  uint64_t base_seed = 1;
  int64_t steps = 2000;
  int64_t batch_triples = 8;
  double lr = 1e-2;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda_loss = 0.1;
  double xi = 1.0;
  double m = 0.9;
  int64_t n_easy = 16;
  int64_t n_hard = 4;
  int64_t queue_capacity = 512;
  int64_t k_delay = 200;
  int64_t s_snap = 50;
  int64_t dim = 64;
  int64_t t_snip = 8;
  int64_t stride = 1;
  NormMode norm_mode = NormMode::kTgn;
  BankStrategy strategy = BankStrategy::kDynamic;
  LossMode loss_mode = LossMode::kBoth;
  bool obfuscate = true;
  TargetMode target_mode = TargetMode::kDelayed;
  bool four_positive_pairs = true;
  bool temporal_split = false;
  int64_t probe_train_clips = 400;
  int64_t probe_val_clips = 160;

  void validate() const;

  EncoderConfig encoder_config() const;
  PredictorConfig predictor_config() const;

  // Canonical `key = value` text, one line per field, fixed order.
  std::string serialize() const;
  uint64_t hash() const;
};

// Parses the `key = value` format ('#' starts a comment; unknown keys are
// errors naming the key).
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

}  // namespace cep
