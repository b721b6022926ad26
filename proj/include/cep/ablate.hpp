#pragma once

#include <string>
#include <vector>

#include "cep/config.hpp"

namespace cep {

struct AblationRow {
  std::string name;
  std::string delta;  // changed fields vs the base config
  std::vector<double> accuracies;
  double mean = 0.0, min = 0.0, max = 0.0;
};

struct AblationReport {
  std::string study;
  std::vector<AblationRow> rows;

  std::string to_table() const;
  std::string to_jsonl() const;
};

const std::vector<std::string>& ablation_studies();

// Runs pretrain + probe per row per seed (base_seed, base_seed+1, ...).
// The "random-init" row probes a freshly initialized encoder. Row configs
// differ from the base in exactly the fields named by the row; this is
// asserted by serialization diff.
AblationReport ablate(const std::string& study, const TrainConfig& base,
                      const std::string& out_dir, int64_t seeds = 3,
                      bool force = false);

}  // namespace cep
