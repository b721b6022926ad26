#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cep {

// One line of the JSONL metrics stream, one record per training step.
// loss_total is always lambda * loss_cycle + loss_nce by value, whatever
// the gradient wiring of the active loss_mode.
struct MetricsRecord {
  int64_t step = 0;
  double loss_total = 0.0;
  double loss_cycle = 0.0;
  double loss_nce = 0.0;
  std::array<double, 6> cycle_terms{};
  double grad_norm = 0.0;
  int64_t queue_fill = 0;
  double mu_identity_gap = 0.0;
  double wall_ms = 0.0;

  bool all_finite() const;
};

// Round-trip exact JSON line (doubles printed with 17 significant digits).
std::string to_json_line(const MetricsRecord& r);
MetricsRecord parse_json_line(const std::string& line);

std::vector<MetricsRecord> load_metrics_file(const std::string& path);

}  // namespace cep
