#include "cep/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cep {

bool MetricsRecord::all_finite() const {
  for (double v : {loss_total, loss_cycle, loss_nce, grad_norm,
                   mu_identity_gap, wall_ms}) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : cycle_terms) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string to_json_line(const MetricsRecord& r) {
  std::ostringstream o;
  o.precision(17);
  o << "{\"step\":" << r.step;
  o << ",\"loss_total\":" << r.loss_total;
  o << ",\"loss_cycle\":" << r.loss_cycle;
  o << ",\"loss_nce\":" << r.loss_nce;
  o << ",\"cycle_terms\":[";
  for (size_t i = 0; i < r.cycle_terms.size(); ++i) {
    if (i) o << ",";
    o << r.cycle_terms[i];
  }
  o << "]";
  o << ",\"grad_norm\":" << r.grad_norm;
  o << ",\"queue_fill\":" << r.queue_fill;
  o << ",\"mu_identity_gap\":" << r.mu_identity_gap;
  o << ",\"wall_ms\":" << r.wall_ms;
  o << "}";
  return o.str();
}

MetricsRecord parse_json_line(const std::string& line) {
  const nlohmann::json j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.step = j.at("step").get<int64_t>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_cycle = j.at("loss_cycle").get<double>();
  r.loss_nce = j.at("loss_nce").get<double>();
  const auto& terms = j.at("cycle_terms");
  if (terms.size() != r.cycle_terms.size()) {
    throw std::invalid_argument("metrics: expected 6 cycle terms");
  }
  for (size_t i = 0; i < r.cycle_terms.size(); ++i) {
    r.cycle_terms[i] = terms[i].get<double>();
  }
  r.grad_norm = j.at("grad_norm").get<double>();
  r.queue_fill = j.at("queue_fill").get<int64_t>();
  r.mu_identity_gap = j.at("mu_identity_gap").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

std::vector<MetricsRecord> load_metrics_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("metrics: cannot open " + path);
  }
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_json_line(line));
  }
  return out;
}

}  // namespace cep
