#include "cep/ablate.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "cep/probe.hpp"
#include "cep/trainer.hpp"

namespace cep {

namespace {

struct RowSpec {
  std::string name;
  bool pretrain = true;
  std::function<void(TrainConfig&)> mutate;
  std::vector<std::string> changed_keys;
};

std::vector<RowSpec> study_rows(const std::string& study) {
  if (study == "loss") {
    return {
        {"random-init", false, [](TrainConfig&) {}, {}},
        {"cycle-only", true,
         [](TrainConfig& c) { c.loss_mode = LossMode::kCycleOnly; },
         {"loss_mode"}},
        {"nce-only-shared", true,
         [](TrainConfig& c) { c.loss_mode = LossMode::kNceSharedPredictor; },
         {"loss_mode"}},
        {"nce-only", true,
         [](TrainConfig& c) { c.loss_mode = LossMode::kNceOnly; },
         {"loss_mode"}},
        {"both", true, [](TrainConfig&) {}, {}},
    };
  }
  if (study == "obfuscation") {
    return {
        {"obfuscation-off", true,
         [](TrainConfig& c) { c.obfuscate = false; }, {"obfuscate"}},
        {"obfuscation-on", true, [](TrainConfig&) {}, {}},
    };
  }
  if (study == "membank") {
    return {
        {"no-bank", true, [](TrainConfig& c) { c.n_easy = 0; }, {"n_easy"}},
        {"static", true,
         [](TrainConfig& c) { c.strategy = BankStrategy::kStatic; },
         {"strategy"}},
        {"dynamic-m0.1", true, [](TrainConfig& c) { c.m = 0.1; }, {"m"}},
        {"dynamic-m0.9", true, [](TrainConfig&) {}, {}},
    };
  }
  if (study == "norm") {
    return {
        {"sync-bn", true,
         [](TrainConfig& c) { c.norm_mode = NormMode::kBn; }, {"norm_mode"}},
        {"sync-tgn", true, [](TrainConfig&) {}, {}},
    };
  }
  if (study == "rf") {
    return {
        {"stride-1", true, [](TrainConfig&) {}, {}},
        {"stride-2", true, [](TrainConfig& c) { c.stride = 2; }, {"stride"}},
    };
  }
  if (study == "dim") {
    return {
        {"dim-32", true, [](TrainConfig& c) { c.dim = 32; }, {"dim"}},
        {"dim-64", true, [](TrainConfig&) {}, {}},
        {"dim-128", true, [](TrainConfig& c) { c.dim = 128; }, {"dim"}},
        {"dim-64-split", true,
         [](TrainConfig& c) { c.temporal_split = true; },
         {"temporal_split"}},
    };
  }
  std::string valid;
  for (const std::string& s : ablation_studies()) {
    if (!valid.empty()) valid += ", ";
    valid += s;
  }
  throw std::invalid_argument("ablate: unknown study '" + study +
                              "', valid studies: " + valid);
}

// keys whose serialized lines differ between two configs
std::vector<std::string> config_diff_keys(const TrainConfig& a,
                                          const TrainConfig& b) {
  std::istringstream sa(a.serialize()), sb(b.serialize());
  std::vector<std::string> out;
  std::string la, lb;
  while (std::getline(sa, la) && std::getline(sb, lb)) {
    if (la != lb) {
      out.push_back(la.substr(0, la.find(' ')));
    }
  }
  return out;
}

}  // namespace

const std::vector<std::string>& ablation_studies() {
  static const std::vector<std::string> studies = {
      "loss", "obfuscation", "membank", "norm", "rf", "dim"};
  return studies;
}

std::string AblationReport::to_table() const {
  std::ostringstream o;
  o << "study: " << study << "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s %-28s %8s %8s %8s  %s\n",
                "row", "delta", "mean", "min", "max", "seeds");
  o << line;
  for (const AblationRow& r : rows) {
    std::ostringstream seeds;
    seeds.precision(6);
    seeds << std::fixed;
    for (size_t i = 0; i < r.accuracies.size(); ++i) {
      if (i) seeds << " ";
      seeds << r.accuracies[i];
    }
    std::snprintf(line, sizeof(line), "%-18s %-28s %8.4f %8.4f %8.4f  [%s]\n",
                  r.name.c_str(), r.delta.c_str(), r.mean, r.min, r.max,
                  seeds.str().c_str());
    o << line;
  }
  return o.str();
}

std::string AblationReport::to_jsonl() const {
  std::ostringstream o;
  o.precision(17);
  for (const AblationRow& r : rows) {
    o << "{\"study\":\"" << study << "\",\"row\":\"" << r.name
      << "\",\"delta\":\"" << r.delta << "\",\"accuracies\":[";
    for (size_t i = 0; i < r.accuracies.size(); ++i) {
      if (i) o << ",";
      o << r.accuracies[i];
    }
    o << "],\"mean\":" << r.mean << ",\"min\":" << r.min
      << ",\"max\":" << r.max << "}\n";
  }
  return o.str();
}

AblationReport ablate(const std::string& study, const TrainConfig& base,
                      const std::string& out_dir, int64_t seeds, bool force) {
  if (seeds < 1) {
    throw std::invalid_argument("ablate: need at least one seed");
  }
  AblationReport report;
  report.study = study;
  for (const RowSpec& spec : study_rows(study)) {
    TrainConfig row_cfg = base;
    spec.mutate(row_cfg);
    row_cfg.validate();

    const std::vector<std::string> diff = config_diff_keys(base, row_cfg);
    if (diff != spec.changed_keys) {
      std::string got;
      for (const std::string& k : diff) got += k + " ";
      throw std::logic_error("ablate: row " + spec.name +
                             " changed unexpected fields: " + got);
    }

    AblationRow row;
    row.name = spec.name;
    row.delta = spec.changed_keys.empty()
                    ? std::string("(base)")
                    : [&] {
                        std::string d;
                        for (const std::string& k : spec.changed_keys) {
                          if (!d.empty()) d += ",";
                          d += k;
                        }
                        return d;
                      }();
    for (int64_t k = 0; k < seeds; ++k) {
      TrainConfig run_cfg = row_cfg;
      run_cfg.base_seed = base.base_seed + static_cast<uint64_t>(k);
      double acc;
      if (spec.pretrain) {
        const std::string run_dir = out_dir + "/" + study + "/" + spec.name +
                                    "/seed" + std::to_string(k);
        const PretrainResult res = run_pretrain(run_cfg, run_dir, force);
        acc = probe_checkpoint_file(res.final_checkpoint, run_cfg);
      } else {
        const EncoderParams enc = EncoderParams::init(
            run_cfg.encoder_config(), run_cfg.base_seed, Precision::f32);
        acc = probe_encoder(enc, run_cfg);
      }
      row.accuracies.push_back(acc);
    }
    row.mean = 0.0;
    row.min = row.accuracies[0];
    row.max = row.accuracies[0];
    for (double a : row.accuracies) {
      row.mean += a;
      row.min = std::min(row.min, a);
      row.max = std::max(row.max, a);
    }
    row.mean /= static_cast<double>(row.accuracies.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace cep
