#include "cep/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cep/synthvideo.hpp"

namespace cep {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v +
                                "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v +
                                "'");
  }
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad flag for " + key + ": '" + v +
                              "' (want on/off)");
}

std::string fmt_real(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  require(steps >= 0, "steps must be >= 0");
  require(batch_triples >= 1, "batch_triples must be >= 1");
  require(lr >= 0.0, "lr must be >= 0");
  require(sgd_momentum >= 0.0 && sgd_momentum < 1.0,
          "sgd_momentum must be in [0,1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(lambda_loss >= 0.0, "lambda_loss must be >= 0");
  require(xi > 0.0, "xi must be > 0");
  require(m >= 0.0 && m < 1.0, "m must be in [0,1)");
  require(n_easy >= 0, "n_easy must be >= 0");
  require(n_hard >= 0, "n_hard must be >= 0");
  require(queue_capacity >= 1, "queue_capacity must be >= 1");
  require(k_delay >= 0, "k_delay must be >= 0");
  require(s_snap >= 1, "s_snap must be >= 1");
  require(dim >= 2 && dim % 2 == 0, "dim must be even and >= 2");
  require(t_snip >= 1, "t_snip must be >= 1");
  require(stride == 1 || stride == 2, "stride must be 1 or 2");
  require(!temporal_split || (t_snip % 2 == 0 && dim % 2 == 0),
          "temporal_split needs even t_snip and dim");
  require(probe_train_clips >= kNumClasses && probe_val_clips >= kNumClasses,
          "probe pools need at least one clip per class");
}

EncoderConfig TrainConfig::encoder_config() const {
  EncoderConfig e;
  e.t_snip = t_snip;
  e.height = kFrameH;
  e.width = kFrameW;
  e.channels = kFrameC;
  e.dim = dim;
  e.temporal_split = temporal_split;
  return e;
}

PredictorConfig TrainConfig::predictor_config() const {
  return predictor_config_for(dim);
}

std::string TrainConfig::serialize() const {
  std::ostringstream o;
  o << "base_seed = " << base_seed << "\n";
  o << "steps = " << steps << "\n";
  o << "batch_triples = " << batch_triples << "\n";
  o << "lr = " << fmt_real(lr) << "\n";
  o << "sgd_momentum = " << fmt_real(sgd_momentum) << "\n";
  o << "weight_decay = " << fmt_real(weight_decay) << "\n";
  o << "lambda_loss = " << fmt_real(lambda_loss) << "\n";
  o << "xi = " << fmt_real(xi) << "\n";
  o << "m = " << fmt_real(m) << "\n";
  o << "n_easy = " << n_easy << "\n";
  o << "n_hard = " << n_hard << "\n";
  o << "queue_capacity = " << queue_capacity << "\n";
  o << "k_delay = " << k_delay << "\n";
  o << "s_snap = " << s_snap << "\n";
  o << "dim = " << dim << "\n";
  o << "t_snip = " << t_snip << "\n";
  o << "stride = " << stride << "\n";
  o << "norm_mode = " << (norm_mode == NormMode::kTgn ? "tgn" : "bn") << "\n";
  o << "strategy = "
    << (strategy == BankStrategy::kDynamic ? "dynamic" : "static") << "\n";
  o << "loss_mode = ";
  switch (loss_mode) {
    case LossMode::kBoth: o << "both"; break;
    case LossMode::kCycleOnly: o << "cycle_only"; break;
    case LossMode::kNceOnly: o << "nce_only"; break;
    case LossMode::kNceSharedPredictor: o << "nce_shared_predictor"; break;
  }
  o << "\n";
  o << "obfuscate = " << (obfuscate ? "on" : "off") << "\n";
  o << "target_mode = "
    << (target_mode == TargetMode::kDelayed ? "delayed" : "live-stopgrad")
    << "\n";
  o << "positive_pairs = " << (four_positive_pairs ? "four" : "two") << "\n";
  o << "temporal_split = " << (temporal_split ? "on" : "off") << "\n";
  o << "probe_train_clips = " << probe_train_clips << "\n";
  o << "probe_val_clips = " << probe_val_clips << "\n";
  return o.str();
}

uint64_t TrainConfig::hash() const {
  const std::string s = serialize();
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value': '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "base_seed") {
      cfg.base_seed = static_cast<uint64_t>(parse_int(key, val));
    } else if (key == "steps") {
      cfg.steps = parse_int(key, val);
    } else if (key == "batch_triples") {
      cfg.batch_triples = parse_int(key, val);
    } else if (key == "lr") {
      cfg.lr = parse_real(key, val);
    } else if (key == "sgd_momentum") {
      cfg.sgd_momentum = parse_real(key, val);
    } else if (key == "weight_decay") {
      cfg.weight_decay = parse_real(key, val);
    } else if (key == "lambda_loss") {
      cfg.lambda_loss = parse_real(key, val);
    } else if (key == "xi") {
      cfg.xi = parse_real(key, val);
    } else if (key == "m") {
      cfg.m = parse_real(key, val);
    } else if (key == "n_easy") {
      cfg.n_easy = parse_int(key, val);
    } else if (key == "n_hard") {
      cfg.n_hard = parse_int(key, val);
    } else if (key == "queue_capacity") {
      cfg.queue_capacity = parse_int(key, val);
    } else if (key == "k_delay") {
      cfg.k_delay = parse_int(key, val);
    } else if (key == "s_snap") {
      cfg.s_snap = parse_int(key, val);
    } else if (key == "dim") {
      cfg.dim = parse_int(key, val);
    } else if (key == "t_snip") {
      cfg.t_snip = parse_int(key, val);
    } else if (key == "stride") {
      cfg.stride = parse_int(key, val);
    } else if (key == "norm_mode") {
      if (val == "tgn") cfg.norm_mode = NormMode::kTgn;
      else if (val == "bn") cfg.norm_mode = NormMode::kBn;
      else throw std::invalid_argument("config: norm_mode must be tgn|bn");
    } else if (key == "strategy") {
      if (val == "dynamic") cfg.strategy = BankStrategy::kDynamic;
      else if (val == "static") cfg.strategy = BankStrategy::kStatic;
      else throw std::invalid_argument("config: strategy must be static|dynamic");
    } else if (key == "loss_mode") {
      if (val == "both") cfg.loss_mode = LossMode::kBoth;
      else if (val == "cycle_only") cfg.loss_mode = LossMode::kCycleOnly;
      else if (val == "nce_only") cfg.loss_mode = LossMode::kNceOnly;
      else if (val == "nce_shared_predictor")
        cfg.loss_mode = LossMode::kNceSharedPredictor;
      else
        throw std::invalid_argument(
            "config: loss_mode must be both|cycle_only|nce_only|nce_shared_predictor");
    } else if (key == "obfuscate") {
      cfg.obfuscate = parse_flag(key, val);
    } else if (key == "target_mode") {
      if (val == "delayed") cfg.target_mode = TargetMode::kDelayed;
      else if (val == "live-stopgrad") cfg.target_mode = TargetMode::kLiveStopgrad;
      else
        throw std::invalid_argument(
            "config: target_mode must be delayed|live-stopgrad");
    } else if (key == "positive_pairs") {
      if (val == "four") cfg.four_positive_pairs = true;
      else if (val == "two") cfg.four_positive_pairs = false;
      else throw std::invalid_argument("config: positive_pairs must be four|two");
    } else if (key == "temporal_split") {
      cfg.temporal_split = parse_flag(key, val);
    } else if (key == "probe_train_clips") {
      cfg.probe_train_clips = parse_int(key, val);
    } else if (key == "probe_val_clips") {
      cfg.probe_val_clips = parse_int(key, val);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace cep
