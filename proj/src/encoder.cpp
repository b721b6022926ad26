#include "cep/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "cep/rng.hpp"

namespace cep {

namespace {

Tensor uniform_fan_in(Shape shape, int64_t fan_in, Rng& rng, Precision prec) {
  Tensor t(std::move(shape), prec);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t.set(i, rng.uniform(-bound, bound));
  }
  return t;
}

Tensor fill(Shape shape, double v, Precision prec) {
  Tensor t(std::move(shape), prec);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, v);
  return t;
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& cfg, uint64_t seed,
                                  Precision prec) {
  if (cfg.temporal_split && (cfg.t_snip % 2 != 0 || cfg.dim % 2 != 0)) {
    throw std::invalid_argument(
        "encoder: temporal_split needs even t_snip and dim");
  }
  EncoderParams p;
  p.cfg = cfg;
  int64_t idx = 0;
  auto next_rng = [&] { return Rng::keyed(seed, rng::kInit, idx++); };

  Rng r1 = next_rng();
  p.conv1_w = uniform_fan_in({3, 3, cfg.channels, cfg.conv1_out},
                             9 * cfg.channels, r1, prec);
  p.conv1_b = fill({cfg.conv1_out}, 0.0, prec);
  p.norm1_scale = fill({cfg.conv1_out}, 1.0, prec);
  p.norm1_shift = fill({cfg.conv1_out}, 0.0, prec);

  Rng r2 = next_rng();
  p.conv2_w = uniform_fan_in({3, 3, cfg.conv1_out, cfg.conv2_out},
                             9 * cfg.conv1_out, r2, prec);
  p.conv2_b = fill({cfg.conv2_out}, 0.0, prec);
  p.norm2_scale = fill({cfg.conv2_out}, 1.0, prec);
  p.norm2_shift = fill({cfg.conv2_out}, 0.0, prec);

  if (!cfg.temporal_split) {
    const int64_t mix_in = cfg.t_snip * cfg.conv2_out;
    Rng r3 = next_rng();
    p.mix_w = uniform_fan_in({mix_in, cfg.mix_width}, mix_in, r3, prec);
    p.mix_b = fill({cfg.mix_width}, 0.0, prec);
    Rng r4 = next_rng();
    p.head_w = uniform_fan_in({cfg.mix_width, cfg.dim}, cfg.mix_width, r4,
                              prec);
    p.head_b = fill({cfg.dim}, 0.0, prec);
  } else {
    const int64_t mix_in = (cfg.t_snip / 2) * cfg.conv2_out;
    const int64_t half = cfg.dim / 2;
    Rng r3 = next_rng();
    p.mix_w = uniform_fan_in({mix_in, cfg.mix_width}, mix_in, r3, prec);
    p.mix_b = fill({cfg.mix_width}, 0.0, prec);
    Rng r4 = next_rng();
    p.head_w = uniform_fan_in({cfg.mix_width, half}, cfg.mix_width, r4, prec);
    p.head_b = fill({half}, 0.0, prec);
    Rng r5 = next_rng();
    p.mix2_w = uniform_fan_in({mix_in, cfg.mix_width}, mix_in, r5, prec);
    p.mix2_b = fill({cfg.mix_width}, 0.0, prec);
    Rng r6 = next_rng();
    p.head2_w = uniform_fan_in({cfg.mix_width, half}, cfg.mix_width, r6, prec);
    p.head2_b = fill({half}, 0.0, prec);
  }
  return p;
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("conv1.w", conv1_w);
  fn("conv1.b", conv1_b);
  fn("norm1.scale", norm1_scale);
  fn("norm1.shift", norm1_shift);
  fn("conv2.w", conv2_w);
  fn("conv2.b", conv2_b);
  fn("norm2.scale", norm2_scale);
  fn("norm2.shift", norm2_shift);
  fn("mix.w", mix_w);
  fn("mix.b", mix_b);
  fn("head.w", head_w);
  fn("head.b", head_b);
  if (cfg.temporal_split) {
    fn("mix2.w", mix2_w);
    fn("mix2.b", mix2_b);
    fn("head2.w", head2_w);
    fn("head2.b", head2_b);
  }
}

void EncoderParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<EncoderParams*>(this)->for_each(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

int64_t EncoderParams::param_count() const {
  int64_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

Var EncoderVars::at(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return vars[i];
  }
  throw std::invalid_argument("encoder vars: no parameter named " + name);
}

EncoderVars leaf_encoder(Tape& tape, const EncoderParams& params,
                         bool requires_grad) {
  EncoderVars out;
  params.for_each([&](const std::string& name, const Tensor& t) {
    out.names.push_back(name);
    out.vars.push_back(tape.leaf(t, requires_grad));
  });
  return out;
}

std::vector<Var> encode_chunks(Tape& tape, const EncoderVars& vars,
                               const EncoderConfig& cfg, Var x,
                               int64_t n_chunks, NormMode mode) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 5 || xv.extent(1) != n_chunks * cfg.t_snip ||
      xv.extent(2) != cfg.height || xv.extent(3) != cfg.width ||
      xv.extent(4) != cfg.channels) {
    throw std::invalid_argument(
        "encode: expected (M," + std::to_string(n_chunks * cfg.t_snip) + "," +
        std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "," +
        std::to_string(cfg.channels) + "), got " + shape_str(xv.shape()));
  }
  const int64_t t_total = n_chunks * cfg.t_snip;
  std::vector<int32_t> chunk_of_t(static_cast<size_t>(t_total), 0);
  if (mode == NormMode::kTgn) {
    for (int64_t t = 0; t < t_total; ++t) {
      chunk_of_t[static_cast<size_t>(t)] =
          static_cast<int32_t>(t / cfg.t_snip);
    }
  }

  Var h1 = relu(conv2d(x, vars.at("conv1.w"), vars.at("conv1.b"), 1, 1));
  h1 = tgn_norm(h1, vars.at("norm1.scale"), vars.at("norm1.shift"),
                chunk_of_t);
  Var h2 = relu(conv2d(h1, vars.at("conv2.w"), vars.at("conv2.b"), 2, 1));
  h2 = tgn_norm(h2, vars.at("norm2.scale"), vars.at("norm2.shift"),
                chunk_of_t);
  Var pooled = reduce_mean(h2, {2, 3});  // (M, t_total, conv2_out)

  std::vector<Var> out;
  out.reserve(static_cast<size_t>(n_chunks));
  for (int64_t s = 0; s < n_chunks; ++s) {
    const int64_t t0 = s * cfg.t_snip;
    if (!cfg.temporal_split) {
      Var flat = time_slice(pooled, t0, t0 + cfg.t_snip);
      Var mixed = add_rowvec(matmul(flat, vars.at("mix.w")), vars.at("mix.b"));
      out.push_back(
          add_rowvec(matmul(mixed, vars.at("head.w")), vars.at("head.b")));
    } else {
      const int64_t half = cfg.t_snip / 2;
      Var fa = time_slice(pooled, t0, t0 + half);
      Var fb = time_slice(pooled, t0 + half, t0 + cfg.t_snip);
      Var ma = add_rowvec(matmul(fa, vars.at("mix.w")), vars.at("mix.b"));
      Var mb = add_rowvec(matmul(fb, vars.at("mix2.w")), vars.at("mix2.b"));
      Var ha = add_rowvec(matmul(ma, vars.at("head.w")), vars.at("head.b"));
      Var hb = add_rowvec(matmul(mb, vars.at("head2.w")), vars.at("head2.b"));
      const Var parts[2] = {ha, hb};
      out.push_back(concat_last(parts));
    }
  }
  return out;
}

std::vector<Tensor> encode_chunks_values(const EncoderParams& params,
                                         const Tensor& x, int64_t n_chunks,
                                         NormMode mode, Precision prec) {
  Tape tape(prec);
  EncoderVars vars = leaf_encoder(tape, params, false);
  Var xv = tape.leaf(x, false);
  std::vector<Var> outs =
      encode_chunks(tape, vars, params.cfg, xv, n_chunks, mode);
  std::vector<Tensor> values;
  values.reserve(outs.size());
  for (Var v : outs) values.push_back(tape.value(v));
  return values;
}

Tensor encode_single(const EncoderParams& params, const Tensor& snippet,
                     NormMode mode, Precision prec) {
  const EncoderConfig& cfg = params.cfg;
  if (snippet.rank() != 4) {
    throw std::invalid_argument("encode: snippet must be (T,H,W,C), got " +
                                shape_str(snippet.shape()));
  }
  Tensor batched({1, snippet.extent(0), snippet.extent(1), snippet.extent(2),
                  snippet.extent(3)},
                 snippet.precision());
  for (int64_t i = 0; i < snippet.numel(); ++i) {
    batched.set(i, snippet.at(i));
  }
  Tensor out = encode_chunks_values(params, batched, 1, mode, prec)[0];
  Tensor vec({cfg.dim}, out.precision());
  for (int64_t i = 0; i < cfg.dim; ++i) vec.set(i, out.at(i));
  return vec;
}

Var bn_norm(Var x, Var scale, Var shift) {
  const Tensor& xv = x.tape->value(x);
  if (xv.rank() != 5) {
    throw std::invalid_argument("bn_norm: input must be (N,T,H,W,C), got " +
                                shape_str(xv.shape()));
  }
  return tgn_norm(x, scale, shift,
                  std::vector<int32_t>(static_cast<size_t>(xv.extent(1)), 0));
}

SnapshotRing::SnapshotRing(int64_t k_delay, int64_t s_snap) {
  if (k_delay < 0 || s_snap <= 0) {
    throw std::invalid_argument("snapshot ring: need k_delay >= 0, s_snap > 0");
  }
  capacity_ = (k_delay + s_snap - 1) / s_snap + 1;
}

void SnapshotRing::push(int64_t step, const EncoderParams& params) {
  if (!entries_.empty() && entries_.back().first >= step) {
    throw std::invalid_argument("snapshot ring: steps must increase");
  }
  entries_.emplace_back(step, params);
  while (static_cast<int64_t>(entries_.size()) > capacity_) {
    entries_.pop_front();
  }
}

const EncoderParams& SnapshotRing::delayed(int64_t current_step,
                                           int64_t k_delay) const {
  if (entries_.empty()) {
    throw std::logic_error("snapshot ring: empty, push initial params first");
  }
  const EncoderParams* best = nullptr;
  for (const auto& [step, params] : entries_) {
    if (step <= current_step - k_delay) best = &params;
  }
  return best ? *best : entries_.front().second;
}

}  // namespace cep
