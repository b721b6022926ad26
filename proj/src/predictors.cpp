#include "cep/predictors.hpp"

#include <cmath>
#include <stdexcept>

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

}  // namespace

PredictorParams PredictorParams::init(const PredictorConfig& cfg,
                                      uint64_t seed, Precision prec) {
  PredictorParams p;
  p.cfg = cfg;
  const int64_t in = cfg.dim + cfg.noise_dim;
  Rng r1 = Rng::keyed(seed, rng::kInit, 101);
  p.w1 = uniform_fan_in({in, cfg.hidden}, in, r1, prec);
  p.b1 = Tensor({cfg.hidden}, prec);
  Rng r2 = Rng::keyed(seed, rng::kInit, 102);
  p.w2 = uniform_fan_in({cfg.hidden, cfg.hidden}, cfg.hidden, r2, prec);
  p.b2 = Tensor({cfg.hidden}, prec);
  Rng r3 = Rng::keyed(seed, rng::kInit, 103);
  p.w3 = uniform_fan_in({cfg.hidden, cfg.hidden}, cfg.hidden, r3, prec);
  p.b3 = Tensor({cfg.hidden}, prec);
  Rng r4 = Rng::keyed(seed, rng::kInit, 104);
  p.w4 = uniform_fan_in({cfg.hidden, cfg.dim}, cfg.hidden, r4, prec);
  p.b4 = Tensor({cfg.dim}, prec);
  return p;
}

void PredictorParams::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("l1.w", w1);
  fn("l1.b", b1);
  fn("l2.w", w2);
  fn("l2.b", b2);
  fn("l3.w", w3);
  fn("l3.b", b3);
  fn("l4.w", w4);
  fn("l4.b", b4);
}

void PredictorParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<PredictorParams*>(this)->for_each(
      [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

Var PredictorVars::at(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return vars[i];
  }
  throw std::invalid_argument("predictor vars: no parameter named " + name);
}

PredictorVars leaf_predictor(Tape& tape, const PredictorParams& params,
                             bool requires_grad) {
  PredictorVars out;
  out.cfg = params.cfg;
  params.for_each([&](const std::string& name, const Tensor& t) {
    out.names.push_back(name);
    out.vars.push_back(tape.leaf(t, requires_grad));
  });
  return out;
}

Tensor NoiseSource::draw(int64_t rows, Precision prec) {
  Tensor eta = noise_dim_ > 0 ? Tensor({rows, noise_dim_}, prec) : Tensor();
  const int64_t idx = draw_index_++;
  if (!enabled_ || noise_dim_ == 0) return eta;
  for (int64_t r = 0; r < rows; ++r) {
    Rng g = Rng::keyed(seed_, rng::kNoise, idx, r);
    for (int64_t c = 0; c < noise_dim_; ++c) {
      eta.set(r * noise_dim_ + c, g.gaussian());
    }
  }
  return eta;
}

Var predict(Tape& tape, const PredictorVars& params, Var z, Var eta) {
  const PredictorConfig& cfg = params.cfg;
  const Tensor& zv = tape.value(z);
  if (zv.rank() != 2 || zv.extent(1) != cfg.dim) {
    throw std::invalid_argument("predict: Z must be (n," +
                                std::to_string(cfg.dim) + "), got " +
                                shape_str(zv.shape()));
  }
  Var in = z;
  if (cfg.noise_dim > 0) {
    const Tensor& ev = tape.value(eta);
    if (ev.rank() != 2 || ev.extent(0) != zv.extent(0) ||
        ev.extent(1) != cfg.noise_dim) {
      throw std::invalid_argument("predict: eta must be (n," +
                                  std::to_string(cfg.noise_dim) + "), got " +
                                  shape_str(ev.shape()));
    }
    const Var parts[2] = {z, eta};
    in = concat_last(parts);
  }
  Var h = relu(add_rowvec(matmul(in, params.at("l1.w")), params.at("l1.b")));
  h = relu(add_rowvec(matmul(h, params.at("l2.w")), params.at("l2.b")));
  h = relu(add_rowvec(matmul(h, params.at("l3.w")), params.at("l3.b")));
  return add_rowvec(matmul(h, params.at("l4.w")), params.at("l4.b"));
}

Var iterate(Tape& tape, const PredictorVars& params, int64_t n, Var z,
            NoiseSource& noise) {
  if (n < 0 || n > params.cfg.max_depth) {
    throw std::invalid_argument(
        "iterate: depth " + std::to_string(n) + " outside [0, " +
        std::to_string(params.cfg.max_depth) + "]");
  }
  Var out = z;
  const int64_t rows = tape.value(z).extent(0);
  for (int64_t i = 0; i < n; ++i) {
    Var eta = params.cfg.noise_dim > 0
                  ? tape.leaf(noise.draw(rows, tape.precision()), false)
                  : Var{};
    out = predict(tape, params, out, eta);
  }
  return out;
}

double identity_gap(const PredictorParams& params, const Tensor& z_rows,
                    NoiseSource noise, Precision prec) {
  Tape tape(prec);
  PredictorVars vars = leaf_predictor(tape, params, false);
  Var z = tape.leaf(z_rows, false);
  Var eta = params.cfg.noise_dim > 0
                ? tape.leaf(noise.draw(z_rows.extent(0), prec), false)
                : Var{};
  Var pred = predict(tape, vars, z, eta);
  Var gaps = l2dist_rows(pred, z);
  Var mean = reduce_mean(gaps, {0});
  return tape.value(mean).item();
}

}  // namespace cep
