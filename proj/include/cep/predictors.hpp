#pragma once

#include <functional>
#include <string>

#include "cep/rng.hpp"
#include "cep/tape.hpp"
#include "cep/tensor.hpp"

namespace cep {

struct PredictorConfig {
  int64_t dim = 64;        // embedding dimensionality D
  int64_t noise_dim = 32;  // D/2
  int64_t hidden = 128;
  int64_t max_depth = 2;   // iterate ceiling
};

inline PredictorConfig predictor_config_for(int64_t dim) {
  PredictorConfig c;
  c.dim = dim;
  c.noise_dim = dim / 2;
  return c;
}

// One temporal predictor: 4 affine layers, relu after the first three,
// input [Z || eta]. Forward and backward predictors are two independent
// instances of this.
struct PredictorParams {
  PredictorConfig cfg;
  Tensor w1, b1, w2, b2, w3, b3, w4, b4;

  static PredictorParams init(const PredictorConfig& cfg, uint64_t seed,
                              Precision prec);

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(
      const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

struct PredictorVars {
  std::vector<std::string> names;
  std::vector<Var> vars;
  PredictorConfig cfg;

  Var at(const std::string& name) const;
};

PredictorVars leaf_predictor(Tape& tape, const PredictorParams& params,
                             bool requires_grad);

// Deterministic Gaussian stream for the noise argument eta. Draws are keyed
// by (seed, draw index, row), so results never depend on evaluation order.
// fork() derives an independent stream; disabled sources produce zeros.
class NoiseSource {
 public:
  NoiseSource(uint64_t seed, int64_t noise_dim, bool enabled = true)
      : seed_(seed), noise_dim_(noise_dim), enabled_(enabled) {}

  NoiseSource fork(uint64_t salt) const {
    return NoiseSource(rng::mix(seed_, salt), noise_dim_, enabled_);
  }

  // (rows, noise_dim) standard normal; advances the draw counter.
  Tensor draw(int64_t rows, Precision prec);

  int64_t noise_dim() const { return noise_dim_; }
  bool enabled() const { return enabled_; }

 private:
  uint64_t seed_;
  int64_t noise_dim_;
  bool enabled_;
  int64_t draw_index_ = 0;
};

// MLP([Z || eta]); Z is (rows, D), eta (rows, noise_dim) or invalid when
// noise_dim == 0.
Var predict(Tape& tape, const PredictorVars& params, Var z, Var eta);

// n-fold composition with a fresh eta per application; n = 0 is identity.
Var iterate(Tape& tape, const PredictorVars& params, int64_t n, Var z,
            NoiseSource& noise);

// mean_rows ||predict(z) - z||_2 evaluated off-tape; the identity-solution
// diagnostic logged each training step.
double identity_gap(const PredictorParams& params, const Tensor& z_rows,
                    NoiseSource noise, Precision prec);

}  // namespace cep
