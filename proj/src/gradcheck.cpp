#include "cep/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "cep/encoder.hpp"
#include "cep/losses.hpp"
#include "cep/predictors.hpp"
#include "cep/rng.hpp"

namespace cep {

namespace {

double eval(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape(Precision::f64);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, false));
  Var out = fn(tape, leaves);
  return tape.value(out).item();
}

}  // namespace

double grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                  double eps) {
  if (eps < 1e-6 || eps > 1e-3) {
    throw std::invalid_argument("grad_check: eps must be in [1e-6, 1e-3]");
  }
  Tape tape(Precision::f64);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
  Var out = fn(tape, leaves);
  if (tape.value(out).numel() != 1) {
    throw std::invalid_argument("grad_check: function is not scalar-valued");
  }
  GradientMap grads = tape.backward(out);

  double max_err = 0.0;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = grads.at(leaves[i]);
    for (int64_t j = 0; j < work[i].numel(); ++j) {
      const double orig = work[i].at(j);
      work[i].set(j, orig + eps);
      const double fp = eval(fn, work);
      work[i].set(j, orig - eps);
      const double fm = eval(fn, work);
      work[i].set(j, orig);
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = analytic.at(j);
      const double err = std::abs(ana - num) /
                         std::max({1.0, std::abs(ana), std::abs(num)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

// Keeps relu/log/sqrt inputs away from their kinks and clamp guards.
Tensor random_signed_away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.25, 1.5);
    t.set(i, rng.coin() ? mag : -mag);
  }
  return t;
}

Var sum_all(Tape& tape, Var v) {
  const Tensor& t = tape.value(v);
  std::vector<int64_t> axes;
  for (int64_t d = 0; d < t.rank(); ++d) axes.push_back(d);
  return reduce_sum(v, axes);
}

// A weighted sum makes the scalar sensitive to every output coordinate.
Var weighted_sum(Tape& tape, Var v, uint64_t salt) {
  const Tensor& t = tape.value(v);
  Tensor w(t.shape());
  Rng rng = Rng::keyed(salt, 0x71u);
  for (int64_t i = 0; i < w.numel(); ++i) w.set(i, rng.uniform(0.5, 1.5));
  Var wv = tape.leaf(w, false);
  return sum_all(tape, mul(v, wv));
}

}  // namespace

std::vector<GradCheckCase> builtin_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  Rng rng(0x9e3779b9u);

  auto push = [&](std::string name, ScalarFn fn, std::vector<Tensor> inputs,
                  double tol = 1e-5) {
    cases.push_back({std::move(name), std::move(fn), std::move(inputs), tol});
  };

  push("add",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, add(in[0], in[1]), 1);
       },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({3, 4}, rng, -1, 1)});
  push("sub",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, sub(in[0], in[1]), 2);
       },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({3, 4}, rng, -1, 1)});
  push("mul",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, mul(in[0], in[1]), 3);
       },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({3, 4}, rng, -1, 1)});
  push("scale",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, scale(in[0], -2.5), 4);
       },
       {random_tensor({5}, rng, -1, 1)});
  push("add_const",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, add_const(in[0], 0.7), 5);
       },
       {random_tensor({5}, rng, -1, 1)});
  push("matmul",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, matmul(matmul(in[0], in[1]), in[2]), 6);
       },
       {random_tensor({3, 3}, rng, -1, 1), random_tensor({3, 3}, rng, -1, 1),
        random_tensor({3, 3}, rng, -1, 1)});
  push("conv2d",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, conv2d(in[0], in[1], in[2], 2, 1), 7);
       },
       {random_tensor({2, 5, 5, 3}, rng, -1, 1),
        random_tensor({3, 3, 3, 4}, rng, -1, 1),
        random_tensor({4}, rng, -1, 1)});
  push("relu",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, relu(in[0]), 8);
       },
       {random_signed_away_from_zero({4, 4}, rng)});
  push("exp",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, cep::exp(in[0]), 9);
       },
       {random_tensor({6}, rng, -1, 1)});
  push("log",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, cep::log(in[0]), 10);
       },
       {random_tensor({6}, rng, 0.5, 2.0)});
  push("sqrt",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, cep::sqrt(in[0]), 11);
       },
       {random_tensor({6}, rng, 0.5, 2.0)});
  push("concat_last",
       [](Tape& t, std::span<const Var> in) {
         const Var parts[2] = {in[0], in[1]};
         return weighted_sum(t, concat_last(parts), 12);
       },
       {random_tensor({2, 3}, rng, -1, 1), random_tensor({2, 2}, rng, -1, 1)});
  push("stack_rows",
       [](Tape& t, std::span<const Var> in) {
         const Var parts[2] = {in[0], in[1]};
         return weighted_sum(t, stack_rows(parts), 13);
       },
       {random_tensor({4}, rng, -1, 1), random_tensor({4}, rng, -1, 1)});
  push("row_slice",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, row_slice(in[0], 1), 14);
       },
       {random_tensor({3, 4}, rng, -1, 1)});
  push("time_slice",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, time_slice(in[0], 1, 3), 23);
       },
       {random_tensor({2, 4, 3}, rng, -1, 1)});
  push("reshape",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, reshape(in[0], {6, 2}), 15);
       },
       {random_tensor({3, 4}, rng, -1, 1)});
  push("add_rowvec",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, add_rowvec(in[0], in[1]), 16);
       },
       {random_tensor({3, 4}, rng, -1, 1), random_tensor({4}, rng, -1, 1)});
  push("reduce_mean",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, reduce_mean(in[0], {1, 2}), 17);
       },
       {random_tensor({2, 3, 4, 2}, rng, -1, 1)});
  push("reduce_var",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, reduce_var(in[0], {0, 1}), 18);
       },
       {random_tensor({3, 4, 2}, rng, -1, 1)});
  push("reduce_sum",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, reduce_sum(in[0], {0}), 19);
       },
       {random_tensor({3, 4}, rng, -1, 1)});
  push("dot",
       [](Tape& t, std::span<const Var> in) { return dot(in[0], in[1]); },
       {random_tensor({7}, rng, -1, 1), random_tensor({7}, rng, -1, 1)});
  push("sqdist",
       [](Tape& t, std::span<const Var> in) { return sqdist(in[0], in[1]); },
       {random_tensor({7}, rng, -1, 1), random_tensor({7}, rng, 2, 3)});
  push("l2dist_rows",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, l2dist_rows(in[0], in[1]), 20);
       },
       {random_tensor({3, 5}, rng, -1, 1), random_tensor({3, 5}, rng, 2, 3)});
  push("tgn_norm",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, tgn_norm(in[0], in[1], in[2], {0, 0, 1, 1}),
                             21);
       },
       {random_tensor({2, 4, 3, 3, 2}, rng, -1, 1),
        random_tensor({2}, rng, 0.5, 1.5), random_tensor({2}, rng, -0.5, 0.5)});
  push("bn_norm",
       [](Tape& t, std::span<const Var> in) {
         return weighted_sum(t, tgn_norm(in[0], in[1], in[2], {0, 0, 0, 0}),
                             22);
       },
       {random_tensor({2, 4, 3, 3, 2}, rng, -1, 1),
        random_tensor({2}, rng, 0.5, 1.5), random_tensor({2}, rng, -0.5, 0.5)});
  // stop_gradient is deliberately absent: its analytic gradient differs
  // from finite differences by contract. Its zero-gradient behaviour is
  // asserted exactly in the unit tests.
  push("logsumexp",
       [](Tape& t, std::span<const Var> in) { return logsumexp(in[0]); },
       {random_tensor({6}, rng, -2, 2)});

  return cases;
}

GradCheckCase combined_loss_gradcheck_case(uint64_t seed) {
  EncoderConfig ecfg;
  ecfg.t_snip = 4;
  ecfg.height = 8;
  ecfg.width = 8;
  ecfg.channels = 2;
  ecfg.dim = 8;
  ecfg.conv1_out = 4;
  ecfg.conv2_out = 6;
  ecfg.mix_width = 16;

  PredictorConfig pcfg;
  pcfg.dim = 8;
  pcfg.noise_dim = 4;
  pcfg.hidden = 16;

  const EncoderParams enc =
      EncoderParams::init(ecfg, seed, Precision::f64);
  const EncoderParams delayed =
      EncoderParams::init(ecfg, seed + 1, Precision::f64);
  const PredictorParams mu =
      PredictorParams::init(pcfg, seed + 2, Precision::f64);
  const PredictorParams ups =
      PredictorParams::init(pcfg, seed + 3, Precision::f64);

  const int64_t batch = 2;
  Tensor x({batch, 3 * ecfg.t_snip, ecfg.height, ecfg.width, ecfg.channels});
  {
    Rng r = Rng::keyed(seed, 0xda7b);
    for (int64_t i = 0; i < x.numel(); ++i) x.set(i, r.uniform(0.0, 1.0));
  }
  // stop-gradient targets from a different parameter set
  const std::vector<Tensor> target_vals =
      encode_chunks_values(delayed, x, 3, NormMode::kTgn, Precision::f64);
  // fixed negatives per triple: 3 easy + 2 hard
  std::vector<std::vector<Tensor>> neg_vals(static_cast<size_t>(batch));
  {
    Rng r = Rng::keyed(seed, 0x4e47);
    for (auto& row : neg_vals) {
      for (int j = 0; j < 5; ++j) {
        Tensor v({ecfg.dim});
        for (int64_t i = 0; i < v.numel(); ++i) v.set(i, r.uniform(-1, 1));
        row.push_back(std::move(v));
      }
    }
  }

  std::vector<std::string> enc_names;
  enc.for_each([&](const std::string& n, const Tensor&) {
    enc_names.push_back(n);
  });
  std::vector<std::string> pred_names;
  mu.for_each([&](const std::string& n, const Tensor&) {
    pred_names.push_back(n);
  });

  std::vector<Tensor> inputs;
  enc.for_each([&](const std::string&, const Tensor& t) {
    inputs.push_back(t);
  });
  mu.for_each([&](const std::string&, const Tensor& t) {
    inputs.push_back(t);
  });
  ups.for_each([&](const std::string&, const Tensor& t) {
    inputs.push_back(t);
  });

  GradCheckCase c;
  c.name = "combined_cep_loss";
  c.tolerance = 1e-4;
  c.inputs = std::move(inputs);
  c.fn = [ecfg, pcfg, x, target_vals, neg_vals, enc_names, pred_names, seed](
             Tape& tape, std::span<const Var> in) {
    size_t idx = 0;
    EncoderVars ev;
    for (const std::string& n : enc_names) {
      ev.names.push_back(n);
      ev.vars.push_back(in[idx++]);
    }
    PredictorVars mv, uv;
    mv.cfg = pcfg;
    uv.cfg = pcfg;
    for (const std::string& n : pred_names) {
      mv.names.push_back(n);
      mv.vars.push_back(in[idx++]);
    }
    for (const std::string& n : pred_names) {
      uv.names.push_back(n);
      uv.vars.push_back(in[idx++]);
    }
    Var xv = tape.leaf(x, false);
    std::vector<Var> chunks =
        encode_chunks(tape, ev, ecfg, xv, 3, NormMode::kTgn);
    TripleEmbeddings live{chunks[0], chunks[1], chunks[2]};
    TripleEmbeddings targets{
        stop_gradient(tape.leaf(target_vals[0], false)),
        stop_gradient(tape.leaf(target_vals[1], false)),
        stop_gradient(tape.leaf(target_vals[2], false))};
    std::vector<NegativeSet> negatives(neg_vals.size());
    for (size_t r = 0; r < neg_vals.size(); ++r) {
      for (size_t j = 0; j < neg_vals[r].size(); ++j) {
        Var leaf = tape.leaf(neg_vals[r][j], false);
        if (j < 3) {
          negatives[r].easy.push_back(stop_gradient(leaf));
        } else {
          negatives[r].hard.push_back(stop_gradient(leaf));
        }
      }
    }
    NoiseSource noise(rng::mix(seed, 0xe7a), pcfg.noise_dim, true);
    CycleLossResult cyc = cycle_loss(tape, targets, live, mv, uv, noise);
    ContrastiveConfig ccfg;
    Var nce =
        contrastive_loss(tape, targets, live, mv, uv, noise, negatives, ccfg);
    return combined_loss(cyc.total, nce, 0.1);
  };
  return c;
}

}  // namespace cep
