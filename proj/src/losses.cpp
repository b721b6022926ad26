#include "cep/losses.hpp"

#include <stdexcept>
#include <string>

namespace cep {

const std::array<CycleSpec, 6>& elementary_cycles() {
  static const std::array<CycleSpec, 6> cycles = {{
      {TimeRole::kCurrent, true, 1},
      {TimeRole::kCurrent, false, 1},
      {TimeRole::kPast, true, 1},
      {TimeRole::kPast, true, 2},
      {TimeRole::kFuture, false, 1},
      {TimeRole::kFuture, false, 2},
  }};
  return cycles;
}

namespace {

Var pick(const TripleEmbeddings& e, TimeRole role) {
  switch (role) {
    case TimeRole::kPast: return e.past;
    case TimeRole::kCurrent: return e.current;
    case TimeRole::kFuture: return e.future;
  }
  throw std::invalid_argument("cycle_loss: bad time role");
}

void check_embedding_matrix(Tape& tape, Var v, int64_t dim,
                            const char* what) {
  const Tensor& t = tape.value(v);
  if (t.rank() != 2 || t.extent(1) != dim) {
    throw std::invalid_argument(std::string("losses: ") + what +
                                " must be (n," + std::to_string(dim) +
                                "), got " + shape_str(t.shape()));
  }
}

}  // namespace

CycleLossResult cycle_loss(Tape& tape, const TripleEmbeddings& targets,
                           const TripleEmbeddings& live,
                           const PredictorVars& mu, const PredictorVars& ups,
                           const NoiseSource& noise) {
  const int64_t dim = mu.cfg.dim;
  for (Var v : {targets.past, targets.current, targets.future, live.past,
                live.current, live.future}) {
    check_embedding_matrix(tape, v, dim, "embedding batch");
  }
  CycleLossResult out;
  const auto& cycles = elementary_cycles();
  Var total{};
  for (size_t i = 0; i < cycles.size(); ++i) {
    const CycleSpec& spec = cycles[i];
    NoiseSource cycle_noise = noise.fork(i);
    Var start = pick(live, spec.start);
    Var mid, closed;
    if (spec.forward_first) {
      mid = iterate(tape, mu, spec.depth, start, cycle_noise);
      closed = iterate(tape, ups, spec.depth, mid, cycle_noise);
    } else {
      mid = iterate(tape, ups, spec.depth, start, cycle_noise);
      closed = iterate(tape, mu, spec.depth, mid, cycle_noise);
    }
    Var term =
        reduce_mean(l2dist_rows(pick(targets, spec.start), closed), {0});
    out.terms[i] = term;
    total = i == 0 ? term : add(total, term);
  }
  out.total = total;
  return out;
}

Var infonce(Tape& tape, Var anchor, Var positive,
            std::span<const Var> negatives, double xi) {
  if (xi <= 0.0) {
    throw std::invalid_argument("infonce: temperature must be positive, got " +
                                std::to_string(xi));
  }
  const Shape anchor_shape = tape.value(anchor).shape();
  if (anchor_shape.size() != 1) {
    throw std::invalid_argument("infonce: anchor must be a vector, got " +
                                shape_str(anchor_shape));
  }
  if (tape.value(positive).shape() != anchor_shape) {
    throw std::invalid_argument(
        "infonce: positive shape " + shape_str(tape.value(positive).shape()) +
        " does not match anchor " + shape_str(anchor_shape));
  }
  Var sp = scale(dot(anchor, positive), 1.0 / xi);
  std::vector<Var> sims;
  sims.reserve(negatives.size() + 1);
  sims.push_back(sp);
  for (Var n : negatives) {
    if (tape.value(n).shape() != anchor_shape) {
      throw std::invalid_argument(
          "infonce: negative shape " + shape_str(tape.value(n).shape()) +
          " does not match anchor " + shape_str(anchor_shape));
    }
    sims.push_back(scale(dot(anchor, n), 1.0 / xi));
  }
  Var stacked = sims.size() == 1 ? sp : concat_last(sims);
  return sub(logsumexp(stacked), sp);
}

Var contrastive_loss(Tape& tape, const TripleEmbeddings& targets,
                     const TripleEmbeddings& live, const PredictorVars& mu,
                     const PredictorVars& ups, const NoiseSource& noise,
                     const std::vector<NegativeSet>& negatives,
                     const ContrastiveConfig& cfg) {
  const int64_t dim = mu.cfg.dim;
  check_embedding_matrix(tape, live.past, dim, "live embeddings");
  const int64_t rows = tape.value(live.past).extent(0);
  if (static_cast<int64_t>(negatives.size()) != rows) {
    throw std::invalid_argument(
        "contrastive_loss: " + std::to_string(negatives.size()) +
        " negative sets for " + std::to_string(rows) + " triples");
  }

  // one-step predictions toward each anchored ground truth
  struct Pair {
    Var anchor_matrix;
    Var positive_matrix;
  };
  std::vector<Pair> pairs;
  {
    NoiseSource n0 = noise.fork(16);
    pairs.push_back({targets.current, iterate(tape, mu, 1, live.past, n0)});
  }
  {
    NoiseSource n1 = noise.fork(17);
    pairs.push_back({targets.current, iterate(tape, ups, 1, live.future, n1)});
  }
  if (cfg.four_pairs) {
    NoiseSource n2 = noise.fork(18);
    pairs.push_back({targets.future, iterate(tape, mu, 1, live.current, n2)});
    NoiseSource n3 = noise.fork(19);
    pairs.push_back({targets.past, iterate(tape, ups, 1, live.current, n3)});
  }

  std::vector<Var> losses;
  losses.reserve(pairs.size() * static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const std::vector<Var> negs = negatives[static_cast<size_t>(r)].all();
    for (const Pair& p : pairs) {
      Var anchor = row_slice(p.anchor_matrix, r);
      Var positive = row_slice(p.positive_matrix, r);
      losses.push_back(infonce(tape, anchor, positive, negs, cfg.xi));
    }
  }
  Var stacked = concat_last(losses);
  return reduce_mean(stacked, {0});
}

Var combined_loss(Var cycle, Var nce, double lambda_loss) {
  if (lambda_loss < 0.0) {
    throw std::invalid_argument("combined_loss: lambda must be >= 0");
  }
  return add(scale(cycle, lambda_loss), nce);
}

}  // namespace cep
