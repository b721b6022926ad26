#pragma once

#include <array>
#include <span>
#include <vector>

#include "cep/predictors.hpp"
#include "cep/tape.hpp"

namespace cep {

enum class TimeRole { kPast, kCurrent, kFuture };

// One elementary prediction cycle: start embedding, leg order, depth.
struct CycleSpec {
  TimeRole start;
  bool forward_first;  // true: backward^n(forward^n(.)), false: reversed
  int64_t depth;
};

// The six elementary cycles, in loss-term order.
const std::array<CycleSpec, 6>& elementary_cycles();

// Live and target (stop-gradient, delayed-encoder) embeddings of one batch
// of triples, each (n, D).
struct TripleEmbeddings {
  Var past, current, future;
};

struct CycleLossResult {
  Var total;                  // sum of the six batch-mean terms
  std::array<Var, 6> terms;   // per-cycle batch means
};

// Sum over the six cycles of the batch-mean L2 distance between the target
// embedding and the closed-cycle prediction started from the live embedding.
// Target vars must already be behind stop_gradient.
CycleLossResult cycle_loss(Tape& tape, const TripleEmbeddings& targets,
                           const TripleEmbeddings& live,
                           const PredictorVars& mu, const PredictorVars& ups,
                           const NoiseSource& noise);

// Negatives for one anchor triple; all entries behind stop_gradient.
struct NegativeSet {
  std::vector<Var> easy;  // memory-bank features, video_id != anchor
  std::vector<Var> hard;  // same-video features

  // pre-stop_gradient leaves, kept so tests can assert their gradients
  // stay exactly zero
  std::vector<Var> probes;

  std::vector<Var> all() const {
    std::vector<Var> out = easy;
    out.insert(out.end(), hard.begin(), hard.end());
    return out;
  }
};

// -log( exp(Sp/xi) / (exp(Sp/xi) + sum_i exp(Si/xi)) ) with raw dot-product
// similarities and max-subtracted log-sum-exp. Empty negatives give exactly
// zero.
Var infonce(Tape& tape, Var anchor, Var positive,
            std::span<const Var> negatives, double xi);

struct ContrastiveConfig {
  double xi = 1.0;
  bool four_pairs = true;  // false: only the two Z_t-anchored pairs
};

// Mean of infonce over the prediction pairs and the batch. Anchors come
// from targets (stop-gradient), positives are one-step live predictions;
// negatives[r] is the r-th triple's negative set.
Var contrastive_loss(Tape& tape, const TripleEmbeddings& targets,
                     const TripleEmbeddings& live, const PredictorVars& mu,
                     const PredictorVars& ups, const NoiseSource& noise,
                     const std::vector<NegativeSet>& negatives,
                     const ContrastiveConfig& cfg);

// lambda * L_C + L_X
Var combined_loss(Var cycle, Var nce, double lambda_loss);

}  // namespace cep
