// Test-only reference implementations: straight-line scalar code kept
// independent of the tape-based implementation paths it checks.
#pragma once

#include <cmath>
#include <vector>

#include "cep/losses.hpp"
#include "cep/predictors.hpp"
#include "cep/synthvideo.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec tensor_row(const cep::Tensor& t, int64_t row) {
  const int64_t d = t.extent(t.rank() - 1);
  Vec out(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) {
    out[static_cast<size_t>(j)] = t.at(row * d + j);
  }
  return out;
}

// 4-layer MLP on [z || eta], relu after layers 1..3.
inline Vec mlp_apply(const cep::PredictorParams& p, const Vec& z,
                     const Vec& eta) {
  Vec in = z;
  in.insert(in.end(), eta.begin(), eta.end());
  auto affine = [](const cep::Tensor& w, const cep::Tensor& b, const Vec& x,
                   bool relu) {
    const int64_t rows = w.extent(0), cols = w.extent(1);
    Vec y(static_cast<size_t>(cols), 0.0);
    for (int64_t j = 0; j < cols; ++j) {
      double acc = b.at(j);
      for (int64_t i = 0; i < rows; ++i) {
        acc += x[static_cast<size_t>(i)] * w.at(i * cols + j);
      }
      y[static_cast<size_t>(j)] = relu && acc < 0.0 ? 0.0 : acc;
    }
    return y;
  };
  Vec h = affine(p.w1, p.b1, in, true);
  h = affine(p.w2, p.b2, h, true);
  h = affine(p.w3, p.b3, h, true);
  return affine(p.w4, p.b4, h, false);
}

inline double l2_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Sum over the six elementary cycles of the batch-mean start/end distance.
// Noise draws mirror the implementation's stream layout (fork per cycle,
// one draw per application).
inline double cycle_loss(const cep::PredictorParams& mu,
                         const cep::PredictorParams& ups,
                         const std::vector<Vec>& tgt_p,
                         const std::vector<Vec>& tgt_t,
                         const std::vector<Vec>& tgt_f,
                         const std::vector<Vec>& live_p,
                         const std::vector<Vec>& live_t,
                         const std::vector<Vec>& live_f,
                         const cep::NoiseSource& noise) {
  const size_t n = live_t.size();
  const auto& cycles = cep::elementary_cycles();
  double total = 0.0;
  for (size_t ci = 0; ci < cycles.size(); ++ci) {
    const cep::CycleSpec& spec = cycles[ci];
    cep::NoiseSource ns = noise.fork(ci);
    auto pick_live = [&](cep::TimeRole r) {
      return r == cep::TimeRole::kPast      ? &live_p
             : r == cep::TimeRole::kCurrent ? &live_t
                                            : &live_f;
    };
    auto pick_tgt = [&](cep::TimeRole r) {
      return r == cep::TimeRole::kPast      ? &tgt_p
             : r == cep::TimeRole::kCurrent ? &tgt_t
                                            : &tgt_f;
    };
    std::vector<Vec> state = *pick_live(spec.start);
    auto leg = [&](const cep::PredictorParams& p, int64_t reps) {
      for (int64_t k = 0; k < reps; ++k) {
        cep::Tensor eta = ns.draw(static_cast<int64_t>(n), cep::Precision::f64);
        for (size_t r = 0; r < n; ++r) {
          const Vec e = eta.numel() ? tensor_row(eta, static_cast<int64_t>(r))
                                    : Vec{};
          state[r] = mlp_apply(p, state[r], e);
        }
      }
    };
    if (spec.forward_first) {
      leg(mu, spec.depth);
      leg(ups, spec.depth);
    } else {
      leg(ups, spec.depth);
      leg(mu, spec.depth);
    }
    double term = 0.0;
    const std::vector<Vec>& tgt = *pick_tgt(spec.start);
    for (size_t r = 0; r < n; ++r) term += l2_dist(tgt[r], state[r]);
    total += term / static_cast<double>(n);
  }
  return total;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct evaluation of the normalized-probability objective.
inline double infonce(const Vec& anchor, const Vec& positive,
                      const std::vector<Vec>& negatives, double xi) {
  const double sp = dot(anchor, positive) / xi;
  double denom = std::exp(sp);
  for (const Vec& n : negatives) denom += std::exp(dot(anchor, n) / xi);
  return -std::log(std::exp(sp) / denom);
}

// Mean of infonce over the prediction pairs and the batch, with the same
// noise stream layout as the implementation (forks 16..19).
inline double contrastive_loss(const cep::PredictorParams& mu,
                               const cep::PredictorParams& ups,
                               const std::vector<Vec>& tgt_p,
                               const std::vector<Vec>& tgt_t,
                               const std::vector<Vec>& tgt_f,
                               const std::vector<Vec>& live_p,
                               const std::vector<Vec>& live_t,
                               const std::vector<Vec>& live_f,
                               const std::vector<std::vector<Vec>>& negatives,
                               double xi, bool four_pairs,
                               const cep::NoiseSource& noise) {
  const size_t n = live_t.size();
  auto predict_rows = [&](const cep::PredictorParams& p,
                          const std::vector<Vec>& rows, uint64_t salt) {
    cep::NoiseSource ns = noise.fork(salt);
    cep::Tensor eta = ns.draw(static_cast<int64_t>(n), cep::Precision::f64);
    std::vector<Vec> out(n);
    for (size_t r = 0; r < n; ++r) {
      const Vec e =
          eta.numel() ? tensor_row(eta, static_cast<int64_t>(r)) : Vec{};
      out[r] = mlp_apply(p, rows[r], e);
    }
    return out;
  };
  std::vector<std::pair<const std::vector<Vec>*, std::vector<Vec>>> pairs;
  pairs.emplace_back(&tgt_t, predict_rows(mu, live_p, 16));
  pairs.emplace_back(&tgt_t, predict_rows(ups, live_f, 17));
  if (four_pairs) {
    pairs.emplace_back(&tgt_f, predict_rows(mu, live_t, 18));
    pairs.emplace_back(&tgt_p, predict_rows(ups, live_t, 19));
  }
  double total = 0.0;
  for (size_t r = 0; r < n; ++r) {
    for (const auto& [anchors, preds] : pairs) {
      total += infonce((*anchors)[r], preds[r], negatives[r], xi);
    }
  }
  return total / static_cast<double>(n * pairs.size());
}

// Predictor weights realizing z -> z + c exactly (relu kept in its linear
// region by a large bias); requires noise_dim == 0.
inline cep::PredictorParams affine_predictor(int64_t dim, double c) {
  cep::PredictorConfig cfg;
  cfg.dim = dim;
  cfg.noise_dim = 0;
  cfg.hidden = dim;
  cep::PredictorParams p;
  p.cfg = cfg;
  const double lift = 1024.0;
  auto eye = [&](double diag) {
    cep::Tensor w({dim, dim});
    for (int64_t i = 0; i < dim; ++i) w.set(i * dim + i, diag);
    return w;
  };
  auto bias = [&](double v) {
    cep::Tensor b({dim});
    for (int64_t i = 0; i < dim; ++i) b.set(i, v);
    return b;
  };
  p.w1 = eye(1.0);
  p.b1 = bias(lift);
  p.w2 = eye(1.0);
  p.b2 = bias(0.0);
  p.w3 = eye(1.0);
  p.b3 = bias(0.0);
  p.w4 = eye(1.0);
  p.b4 = bias(c - lift);
  return p;
}

// Intensity-weighted centroid with the background noise floor removed.
inline std::pair<double, double> frame_centroid(const cep::Tensor& frames,
                                                int64_t t) {
  const int64_t h = frames.extent(1), w = frames.extent(2),
                c = frames.extent(3);
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double v = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        v += frames.at(((t * h + y) * w + x) * c + ch);
      }
      v = std::max(v / static_cast<double>(c) - 0.05, 0.0);
      mass += v;
      mx += v * static_cast<double>(x);
      my += v * static_cast<double>(y);
    }
  }
  return {mx / mass, my / mass};
}

// Nearest-centroid classification on mean frame-difference features:
// [mean_t(f[t+1]-f[t]) || mean_t |f[t+1]-f[t]|], trained on the first half
// of each class's clips and evaluated on the rest.
inline double frame_difference_separability(int clips_per_class,
                                            int64_t length, uint64_t seed) {
  const int64_t feat_dim = 2 * cep::kFrameH * cep::kFrameW * cep::kFrameC;
  auto features = [&](const cep::VideoClip& clip) {
    Vec f(static_cast<size_t>(feat_dim), 0.0);
    const int64_t frame_elems = cep::kFrameH * cep::kFrameW * cep::kFrameC;
    const int64_t steps = clip.length() - 1;
    for (int64_t t = 0; t < steps; ++t) {
      for (int64_t j = 0; j < frame_elems; ++j) {
        const double d = clip.frames.at((t + 1) * frame_elems + j) -
                         clip.frames.at(t * frame_elems + j);
        f[static_cast<size_t>(j)] += d / static_cast<double>(steps);
        f[static_cast<size_t>(frame_elems + j)] +=
            std::abs(d) / static_cast<double>(steps);
      }
    }
    return f;
  };

  const int train_n = clips_per_class / 2;
  std::vector<Vec> centroids(cep::kNumClasses,
                             Vec(static_cast<size_t>(feat_dim), 0.0));
  std::vector<std::pair<Vec, int>> eval;
  for (int cls = 0; cls < cep::kNumClasses; ++cls) {
    for (int i = 0; i < clips_per_class; ++i) {
      const uint64_t clip_seed =
          seed + static_cast<uint64_t>(cls * clips_per_class + i);
      const cep::VideoClip clip =
          cep::generate_clip(clip_seed, cls, length, 0, cep::Precision::f32);
      Vec f = features(clip);
      if (i < train_n) {
        for (size_t j = 0; j < f.size(); ++j) {
          centroids[static_cast<size_t>(cls)][j] +=
              f[j] / static_cast<double>(train_n);
        }
      } else {
        eval.emplace_back(std::move(f), cls);
      }
    }
  }
  int correct = 0;
  for (const auto& [f, cls] : eval) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < cep::kNumClasses; ++c) {
      double d = 0.0;
      for (size_t j = 0; j < f.size(); ++j) {
        const double diff = f[j] - centroids[static_cast<size_t>(c)][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == cls) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace oracle
