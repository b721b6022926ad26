#include "cep/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "cep/checkpoint.hpp"

namespace cep {

ProbeDataset extract_embeddings(const EncoderParams& enc,
                                const TrainConfig& cfg, int64_t id_base,
                                int64_t count) {
  const int64_t pretrain_end = cfg.steps * cfg.batch_triples;
  if (id_base < pretrain_end) {
    throw std::invalid_argument(
        "extract_embeddings: probe pool [" + std::to_string(id_base) + "," +
        std::to_string(id_base + count) +
        ") overlaps pretraining clip ids [0," +
        std::to_string(pretrain_end) + ")");
  }
  const int64_t clip_len = default_clip_length(cfg.t_snip, cfg.stride);
  const int64_t span = (cfg.t_snip - 1) * cfg.stride + 1;
  const int64_t center_start = (clip_len - span) / 2;
  const Precision prec = Precision::f32;

  ProbeDataset ds;
  ds.dim = cfg.dim;
  ds.features.reserve(static_cast<size_t>(count));
  ds.labels.reserve(static_cast<size_t>(count));

  constexpr int64_t kGroup = 64;
  for (int64_t begin = 0; begin < count; begin += kGroup) {
    const int64_t n = std::min(kGroup, count - begin);
    Tensor group({n, cfg.t_snip, kFrameH, kFrameW, kFrameC}, prec);
    const int64_t snip_elems = cfg.t_snip * kFrameH * kFrameW * kFrameC;
    for (int64_t r = 0; r < n; ++r) {
      const int64_t video_id = id_base + begin + r;
      const int32_t class_id =
          static_cast<int32_t>((begin + r) % kNumClasses);
      const VideoClip clip =
          generate_clip(cfg.base_seed + static_cast<uint64_t>(video_id),
                        class_id, clip_len, video_id, prec);
      const Tensor snip = center_crop_resize(
          clip_window(clip, center_start, cfg.t_snip, cfg.stride));
      for (int64_t j = 0; j < snip_elems; ++j) {
        group.set(r * snip_elems + j, snip.at(j));
      }
      ds.labels.push_back(class_id);
    }
    const Tensor feats =
        encode_chunks_values(enc, group, 1, cfg.norm_mode, prec)[0];
    for (int64_t r = 0; r < n; ++r) {
      std::vector<double> f(static_cast<size_t>(cfg.dim));
      for (int64_t d = 0; d < cfg.dim; ++d) {
        f[static_cast<size_t>(d)] = feats.at(r * cfg.dim + d);
      }
      ds.features.push_back(std::move(f));
    }
  }
  return ds;
}

double linear_probe(const ProbeDataset& train, const ProbeDataset& val) {
  if (train.size() == 0 || val.size() == 0) {
    throw std::invalid_argument("linear_probe: empty dataset");
  }
  std::set<int32_t> distinct(train.labels.begin(), train.labels.end());
  if (distinct.size() < 2) {
    throw std::invalid_argument("linear_probe: need at least 2 classes, got " +
                                std::to_string(distinct.size()));
  }
  const int64_t d = train.dim;
  const int64_t k =
      1 + *std::max_element(train.labels.begin(), train.labels.end());
  const int64_t n = static_cast<int64_t>(train.size());

  std::vector<double> w(static_cast<size_t>(d * k), 0.0);
  std::vector<double> b(static_cast<size_t>(k), 0.0);
  std::vector<double> probs(static_cast<size_t>(n * k));
  std::vector<double> gw(static_cast<size_t>(d * k));
  std::vector<double> gb(static_cast<size_t>(k));

  constexpr int kIters = 500;
  constexpr double kLr = 0.1;
  for (int it = 0; it < kIters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const std::vector<double>& x = train.features[static_cast<size_t>(i)];
      double* p = probs.data() + i * k;
      for (int64_t c = 0; c < k; ++c) {
        double z = b[static_cast<size_t>(c)];
        for (int64_t j = 0; j < d; ++j) {
          z += x[static_cast<size_t>(j)] * w[static_cast<size_t>(j * k + c)];
        }
        p[c] = z;
      }
      double zmax = p[0];
      for (int64_t c = 1; c < k; ++c) zmax = std::max(zmax, p[c]);
      double zsum = 0.0;
      for (int64_t c = 0; c < k; ++c) {
        p[c] = std::exp(p[c] - zmax);
        zsum += p[c];
      }
      for (int64_t c = 0; c < k; ++c) p[c] /= zsum;
      // G = (P - Y) / n
      for (int64_t c = 0; c < k; ++c) {
        const double g =
            (p[c] - (train.labels[static_cast<size_t>(i)] == c ? 1.0 : 0.0)) /
            static_cast<double>(n);
        gb[static_cast<size_t>(c)] += g;
        for (int64_t j = 0; j < d; ++j) {
          gw[static_cast<size_t>(j * k + c)] += x[static_cast<size_t>(j)] * g;
        }
      }
    }
    for (size_t i = 0; i < w.size(); ++i) w[i] -= kLr * gw[i];
    for (size_t i = 0; i < b.size(); ++i) b[i] -= kLr * gb[i];
  }

  int64_t correct = 0;
  for (size_t i = 0; i < val.size(); ++i) {
    const std::vector<double>& x = val.features[i];
    int64_t best = 0;
    double best_z = -1e300;
    for (int64_t c = 0; c < k; ++c) {
      double z = b[static_cast<size_t>(c)];
      for (int64_t j = 0; j < d; ++j) {
        z += x[static_cast<size_t>(j)] * w[static_cast<size_t>(j * k + c)];
      }
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (best == val.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

double probe_encoder(const EncoderParams& enc, const TrainConfig& cfg) {
  const ProbeDataset train =
      extract_embeddings(enc, cfg, kProbeTrainIdBase, cfg.probe_train_clips);
  const ProbeDataset val =
      extract_embeddings(enc, cfg, kProbeValIdBase, cfg.probe_val_clips);
  return linear_probe(train, val);
}

double probe_checkpoint_file(const std::string& checkpoint_path,
                             const TrainConfig& cfg) {
  const TrainState state = load_train_state(checkpoint_path, cfg);
  return probe_encoder(state.enc, cfg);
}

}  // namespace cep
