#include "cep/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cep/checkpoint.hpp"
#include "cep/losses.hpp"

namespace cep {

namespace {

namespace fs = std::filesystem;

double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double v = t.at(i);
    s += v * v;
  }
  return s;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Copies a (T,H,W,C) snippet into row r of a (M, S*T, H, W, C) group
// tensor at chunk slot s.
void place_snippet(Tensor& group, const Tensor& snip, int64_t r, int64_t s,
                   int64_t chunks) {
  const int64_t elems = snip.numel();
  const int64_t base = (r * chunks + s) * elems;
  for (int64_t j = 0; j < elems; ++j) group.set(base + j, snip.at(j));
}

struct ParamRef {
  std::string key;  // velocity/checkpoint key, e.g. "enc/conv1.w"
  std::string name;
  Tensor* tensor;
};

std::vector<ParamRef> trainable_params(TrainState& state) {
  std::vector<ParamRef> out;
  state.enc.for_each([&](const std::string& n, Tensor& t) {
    out.push_back({"enc/" + n, n, &t});
  });
  state.mu.for_each([&](const std::string& n, Tensor& t) {
    out.push_back({"mu/" + n, n, &t});
  });
  if (state.cfg.loss_mode != LossMode::kNceSharedPredictor) {
    state.ups.for_each([&](const std::string& n, Tensor& t) {
      out.push_back({"ups/" + n, n, &t});
    });
  }
  return out;
}

}  // namespace

void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                double momentum, double weight_decay) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw std::invalid_argument(
        "sgd_update: shape mismatch, param " + shape_str(param.shape()) +
        " grad " + shape_str(grad.shape()) + " velocity " +
        shape_str(velocity.shape()));
  }
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double v = momentum * velocity.at(i) + grad.at(i) +
                     weight_decay * param.at(i);
    velocity.set(i, v);
    param.set(i, param.at(i) - lr * velocity.at(i));
  }
}

bool decays(const std::string& param_name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return param_name.size() >= s.size() &&
           param_name.compare(param_name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".w") || ends_with(".scale");
}

TrainState TrainState::init(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st{cfg,
                0,
                EncoderParams::init(cfg.encoder_config(), cfg.base_seed,
                                    Precision::f32),
                EncoderParams{},
                PredictorParams::init(cfg.predictor_config(),
                                      rng::mix(cfg.base_seed, 0x6d75),
                                      Precision::f32),
                PredictorParams::init(cfg.predictor_config(),
                                      rng::mix(cfg.base_seed, 0x757073),
                                      Precision::f32),
                {},
                SnapshotRing(cfg.k_delay, cfg.s_snap),
                MemoryQueue(cfg.queue_capacity)};
  st.proxy = st.enc;  // proxy starts as an exact copy
  auto add_velocity = [&](const std::string& prefix, EncoderParams& p) {
    p.for_each([&](const std::string& n, Tensor& t) {
      st.velocity.emplace(prefix + n, Tensor(t.shape(), t.precision()));
    });
  };
  add_velocity("enc/", st.enc);
  st.mu.for_each([&](const std::string& n, Tensor& t) {
    st.velocity.emplace("mu/" + n, Tensor(t.shape(), t.precision()));
  });
  st.ups.for_each([&](const std::string& n, Tensor& t) {
    st.velocity.emplace("ups/" + n, Tensor(t.shape(), t.precision()));
  });
  st.ring.push(0, st.enc);
  return st;
}

std::vector<BatchItem> assemble_batch(const TrainConfig& cfg, int64_t step) {
  std::vector<BatchItem> batch;
  batch.reserve(static_cast<size_t>(cfg.batch_triples));
  const int64_t clip_len = default_clip_length(cfg.t_snip, cfg.stride);
  for (int64_t i = 0; i < cfg.batch_triples; ++i) {
    const int64_t clip_index = (step - 1) * cfg.batch_triples + i;
    const int32_t class_id = static_cast<int32_t>(clip_index % kNumClasses);
    const VideoClip clip =
        generate_clip(cfg.base_seed + static_cast<uint64_t>(clip_index),
                      class_id, clip_len, clip_index, Precision::f32);
    Rng triple_rng = Rng::keyed(cfg.base_seed, rng::kTriple, clip_index);
    SnippetTriple triple =
        sample_triple(clip, cfg.t_snip, cfg.stride, triple_rng);

    Rng hard_rng = Rng::keyed(cfg.base_seed, rng::kHardNeg, clip_index);
    const std::vector<int64_t> hard_starts =
        cfg.n_hard > 0
            ? sample_hard_windows(clip_len, cfg.t_snip, cfg.stride,
                                  triple.start_frame, cfg.n_hard, hard_rng)
            : std::vector<int64_t>{};

    BatchItem item;
    item.video_id = clip_index;
    auto prep = [&](const Tensor& snip, int64_t slot) {
      if (!cfg.obfuscate) return snip;
      Rng aug_rng = Rng::keyed(cfg.base_seed, rng::kAug, clip_index, slot);
      return obfuscate(snip, draw_augmentation(aug_rng));
    };
    item.past = prep(triple.past, 0);
    item.current = prep(triple.current, 1);
    item.future = prep(triple.future, 2);
    for (size_t j = 0; j < hard_starts.size(); ++j) {
      const Tensor win = clip_window(clip, hard_starts[j], cfg.t_snip,
                                     cfg.stride);
      item.hard_snips.push_back(prep(win, 3 + static_cast<int64_t>(j)));
    }
    batch.push_back(std::move(item));
  }
  return batch;
}

MetricsRecord train_step(TrainState& state, const std::vector<BatchItem>& batch,
                         StopGradProbe* probe) {
  const auto t_start = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state.cfg;
  const Precision prec = Precision::f32;
  const EncoderConfig ecfg = cfg.encoder_config();
  const int64_t step = state.step + 1;
  const int64_t m = static_cast<int64_t>(batch.size());
  if (m == 0) {
    throw std::invalid_argument("train_step: empty batch");
  }

  Tensor x_live({m, 3 * cfg.t_snip, kFrameH, kFrameW, kFrameC}, prec);
  for (int64_t r = 0; r < m; ++r) {
    const BatchItem& it = batch[static_cast<size_t>(r)];
    place_snippet(x_live, it.past, r, 0, 3);
    place_snippet(x_live, it.current, r, 1, 3);
    place_snippet(x_live, it.future, r, 2, 3);
  }

  Tape tape(prec);
  EncoderVars enc_vars = leaf_encoder(tape, state.enc, true);
  PredictorVars mu_vars = leaf_predictor(tape, state.mu, true);
  const bool shared = cfg.loss_mode == LossMode::kNceSharedPredictor;
  PredictorVars ups_vars =
      shared ? mu_vars : leaf_predictor(tape, state.ups, true);

  Var x = tape.leaf(x_live, false);
  std::vector<Var> live_chunks =
      encode_chunks(tape, enc_vars, ecfg, x, 3, cfg.norm_mode);
  TripleEmbeddings live{live_chunks[0], live_chunks[1], live_chunks[2]};

  TripleEmbeddings targets;
  std::vector<Var> target_probes;
  if (cfg.target_mode == TargetMode::kDelayed) {
    const EncoderParams& delayed = state.ring.delayed(step, cfg.k_delay);
    std::vector<Tensor> vals =
        encode_chunks_values(delayed, x_live, 3, cfg.norm_mode, prec);
    Var p = tape.leaf(vals[0], true);
    Var c = tape.leaf(vals[1], true);
    Var f = tape.leaf(vals[2], true);
    target_probes = {p, c, f};
    targets.past = stop_gradient(p);
    targets.current = stop_gradient(c);
    targets.future = stop_gradient(f);
  } else {
    targets.past = stop_gradient(live.past);
    targets.current = stop_gradient(live.current);
    targets.future = stop_gradient(live.future);
  }

  // hard negatives: one live-encoder batch over all same-clip windows
  std::vector<std::vector<Tensor>> hard_feats(static_cast<size_t>(m));
  if (cfg.n_hard > 0) {
    Tensor hard_batch({m * cfg.n_hard, cfg.t_snip, kFrameH, kFrameW, kFrameC},
                      prec);
    for (int64_t r = 0; r < m; ++r) {
      const BatchItem& it = batch[static_cast<size_t>(r)];
      for (int64_t j = 0; j < cfg.n_hard; ++j) {
        place_snippet(hard_batch, it.hard_snips[static_cast<size_t>(j)],
                      r * cfg.n_hard + j, 0, 1);
      }
    }
    Tensor feats =
        encode_chunks_values(state.enc, hard_batch, 1, cfg.norm_mode, prec)[0];
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t j = 0; j < cfg.n_hard; ++j) {
        Tensor f({cfg.dim}, prec);
        for (int64_t d = 0; d < cfg.dim; ++d) {
          f.set(d, feats.at((r * cfg.n_hard + j) * cfg.dim + d));
        }
        hard_feats[static_cast<size_t>(r)].push_back(std::move(f));
      }
    }
  }

  std::vector<NegativeSet> negatives;
  negatives.reserve(static_cast<size_t>(m));
  for (int64_t r = 0; r < m; ++r) {
    Rng easy_rng = Rng::keyed(cfg.base_seed, rng::kEasyNeg, step, r);
    negatives.push_back(build_negatives(
        tape, state.queue, batch[static_cast<size_t>(r)].video_id,
        hard_feats[static_cast<size_t>(r)], cfg.n_easy, cfg.strategy,
        state.proxy, cfg.norm_mode, easy_rng));
  }

  NoiseSource noise(rng::mix(rng::mix(cfg.base_seed, rng::kNoise),
                             static_cast<uint64_t>(step)),
                    cfg.predictor_config().noise_dim, true);

  CycleLossResult cyc =
      cycle_loss(tape, targets, live, mu_vars, ups_vars, noise);
  ContrastiveConfig ccfg;
  ccfg.xi = cfg.xi;
  ccfg.four_pairs = cfg.four_positive_pairs;
  Var nce = contrastive_loss(tape, targets, live, mu_vars, ups_vars, noise,
                             negatives, ccfg);

  MetricsRecord rec;
  rec.step = step;
  rec.loss_cycle = tape.value(cyc.total).item();
  rec.loss_nce = tape.value(nce).item();
  for (size_t i = 0; i < cyc.terms.size(); ++i) {
    rec.cycle_terms[i] = tape.value(cyc.terms[i]).item();
  }
  rec.loss_total = cfg.lambda_loss * rec.loss_cycle + rec.loss_nce;
  if (!std::isfinite(rec.loss_cycle)) {
    throw std::runtime_error("train_step: non-finite loss_cycle at step " +
                             std::to_string(step));
  }
  if (!std::isfinite(rec.loss_nce)) {
    throw std::runtime_error("train_step: non-finite loss_nce at step " +
                             std::to_string(step));
  }

  Var objective;
  switch (cfg.loss_mode) {
    case LossMode::kBoth:
      objective = combined_loss(cyc.total, nce, cfg.lambda_loss);
      break;
    case LossMode::kCycleOnly:
      objective = scale(cyc.total, cfg.lambda_loss);
      break;
    case LossMode::kNceOnly:
    case LossMode::kNceSharedPredictor:
      objective = nce;
      break;
  }

  GradientMap grads = tape.backward(objective);

  if (probe) {
    auto max_abs = [&grads](const std::vector<Var>& leaves) {
      double worst = 0.0;
      for (Var v : leaves) {
        const Tensor& g = grads.at(v);
        for (int64_t i = 0; i < g.numel(); ++i) {
          worst = std::max(worst, std::abs(g.at(i)));
        }
      }
      return worst;
    };
    for (const NegativeSet& ns : negatives) {
      probe->max_negative_grad_abs =
          std::max(probe->max_negative_grad_abs, max_abs(ns.probes));
      probe->probed_negatives +=
          static_cast<int64_t>(ns.probes.size());
    }
    probe->max_target_grad_abs = max_abs(target_probes);
    probe->probed_targets = static_cast<int64_t>(target_probes.size());
  }

  // collect leaf vars in the same order the parameter structs visit
  std::vector<Var> leaf_order = enc_vars.vars;
  leaf_order.insert(leaf_order.end(), mu_vars.vars.begin(),
                    mu_vars.vars.end());
  if (!shared) {
    leaf_order.insert(leaf_order.end(), ups_vars.vars.begin(),
                      ups_vars.vars.end());
  }
  std::vector<ParamRef> params = trainable_params(state);
  if (params.size() != leaf_order.size()) {
    throw std::logic_error("train_step: parameter bookkeeping mismatch");
  }
  double grad_sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = grads.at(leaf_order[i]);
    grad_sq += sum_squares(g);
    Tensor& vel = state.velocity.at(params[i].key);
    sgd_update(*params[i].tensor, g, vel, cfg.lr, cfg.sgd_momentum,
               decays(params[i].name) ? cfg.weight_decay : 0.0);
  }
  rec.grad_norm = std::sqrt(grad_sq);

  momentum_update(state.proxy, state.enc, cfg.m);

  // enqueue the step's triple snippets; static strategy caches proxy
  // features at enqueue time
  if (cfg.strategy == BankStrategy::kStatic) {
    Tensor enq({3 * m, cfg.t_snip, kFrameH, kFrameW, kFrameC}, prec);
    for (int64_t r = 0; r < m; ++r) {
      const BatchItem& it = batch[static_cast<size_t>(r)];
      place_snippet(enq, it.past, 3 * r, 0, 1);
      place_snippet(enq, it.current, 3 * r + 1, 0, 1);
      place_snippet(enq, it.future, 3 * r + 2, 0, 1);
    }
    Tensor feats =
        encode_chunks_values(state.proxy, enq, 1, cfg.norm_mode, prec)[0];
    for (int64_t r = 0; r < m; ++r) {
      const BatchItem& it = batch[static_cast<size_t>(r)];
      const Tensor* snips[3] = {&it.past, &it.current, &it.future};
      for (int64_t s = 0; s < 3; ++s) {
        Tensor f({cfg.dim}, prec);
        for (int64_t d = 0; d < cfg.dim; ++d) {
          f.set(d, feats.at((3 * r + s) * cfg.dim + d));
        }
        state.queue.enqueue(*snips[s], it.video_id, std::move(f));
      }
    }
  } else {
    for (const BatchItem& it : batch) {
      state.queue.enqueue(it.past, it.video_id);
      state.queue.enqueue(it.current, it.video_id);
      state.queue.enqueue(it.future, it.video_id);
    }
  }

  state.step = step;
  if (step % cfg.s_snap == 0) {
    state.ring.push(step, state.enc);
  }

  rec.queue_fill = static_cast<int64_t>(state.queue.size());
  rec.mu_identity_gap = identity_gap(state.mu, tape.value(live.current),
                                     noise.fork(200), prec);
  rec.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
  return rec;
}

void save_train_state(const TrainState& state, const std::string& path) {
  CheckpointData data;
  auto add_params = [&data](const std::string& prefix,
                            const EncoderParams& p) {
    p.for_each([&](const std::string& n, const Tensor& t) {
      data.tensors.emplace_back(prefix + n, t.to(Precision::f32));
    });
  };
  add_params("enc/", state.enc);
  add_params("proxy/", state.proxy);
  state.mu.for_each([&](const std::string& n, const Tensor& t) {
    data.tensors.emplace_back("mu/" + n, t.to(Precision::f32));
  });
  state.ups.for_each([&](const std::string& n, const Tensor& t) {
    data.tensors.emplace_back("ups/" + n, t.to(Precision::f32));
  });
  for (const auto& [key, t] : state.velocity) {
    data.tensors.emplace_back("vel/" + key, t.to(Precision::f32));
  }
  for (size_t i = 0; i < state.ring.size(); ++i) {
    const std::string prefix = "ring/" + std::to_string(i) + "/";
    state.ring.entry_params(i).for_each(
        [&](const std::string& n, const Tensor& t) {
          data.tensors.emplace_back(prefix + n, t.to(Precision::f32));
        });
    data.meta["ring." + std::to_string(i) + ".step"] =
        std::to_string(state.ring.entry_step(i));
  }
  data.meta["ring.count"] = std::to_string(state.ring.size());
  data.meta["step"] = std::to_string(state.step);
  data.meta["config_hash"] = hex64(state.cfg.hash());
  data.meta["base_seed"] = std::to_string(state.cfg.base_seed);
  data.meta["queue_fill"] = std::to_string(state.queue.size());
  save_checkpoint_file(path, data);
}

TrainState load_train_state(const std::string& path, const TrainConfig& cfg) {
  const CheckpointData data = load_checkpoint_file(path);
  const auto hash_it = data.meta.find("config_hash");
  if (hash_it == data.meta.end() || hash_it->second != hex64(cfg.hash())) {
    throw std::invalid_argument(
        "checkpoint: config hash mismatch, expected " + hex64(cfg.hash()) +
        " got " + (hash_it == data.meta.end() ? "<missing>" : hash_it->second));
  }
  TrainState st = TrainState::init(cfg);
  auto load_params = [&data](const std::string& prefix, EncoderParams& p) {
    p.for_each([&](const std::string& n, Tensor& t) {
      t = data.tensor(prefix + n);
    });
  };
  load_params("enc/", st.enc);
  load_params("proxy/", st.proxy);
  st.mu.for_each([&](const std::string& n, Tensor& t) {
    t = data.tensor("mu/" + n);
  });
  st.ups.for_each([&](const std::string& n, Tensor& t) {
    t = data.tensor("ups/" + n);
  });
  for (auto& [key, t] : st.velocity) {
    t = data.tensor("vel/" + key);
  }
  st.step = std::stoll(data.meta.at("step"));
  // rebuild the ring; queue contents are not persisted (rewarm)
  st.ring = SnapshotRing(cfg.k_delay, cfg.s_snap);
  const size_t ring_count =
      static_cast<size_t>(std::stoull(data.meta.at("ring.count")));
  for (size_t i = 0; i < ring_count; ++i) {
    EncoderParams p =
        EncoderParams::init(cfg.encoder_config(), cfg.base_seed,
                            Precision::f32);
    const std::string prefix = "ring/" + std::to_string(i) + "/";
    p.for_each([&](const std::string& n, Tensor& t) {
      t = data.tensor(prefix + n);
    });
    st.ring.push(std::stoll(data.meta.at("ring." + std::to_string(i) + ".step")),
                 p);
  }
  return st;
}

PretrainResult run_pretrain(const TrainConfig& cfg, const std::string& out_dir,
                            bool force) {
  cfg.validate();
  if (cfg.steps * cfg.batch_triples >= kProbeTrainIdBase) {
    throw std::invalid_argument(
        "run_pretrain: pretraining pool would collide with probe pools");
  }
  fs::create_directories(out_dir);
  PretrainResult result;
  result.final_checkpoint = out_dir + "/ckpt_final.cepc";
  result.metrics_path = out_dir + "/metrics.jsonl";
  if (fs::exists(result.final_checkpoint) && !force) {
    throw std::invalid_argument("run_pretrain: " + result.final_checkpoint +
                                " exists; pass force to overwrite");
  }
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) {
    throw std::runtime_error("run_pretrain: cannot write " +
                             result.metrics_path);
  }
  TrainState state = TrainState::init(cfg);
  for (int64_t s = 1; s <= cfg.steps; ++s) {
    const std::vector<BatchItem> batch = assemble_batch(cfg, s);
    const MetricsRecord rec = train_step(state, batch);
    metrics << to_json_line(rec) << "\n";
    if (s % 500 == 0 && s != cfg.steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt_step%05lld.cepc",
                    static_cast<long long>(s));
      const std::string path = out_dir + name;
      save_train_state(state, path);
      result.periodic_checkpoints.push_back(path);
    }
  }
  metrics.flush();
  if (!metrics) {
    throw std::runtime_error("run_pretrain: metrics write failed for " +
                             result.metrics_path);
  }
  save_train_state(state, result.final_checkpoint);
  return result;
}

}  // namespace cep
