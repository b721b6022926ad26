#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "cep/ablate.hpp"
#include "cep/config.hpp"
#include "cep/gradcheck.hpp"
#include "cep/probe.hpp"
#include "cep/synthvideo.hpp"
#include "cep/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_pretrain(const std::string& config_path, const std::string& out_dir,
                 bool force) {
  const cep::TrainConfig cfg = cep::load_config_file(config_path);
  const cep::PretrainResult res = cep::run_pretrain(cfg, out_dir, force);
  std::printf("checkpoint: %s\n", res.final_checkpoint.c_str());
  std::printf("metrics: %s\n", res.metrics_path.c_str());
  return 0;
}

int cmd_probe(const std::string& checkpoint, const std::string& config_path,
              bool random_init) {
  const cep::TrainConfig cfg = cep::load_config_file(config_path);
  double acc;
  if (random_init) {
    const cep::EncoderParams enc = cep::EncoderParams::init(
        cfg.encoder_config(), cfg.base_seed, cep::Precision::f32);
    acc = cep::probe_encoder(enc, cfg);
  } else {
    if (checkpoint.empty()) {
      throw std::invalid_argument(
          "probe: --checkpoint required unless --random-init");
    }
    acc = cep::probe_checkpoint_file(checkpoint, cfg);
  }
  std::printf("top1_accuracy = %.6f\n", acc);
  return 0;
}

int cmd_gradcheck(const std::string& op, bool full) {
  std::vector<cep::GradCheckCase> cases = cep::builtin_gradcheck_cases();
  if (!op.empty()) {
    std::vector<cep::GradCheckCase> picked;
    for (auto& c : cases) {
      if (c.name == op) picked.push_back(std::move(c));
    }
    if (op == "combined_cep_loss") {
      picked.push_back(cep::combined_loss_gradcheck_case());
    }
    if (picked.empty()) {
      std::string names;
      for (const auto& c : cases) names += c.name + " ";
      throw std::invalid_argument("gradcheck: unknown op '" + op +
                                  "', known: " + names + "combined_cep_loss");
    }
    cases = std::move(picked);
  } else if (full) {
    cases.push_back(cep::combined_loss_gradcheck_case());
  }
  bool ok = true;
  for (const auto& c : cases) {
    const double err = cep::grad_check(c.fn, c.inputs, 1e-4);
    const bool pass = err < c.tolerance;
    ok = ok && pass;
    std::printf("%-20s max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(), err,
                c.tolerance, pass ? "PASS" : "FAIL");
  }
  std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 2;
}

int cmd_ablate(const std::string& study, const std::string& config_path,
               const std::string& out_dir, int64_t seeds, bool force) {
  const cep::TrainConfig cfg = cep::load_config_file(config_path);
  const cep::AblationReport report =
      cep::ablate(study, cfg, out_dir, seeds, force);
  const std::string table = report.to_table();
  std::printf("%s", table.c_str());
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/" + study + "_report.txt");
    f << table;
  }
  {
    std::ofstream f(out_dir + "/" + study + "_rows.jsonl");
    f << report.to_jsonl();
  }
  return 0;
}

int cmd_gendata(uint64_t seed, int64_t count, const std::string& out_dir,
                int64_t length) {
  fs::create_directories(out_dir);
  for (int64_t i = 0; i < count; ++i) {
    const int32_t class_id = static_cast<int32_t>(i % cep::kNumClasses);
    const cep::VideoClip clip =
        cep::generate_clip(seed + static_cast<uint64_t>(i), class_id, length,
                           i, cep::Precision::f32);
    char dir[256];
    std::snprintf(dir, sizeof(dir), "%s/clip%03lld_%s", out_dir.c_str(),
                  static_cast<long long>(i), cep::class_name(class_id));
    fs::create_directories(dir);
    const int64_t frame_elems = cep::kFrameH * cep::kFrameW * cep::kFrameC;
    for (int64_t t = 0; t < clip.length(); ++t) {
      cep::Tensor frame({cep::kFrameH, cep::kFrameW, cep::kFrameC},
                        clip.frames.precision());
      for (int64_t j = 0; j < frame_elems; ++j) {
        frame.set(j, clip.frames.at(t * frame_elems + j));
      }
      char path[320];
      std::snprintf(path, sizeof(path), "%s/frame%04lld.ppm", dir,
                    static_cast<long long>(t));
      cep::write_ppm(frame, path);
    }
  }
  std::printf("wrote %lld clips to %s\n", static_cast<long long>(count),
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  cep::runtime_tune();
  CLI::App app{"cycle-encoding pretraining on synthetic video"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, study, op;
  bool force = false, random_init = false, full = false;
  uint64_t seed = 1;
  int64_t count = 8, length = 48, seeds = 3;

  auto* pre = app.add_subcommand("pretrain", "run self-supervised pretraining");
  pre->add_option("--config", config_path, "config file")->required();
  pre->add_option("--out", out_dir, "output directory")->required();
  pre->add_flag("--force", force, "overwrite existing checkpoints");

  auto* probe = app.add_subcommand("probe", "linear probe on frozen features");
  probe->add_option("--checkpoint", checkpoint, "training checkpoint");
  probe->add_option("--config", config_path, "config file")->required();
  probe->add_flag("--random-init", random_init,
                  "probe a freshly initialized encoder");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--op", op, "check one op by name");
  gc->add_flag("--full", full, "include the combined loss model");

  auto* ab = app.add_subcommand("ablate", "run an ablation study");
  ab->add_option("--study", study, "study name")->required();
  ab->add_option("--config", config_path, "base config file")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--seeds", seeds, "seeds per row");
  ab->add_flag("--force", force, "overwrite existing checkpoints");

  auto* gd = app.add_subcommand("gen-data", "dump synthetic clips as PPM");
  gd->add_option("--seed", seed, "base seed")->required();
  gd->add_option("--count", count, "number of clips")->required();
  gd->add_option("--out", out_dir, "output directory")->required();
  gd->add_option("--length", length, "frames per clip");

  try {
    app.parse(argc, argv);
    if (pre->parsed()) return cmd_pretrain(config_path, out_dir, force);
    if (probe->parsed()) return cmd_probe(checkpoint, config_path, random_init);
    if (gc->parsed()) return cmd_gradcheck(op, full);
    if (ab->parsed()) return cmd_ablate(study, config_path, out_dir, seeds, force);
    if (gd->parsed()) return cmd_gendata(seed, count, out_dir, length);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
