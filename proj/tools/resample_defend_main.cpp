#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rsd/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;
constexpr int kExitIo = 4;

int run(int argc, char** argv) {
  CLI::App app{"resample-defend: image-resampling adversarial defense"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false, adaptive = false;
  std::string out_dir;
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_flag("--adaptive", adaptive, "evaluate under the BPDA adaptive adversary");
  app.add_option("--out", out_dir, "override output directory");

  auto* c_train = app.add_subcommand("train-classifier", "train the victim classifier");
  auto* c_adv = app.add_subcommand("make-adv", "generate and cache adversarial training pairs");
  auto* c_recon = app.add_subcommand("train-recon", "stage 1: train the implicit representation");
  auto* c_sn = app.add_subcommand("train-samplenet", "stage 2: train SampleNet");
  auto* c_eval = app.add_subcommand("eval", "evaluate SA/RA for the configured defenses");
  auto* c_res = app.add_subcommand("resample", "apply a defense to a single PPM/PGM image");

  std::string input_path, output_path;
  c_res->add_option("--input", input_path, "input image (PPM/PGM)")->required();
  c_res->add_option("--output", output_path, "output image path")->required();

  CLI11_PARSE(app, argc, argv);

  rsd::ExperimentConfig cfg = rsd::ExperimentConfig::from_file(config_path);
  if (seed_set) cfg.seed = seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (adaptive) cfg.eval.adaptive = true;

  if (c_train->parsed()) {
    std::cout << "classifier checkpoint: " << rsd::cmd_train_classifier(cfg) << "\n";
  } else if (c_adv->parsed()) {
    std::cout << "adversarial cache: " << rsd::cmd_make_adv(cfg) << "\n";
  } else if (c_recon->parsed()) {
    std::cout << "implicit checkpoint: " << rsd::cmd_train_recon(cfg) << "\n";
  } else if (c_sn->parsed()) {
    std::cout << "samplenet checkpoint: " << rsd::cmd_train_samplenet(cfg) << "\n";
  } else if (c_eval->parsed()) {
    rsd::EvalReport report = rsd::cmd_eval(cfg);
    std::cout << report.to_csv();
  } else if (c_res->parsed()) {
    rsd::cmd_resample(cfg, input_path, output_path);
    std::cout << "wrote " << output_path << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rsd::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const rsd::TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const rsd::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const rsd::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
