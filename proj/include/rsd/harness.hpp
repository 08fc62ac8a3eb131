#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsd/attacks.hpp"
#include "rsd/classifier.hpp"
#include "rsd/dataset.hpp"
#include "rsd/recon.hpp"
#include "rsd/sampler.hpp"

namespace rsd {

struct DatasetSpec {
  std::string kind = "synthdigits";  // mnist_idx | cifar10 | synthetic | synthdigits
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_batches, test_batches;  // cifar10
  std::int64_t n_train = 6000, n_test = 1000;            // generated kinds
  std::int64_t limit_train = 0, limit_test = 0;          // 0 = all
};

struct ClassifierSpec {
  std::string arch = "small";  // small | tiny
  std::int64_t epochs = 3;
  float lr = 1e-3f;
  std::int64_t batch_size = 128;
  std::string checkpoint = "classifier.ckpt";
};

struct ReconSpec {
  std::string backend = "implicit";  // nearest | bilinear | implicit
  std::string task = "adv_denoise";
  std::int64_t blocks = 4, channels = 32, mlp_hidden = 64;
  std::int64_t epochs = 3, batch_size = 16;
  float lr = 1e-4f;
  std::int64_t limit_train = 2048;
  float sigma = 10.0f / 255.0f;
  float mask_lo = 0.10f, mask_hi = 0.25f;
  std::int64_t down_factor = 2;
  std::string checkpoint = "implicit.ckpt";
  std::string adv_cache;  // directory written by make-adv; empty = attack on the fly
};

struct SampleNetSpec {
  float s_max = 2.0f;
  float lr = 1e-4f;
  std::int64_t steps = 256, batch_size = 8;
  std::int64_t limit_train = 1024;
  std::string checkpoint = "samplenet.ckpt";
};

struct EvalSpec {
  std::vector<std::string> defenses{"none",          "nearest_fixed",    "bilinear_fixed",
                                    "nearest_uniform", "bilinear_uniform", "implicit_only",
                                    "irad"};
  float fixed_d = 1.5f;
  float uniform_gamma = 1.5f;
  std::int64_t n_eval = 512;
  std::int64_t batch_size = 64;
  bool adaptive = false;
  std::int64_t adaptive_n_eval = 0;  // 0 = same as n_eval
  std::int64_t dump_images = 0;
  std::string report_stem = "report";
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/exp";
  DatasetSpec dataset;
  ClassifierSpec classifier;
  AttackConfig attack;
  std::string adv_out = "adv_train";
  ReconSpec recon;
  SampleNetSpec samplenet;
  EvalSpec eval;
  std::string resample_defense = "bilinear_fixed";

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);
  std::string canonical_json() const;
  std::string config_hash() const;

  std::string resolve(const std::string& path) const;  // out_dir-relative unless absolute
};

struct EvalRow {
  std::string defense;
  double sa = 0.0, ra = 0.0, avg = 0.0;
  std::int64_t n_clean = 0, n_adv = 0;
  double wall_ms = 0.0;  // recorded to the timings sidecar, not the report
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_hash;
  std::string attack_desc;
  bool adaptive = false;

  std::string to_json() const;  // deterministic; no timing fields
  std::string to_csv() const;
};

LabeledDataset load_split(const DatasetSpec& spec, bool train, std::uint64_t seed);

std::string cmd_train_classifier(const ExperimentConfig& cfg);
std::string cmd_make_adv(const ExperimentConfig& cfg);
std::string cmd_train_recon(const ExperimentConfig& cfg);
std::string cmd_train_samplenet(const ExperimentConfig& cfg);
EvalReport cmd_eval(const ExperimentConfig& cfg);
void cmd_resample(const ExperimentConfig& cfg, const std::string& input_path,
                  const std::string& output_path);

}  // namespace rsd
