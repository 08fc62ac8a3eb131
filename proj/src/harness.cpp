#include "rsd/harness.hpp"

#include <chrono>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rsd/digits.hpp"
#include "rsd/io.hpp"

#include <json.hpp>

namespace rsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_f(const json& j, const char* key, float& out) {
  if (j.contains(key)) out = j.at(key).get<float>();
}

json attack_to_json(const AttackConfig& a) {
  return json{{"kind", AttackConfig::kind_to_string(a.kind)},
              {"epsilon", a.epsilon},
              {"steps", a.steps},
              {"step_size", a.step_size},
              {"random_init", a.random_init}};
}

AttackConfig attack_from_json(const json& j) {
  AttackConfig a;
  if (j.contains("kind")) a.kind = AttackConfig::kind_from_string(j.at("kind").get<std::string>());
  maybe_f(j, "epsilon", a.epsilon);
  maybe(j, "steps", a.steps);
  maybe_f(j, "step_size", a.step_size);
  maybe(j, "random_init", a.random_init);
  a.validate();
  return a;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "out_dir", c.out_dir);
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    maybe(d, "kind", c.dataset.kind);
    maybe(d, "train_images", c.dataset.train_images);
    maybe(d, "train_labels", c.dataset.train_labels);
    maybe(d, "test_images", c.dataset.test_images);
    maybe(d, "test_labels", c.dataset.test_labels);
    maybe(d, "train_batches", c.dataset.train_batches);
    maybe(d, "test_batches", c.dataset.test_batches);
    maybe(d, "n_train", c.dataset.n_train);
    maybe(d, "n_test", c.dataset.n_test);
    maybe(d, "limit_train", c.dataset.limit_train);
    maybe(d, "limit_test", c.dataset.limit_test);
  }
  if (j.contains("classifier")) {
    const json& d = j["classifier"];
    maybe(d, "arch", c.classifier.arch);
    maybe(d, "epochs", c.classifier.epochs);
    maybe_f(d, "lr", c.classifier.lr);
    maybe(d, "batch_size", c.classifier.batch_size);
    maybe(d, "checkpoint", c.classifier.checkpoint);
  }
  if (j.contains("attack")) c.attack = attack_from_json(j["attack"]);
  maybe(j, "adv_out", c.adv_out);
  if (j.contains("recon")) {
    const json& d = j["recon"];
    maybe(d, "backend", c.recon.backend);
    maybe(d, "task", c.recon.task);
    maybe(d, "blocks", c.recon.blocks);
    maybe(d, "channels", c.recon.channels);
    maybe(d, "mlp_hidden", c.recon.mlp_hidden);
    maybe(d, "epochs", c.recon.epochs);
    maybe(d, "batch_size", c.recon.batch_size);
    maybe_f(d, "lr", c.recon.lr);
    maybe(d, "limit_train", c.recon.limit_train);
    maybe_f(d, "sigma", c.recon.sigma);
    maybe_f(d, "mask_lo", c.recon.mask_lo);
    maybe_f(d, "mask_hi", c.recon.mask_hi);
    maybe(d, "down_factor", c.recon.down_factor);
    maybe(d, "checkpoint", c.recon.checkpoint);
    maybe(d, "adv_cache", c.recon.adv_cache);
  }
  if (j.contains("samplenet")) {
    const json& d = j["samplenet"];
    maybe_f(d, "s_max", c.samplenet.s_max);
    maybe_f(d, "lr", c.samplenet.lr);
    maybe(d, "steps", c.samplenet.steps);
    maybe(d, "batch_size", c.samplenet.batch_size);
    maybe(d, "limit_train", c.samplenet.limit_train);
    maybe(d, "checkpoint", c.samplenet.checkpoint);
  }
  if (j.contains("eval")) {
    const json& d = j["eval"];
    maybe(d, "defenses", c.eval.defenses);
    maybe_f(d, "fixed_d", c.eval.fixed_d);
    maybe_f(d, "uniform_gamma", c.eval.uniform_gamma);
    maybe(d, "n_eval", c.eval.n_eval);
    maybe(d, "batch_size", c.eval.batch_size);
    maybe(d, "adaptive", c.eval.adaptive);
    maybe(d, "adaptive_n_eval", c.eval.adaptive_n_eval);
    maybe(d, "dump_images", c.eval.dump_images);
    maybe(d, "report_stem", c.eval.report_stem);
  }
  maybe(j, "resample_defense", c.resample_defense);
  return c;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["dataset"] = {{"kind", dataset.kind},
                  {"train_images", dataset.train_images},
                  {"train_labels", dataset.train_labels},
                  {"test_images", dataset.test_images},
                  {"test_labels", dataset.test_labels},
                  {"train_batches", dataset.train_batches},
                  {"test_batches", dataset.test_batches},
                  {"n_train", dataset.n_train},
                  {"n_test", dataset.n_test},
                  {"limit_train", dataset.limit_train},
                  {"limit_test", dataset.limit_test}};
  j["classifier"] = {{"arch", classifier.arch},
                     {"epochs", classifier.epochs},
                     {"lr", classifier.lr},
                     {"batch_size", classifier.batch_size},
                     {"checkpoint", classifier.checkpoint}};
  j["attack"] = attack_to_json(attack);
  j["adv_out"] = adv_out;
  j["recon"] = {{"backend", recon.backend},
                {"task", recon.task},
                {"blocks", recon.blocks},
                {"channels", recon.channels},
                {"mlp_hidden", recon.mlp_hidden},
                {"epochs", recon.epochs},
                {"batch_size", recon.batch_size},
                {"lr", recon.lr},
                {"limit_train", recon.limit_train},
                {"sigma", recon.sigma},
                {"mask_lo", recon.mask_lo},
                {"mask_hi", recon.mask_hi},
                {"down_factor", recon.down_factor},
                {"checkpoint", recon.checkpoint},
                {"adv_cache", recon.adv_cache}};
  j["samplenet"] = {{"s_max", samplenet.s_max},     {"lr", samplenet.lr},
                    {"steps", samplenet.steps},     {"batch_size", samplenet.batch_size},
                    {"limit_train", samplenet.limit_train}, {"checkpoint", samplenet.checkpoint}};
  j["eval"] = {{"defenses", eval.defenses},
               {"fixed_d", eval.fixed_d},
               {"uniform_gamma", eval.uniform_gamma},
               {"n_eval", eval.n_eval},
               {"batch_size", eval.batch_size},
               {"adaptive", eval.adaptive},
               {"adaptive_n_eval", eval.adaptive_n_eval},
               {"dump_images", eval.dump_images},
               {"report_stem", eval.report_stem}};
  j["resample_defense"] = resample_defense;
  return j.dump();
}

std::string ExperimentConfig::config_hash() const {
  const std::string s = canonical_json();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return hash_hex(h);
}

std::string ExperimentConfig::resolve(const std::string& path) const {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(out_dir) / p).string();
}

// --------------------------------------------------------------------------
// datasets

LabeledDataset load_split(const DatasetSpec& spec, bool train, std::uint64_t seed) {
  LabeledDataset ds;
  if (spec.kind == "mnist_idx") {
    const std::string& img = train ? spec.train_images : spec.test_images;
    const std::string& lbl = train ? spec.train_labels : spec.test_labels;
    if (img.empty() || lbl.empty() || !fs::exists(img) || !fs::exists(lbl))
      throw ConfigError("dataset: missing IDX file(s): '" + img + "', '" + lbl + "'");
    ds = load_mnist_idx(img, lbl);
  } else if (spec.kind == "cifar10") {
    const auto& paths = train ? spec.train_batches : spec.test_batches;
    if (paths.empty()) throw ConfigError("dataset: no cifar10 batch paths configured");
    for (const auto& p : paths)
      if (!fs::exists(p)) throw ConfigError("dataset: missing cifar10 batch: " + p);
    ds = load_cifar10_bin(paths);
  } else if (spec.kind == "synthetic") {
    ds = make_synthetic(train ? spec.n_train : spec.n_test, derive_seed(seed, train ? 100 : 200));
  } else if (spec.kind == "synthdigits") {
    ds = make_digits(train ? spec.n_train : spec.n_test, derive_seed(seed, train ? 100 : 200));
  } else {
    throw ConfigError("dataset: unknown kind '" + spec.kind + "'");
  }
  const std::int64_t limit = train ? spec.limit_train : spec.limit_test;
  if (limit > 0 && limit < ds.size()) ds = slice_dataset(ds, 0, limit);
  return ds;
}

namespace {

ClassifierConfig classifier_config_for(const ExperimentConfig& cfg, const LabeledDataset& ds) {
  if (cfg.classifier.arch == "small")
    return ClassifierConfig::small(ds.channels(), ds.height(), ds.width(), ds.num_classes);
  if (cfg.classifier.arch == "tiny")
    return ClassifierConfig::tiny(ds.channels(), ds.height(), ds.width(), ds.num_classes);
  throw ConfigError("classifier: unknown arch '" + cfg.classifier.arch + "'");
}

void write_curve_csv(const std::string& path, const std::vector<double>& values,
                     const char* value_name) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "step," << value_name << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << i << "," << values[i] << "\n";
}

ClassifierModel load_victim(const ExperimentConfig& cfg) {
  const std::string path = cfg.resolve(cfg.classifier.checkpoint);
  if (!fs::exists(path)) throw ConfigError("missing classifier checkpoint: " + path);
  return load_classifier(path, false);
}

struct AdvCache {
  Tensor clean, adv;
  std::vector<std::int32_t> labels;
};

AdvCache load_adv_cache(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw ConfigError("adv cache missing manifest: " + dir);
  AdvCache c;
  c.clean = load_rtsr((fs::path(dir) / "clean.rtsr").string());
  c.adv = load_rtsr((fs::path(dir) / "adv.rtsr").string());
  Tensor lbl = load_rtsr((fs::path(dir) / "labels.rtsr").string());
  c.labels.resize(static_cast<std::size_t>(lbl.numel()));
  for (std::int64_t i = 0; i < lbl.numel(); ++i)
    c.labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(lbl.data()[i]);
  return c;
}

/// Builds (or loads) the (clean, adv, labels) training cache for the
/// two-stage training, limited to `limit` samples.
AdvCache adv_cache_for_training(const ExperimentConfig& cfg, std::int64_t limit) {
  if (!cfg.recon.adv_cache.empty()) {
    const std::string dir = cfg.resolve(cfg.recon.adv_cache);
    AdvCache c = load_adv_cache(dir);
    if (limit > 0 && limit < c.clean.dim(0)) {
      std::vector<std::int64_t> idx(static_cast<std::size_t>(limit));
      for (std::int64_t i = 0; i < limit; ++i) idx[static_cast<std::size_t>(i)] = i;
      c.clean = take_rows(c.clean, idx);
      c.adv = take_rows(c.adv, idx);
      c.labels.resize(static_cast<std::size_t>(limit));
    }
    return c;
  }
  LabeledDataset train = load_split(cfg.dataset, true, cfg.seed);
  if (limit > 0 && limit < train.size()) train = slice_dataset(train, 0, limit);
  ClassifierModel victim = load_victim(cfg);
  AttackConfig atk = cfg.attack;
  atk.seed = derive_seed(cfg.seed, 0xadf0ULL);
  AdvCache c;
  c.clean = train.images;
  c.adv = attack_images(victim, train.images, train.labels, atk);
  c.labels = train.labels;
  return c;
}

}  // namespace

// --------------------------------------------------------------------------
// commands

std::string cmd_train_classifier(const ExperimentConfig& cfg) {
  LabeledDataset train = load_split(cfg.dataset, true, cfg.seed);  // validates inputs first
  fs::create_directories(cfg.out_dir);
  ClassifierConfig ccfg = classifier_config_for(cfg, train);
  TrainLog log;
  ClassifierModel m = train_classifier(ccfg, train, cfg.classifier.epochs, cfg.classifier.lr,
                                       derive_seed(cfg.seed, 0xc1a5ULL), &log,
                                       cfg.classifier.batch_size);
  const std::string path = cfg.resolve(cfg.classifier.checkpoint);
  save_classifier(path, m);
  std::ofstream os(path + ".train.csv");
  os << "epoch,loss,accuracy\n";
  os.precision(17);
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
    os << e << "," << log.epoch_loss[e] << "," << log.epoch_accuracy[e] << "\n";
  return path;
}

std::string cmd_make_adv(const ExperimentConfig& cfg) {
  LabeledDataset train = load_split(cfg.dataset, true, cfg.seed);
  if (cfg.recon.limit_train > 0 && cfg.recon.limit_train < train.size())
    train = slice_dataset(train, 0, cfg.recon.limit_train);
  ClassifierModel victim = load_victim(cfg);

  AttackConfig atk = cfg.attack;
  atk.seed = derive_seed(cfg.seed, 0xadf0ULL);
  Tensor adv = attack_images(victim, train.images, train.labels, atk);

  const std::string dir = cfg.resolve(cfg.adv_out);
  fs::create_directories(dir);
  save_rtsr((fs::path(dir) / "clean.rtsr").string(), train.images);
  save_rtsr((fs::path(dir) / "adv.rtsr").string(), adv);
  Tensor lbl = Tensor::zeros({train.size()});
  for (std::int64_t i = 0; i < train.size(); ++i)
    lbl.data()[i] = static_cast<float>(train.labels[static_cast<std::size_t>(i)]);
  save_rtsr((fs::path(dir) / "labels.rtsr").string(), lbl);

  json manifest;
  manifest["attack"] = attack_to_json(cfg.attack);
  manifest["attack"]["seed"] = atk.seed;
  manifest["dataset"] = cfg.dataset.kind;
  manifest["n"] = train.size();
  manifest["victim_checkpoint_hash"] = hash_hex(file_hash(cfg.resolve(cfg.classifier.checkpoint)));
  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
  return dir;
}

std::string cmd_train_recon(const ExperimentConfig& cfg) {
  if (cfg.recon.backend != "implicit")
    throw ConfigError("train-recon: backend '" + cfg.recon.backend +
                      "' has no trainable reconstruction; use backend=implicit");
  const ReconTask task = task_from_string(cfg.recon.task);

  LabeledDataset train = load_split(cfg.dataset, true, cfg.seed);
  if (cfg.recon.limit_train > 0 && cfg.recon.limit_train < train.size())
    train = slice_dataset(train, 0, cfg.recon.limit_train);

  TaskParams params;
  params.task = task;
  params.down_factor = cfg.recon.down_factor;
  params.mask_lo = cfg.recon.mask_lo;
  params.mask_hi = cfg.recon.mask_hi;
  params.sigma = cfg.recon.sigma;
  params.attack = cfg.attack;

  AdvCache cache;
  if (task == ReconTask::adv_denoise) {
    cache = adv_cache_for_training(cfg, cfg.recon.limit_train);
    if (cache.clean.dim(0) < train.size()) train = slice_dataset(train, 0, cache.clean.dim(0));
    train.images = cache.clean;  // pair targets with exactly the cached clean set
    train.labels = cache.labels;
    params.adv_cache = &cache.adv;
  }

  ImplicitConfig icfg;
  icfg.blocks = cfg.recon.blocks;
  icfg.channels = cfg.recon.channels;
  icfg.mlp_hidden = cfg.recon.mlp_hidden;
  icfg.img_channels = train.channels();

  ReconTrainHyper hyper{cfg.recon.epochs, cfg.recon.batch_size, cfg.recon.lr};
  TrainCurve curve;
  fs::create_directories(cfg.out_dir);
  ImplicitModel m =
      train_implicit(icfg, params, train, hyper, derive_seed(cfg.seed, 0x4ec0ULL), &curve);
  const std::string path = cfg.resolve(cfg.recon.checkpoint);
  save_implicit(path, m, cfg.recon.task);
  write_curve_csv(path + ".train.csv", curve.loss, "l1_loss");
  return path;
}

std::string cmd_train_samplenet(const ExperimentConfig& cfg) {
  if (cfg.recon.backend != "implicit")
    throw ConfigError("train-samplenet: requires the implicit backend (coordinate gradients); got '" +
                      cfg.recon.backend + "'");
  const std::string implicit_path = cfg.resolve(cfg.recon.checkpoint);
  if (!fs::exists(implicit_path)) throw ConfigError("missing implicit checkpoint: " + implicit_path);
  ImplicitModel implicit = load_implicit(implicit_path, false);
  ClassifierModel victim = load_victim(cfg);
  AdvCache cache = adv_cache_for_training(cfg, cfg.samplenet.limit_train);

  SampleNetTrainHyper hyper;
  hyper.steps = cfg.samplenet.steps;
  hyper.batch = cfg.samplenet.batch_size;
  hyper.lr = cfg.samplenet.lr;
  hyper.s_max = cfg.samplenet.s_max;
  TrainCurve curve;
  SampleNetModel sn = train_samplenet(implicit, victim, cache.adv, cache.clean, cache.labels, hyper,
                                      derive_seed(cfg.seed, 0x5a2fULL), &curve);
  const std::string path = cfg.resolve(cfg.samplenet.checkpoint);
  save_samplenet(path, sn, hash_hex(file_hash(implicit_path)),
                 hash_hex(file_hash(cfg.resolve(cfg.classifier.checkpoint))));
  write_curve_csv(path + ".train.csv", curve.loss, "ce_loss");
  return path;
}

namespace {

DefensePipeline build_pipeline(const ExperimentConfig& cfg, DefenseKind kind,
                               std::shared_ptr<const ImplicitModel>& implicit,
                               std::shared_ptr<const SampleNetModel>& samplenet) {
  DefenseParams params;
  params.fixed_d = cfg.eval.fixed_d;
  params.uniform_gamma = cfg.eval.uniform_gamma;
  params.seed = derive_seed(cfg.seed, 0xdef0ULL);
  if ((kind == DefenseKind::implicit_only || kind == DefenseKind::irad) && !implicit) {
    const std::string path = cfg.resolve(cfg.recon.checkpoint);
    if (!fs::exists(path)) throw ConfigError("missing implicit checkpoint: " + path);
    implicit = std::make_shared<const ImplicitModel>(load_implicit(path, false));
  }
  if (kind == DefenseKind::irad && !samplenet) {
    const std::string path = cfg.resolve(cfg.samplenet.checkpoint);
    if (!fs::exists(path)) throw ConfigError("missing samplenet checkpoint: " + path);
    samplenet = std::make_shared<const SampleNetModel>(load_samplenet(path, false));
  }
  return DefensePipeline::make(kind, params, implicit, samplenet);
}

}  // namespace

EvalReport cmd_eval(const ExperimentConfig& cfg) {
  LabeledDataset test = load_split(cfg.dataset, false, cfg.seed);
  const std::int64_t n = std::min<std::int64_t>(cfg.eval.n_eval, test.size());
  LabeledDataset subset = slice_dataset(test, 0, n);
  ClassifierModel victim = load_victim(cfg);

  std::shared_ptr<const ImplicitModel> implicit;
  std::shared_ptr<const SampleNetModel> samplenet;
  std::vector<std::pair<DefenseKind, DefensePipeline>> pipelines;
  for (const auto& name : cfg.eval.defenses) {
    DefenseKind kind = defense_kind_from_string(name);
    pipelines.emplace_back(kind, build_pipeline(cfg, kind, implicit, samplenet));
  }

  AttackConfig atk = cfg.attack;
  atk.seed = derive_seed(cfg.seed, 0xe7a1ULL);

  // adaptive runs may use a smaller split (BPDA through the heavy defenses)
  const std::int64_t n_adaptive =
      cfg.eval.adaptive_n_eval > 0 ? std::min(cfg.eval.adaptive_n_eval, n) : n;
  const LabeledDataset adaptive_subset =
      cfg.eval.adaptive ? slice_dataset(subset, 0, n_adaptive) : LabeledDataset{};

  Tensor adv_oblivious;
  if (!cfg.eval.adaptive)
    adv_oblivious = attack_images(victim, subset.images, subset.labels, atk, nullptr,
                                  cfg.eval.batch_size);

  EvalReport report;
  report.config_hash = cfg.config_hash();
  report.attack_desc = atk.describe();
  report.adaptive = cfg.eval.adaptive;

  Tensor dump_adv;  // defended dumps use the first evaluated defense's adv set
  for (const auto& [kind, pipeline] : pipelines) {
    const double t0 = now_ms();
    DefenseFn fn = pipeline.as_fn();
    EvalRow row;
    row.defense = defense_kind_to_string(kind);
    Tensor adv;
    if (cfg.eval.adaptive) {
      AttackConfig bpda = atk;
      bpda.kind = AttackConfig::Kind::bpda_pgd;
      adv = attack_images(victim, adaptive_subset.images, adaptive_subset.labels, bpda, &fn,
                          cfg.eval.batch_size);
      row.sa = accuracy(victim, adaptive_subset.images, adaptive_subset.labels, &fn,
                        cfg.eval.batch_size);
      row.ra = accuracy(victim, adv, adaptive_subset.labels, &fn, cfg.eval.batch_size);
      row.n_clean = row.n_adv = n_adaptive;
    } else {
      adv = adv_oblivious;
      row.sa = accuracy(victim, subset.images, subset.labels, &fn, cfg.eval.batch_size);
      row.ra = accuracy(victim, adv, subset.labels, &fn, cfg.eval.batch_size);
      row.n_clean = row.n_adv = n;
    }
    row.avg = (row.sa + row.ra) / 2.0;
    row.wall_ms = now_ms() - t0;
    report.rows.push_back(row);
    if (!dump_adv.defined()) dump_adv = adv;
  }

  fs::create_directories(cfg.out_dir);
  const std::string stem = (fs::path(cfg.out_dir) / cfg.eval.report_stem).string();
  {
    std::ofstream os(stem + ".json");
    if (!os) throw IoError("cannot write report: " + stem + ".json");
    os << report.to_json() << "\n";
  }
  {
    std::ofstream os(stem + ".csv");
    os << report.to_csv();
  }
  {
    json t;
    t["unit"] = "ms";
    for (const auto& r : report.rows) t["rows"][r.defense] = r.wall_ms;
    std::ofstream os(stem + ".timings.json");
    os << t.dump(2) << "\n";
  }

  if (cfg.eval.dump_images > 0 && dump_adv.defined()) {
    const fs::path dumps = fs::path(cfg.out_dir) / "dumps";
    fs::create_directories(dumps);
    const std::int64_t n_dump = std::min<std::int64_t>(cfg.eval.dump_images, dump_adv.dim(0));
    const LabeledDataset& src = cfg.eval.adaptive ? adaptive_subset : subset;
    for (std::int64_t i = 0; i < n_dump; ++i) {
      char idx[16];
      std::snprintf(idx, sizeof(idx), "%03lld", static_cast<long long>(i));
      const std::string ext = src.channels() == 3 ? ".ppm" : ".pgm";
      write_pnm((dumps / (std::string("img") + idx + "_clean" + ext)).string(), src.image(i));
      Tensor adv_i = Tensor::zeros({src.channels(), src.height(), src.width()});
      std::copy_n(dump_adv.raw() + i * adv_i.numel(), adv_i.numel(), adv_i.raw());
      write_pnm((dumps / (std::string("img") + idx + "_adv" + ext)).string(), adv_i);
      for (const auto& [kind, pipeline] : pipelines) {
        Tensor batch = reshape(adv_i, {1, src.channels(), src.height(), src.width()}).detach();
        Tensor defended = pipeline.apply(batch, i);
        Tensor img = Tensor::zeros({src.channels(), src.height(), src.width()});
        std::copy_n(defended.raw(), img.numel(), img.raw());
        write_pnm((dumps / (std::string("img") + idx + "_def_" + defense_kind_to_string(kind) + ext))
                      .string(),
                  img);
      }
    }
  }
  return report;
}

void cmd_resample(const ExperimentConfig& cfg, const std::string& input_path,
                  const std::string& output_path) {
  if (!fs::exists(input_path)) throw ConfigError("resample: missing input image: " + input_path);
  Tensor img = read_pnm(input_path);
  DefenseKind kind = defense_kind_from_string(cfg.resample_defense);
  std::shared_ptr<const ImplicitModel> implicit;
  std::shared_ptr<const SampleNetModel> samplenet;
  DefensePipeline pipeline = build_pipeline(cfg, kind, implicit, samplenet);
  Tensor batch = reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)}).detach();
  Tensor defended = pipeline.apply(batch, 0);
  Tensor out = Tensor::zeros(img.shape());
  std::copy_n(defended.raw(), out.numel(), out.raw());
  write_pnm(output_path, out);
}

// --------------------------------------------------------------------------
// report serialization

std::string EvalReport::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["attack"] = attack_desc;
  j["adaptive"] = adaptive;
  j["rows"] = json::array();
  for (const auto& r : rows)
    j["rows"].push_back(json{{"defense", r.defense},
                             {"sa", r.sa},
                             {"ra", r.ra},
                             {"avg", r.avg},
                             {"n_clean", r.n_clean},
                             {"n_adv", r.n_adv}});
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "defense,sa,ra,avg,n_clean,n_adv\n";
  for (const auto& r : rows)
    os << r.defense << "," << r.sa << "," << r.ra << "," << r.avg << "," << r.n_clean << ","
       << r.n_adv << "\n";
  return os.str();
}

}  // namespace rsd
