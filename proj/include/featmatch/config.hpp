#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "featmatch/data.hpp"
#include "featmatch/error.hpp"
#include "featmatch/image_augment.hpp"
#include "featmatch/losses.hpp"
#include "featmatch/network.hpp"
#include "featmatch/schedule.hpp"

namespace featmatch {

using json = nlohmann::json;

struct DatasetConfig {
  std::string kind = "blobs";  // "blobs" or "binary"
  std::optional<std::uint64_t> seed;  // defaults to the experiment seed

  // blobs
  std::size_t classes = 4;
  std::size_t dim = 2;
  std::size_t train_per_class = 504;
  std::size_t test_per_class = 250;
  double centroid_spread = 3.0;
  double noise_sigma = 0.8;

  // binary image files
  std::string train_path;
  std::string test_path;
  std::string shifted_path;
  ImageLayout layout;

  std::size_t n_labels = 16;
  double val_fraction = 0.0;

  // unlabeled domain mixing
  double r_u = 0.0;
  DomainShift shift;
  std::size_t shifted_per_class = 504;
};

struct AblationSwitches {
  bool use_augf = true;
  bool use_con_f = true;
  bool use_con_g = true;
};

struct TrainConfig {
  std::size_t batch_labeled = 64;
  std::size_t batch_unlabeled = 128;
  double weight_decay = 2e-4;
  LossWeights weights;
  std::size_t prototypes_per_class = 20;
  std::size_t prototype_interval = 0;  // iterations; 0 = once per epoch
  std::size_t pretrain_epochs = 4;
  std::size_t cycle_epochs = 10;
  std::size_t converge_epochs = 6;
  double lr_scale = 1.0;
  std::size_t kmeans_restarts = 3;
  std::size_t kmeans_max_iter = 100;
  WeakPolicy weak;
  std::size_t threads = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  ModelSpec model;
  TrainConfig train;
  AugPolicy augment;
  AblationSwitches ablation;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  bool select_best_val = false;

  std::uint64_t data_seed() const { return dataset.seed.value_or(seed); }

  void validate() const {
    if (ablation.use_con_g && !ablation.use_augf) throw ConfigError("config: use_con_g requires use_augf");
    if (ablation.use_augf && train.pretrain_epochs == 0) {
      throw ConfigError("config: AugF needs at least one pre-training epoch to extract prototypes");
    }
    if (train.batch_labeled == 0 || train.batch_unlabeled == 0) throw ConfigError("config: batch sizes must be positive");
    if (train.prototypes_per_class == 0) throw ConfigError("config: prototypes_per_class must be positive");
    if (train.weights.lambda_g < 0 || train.weights.lambda_f < 0) throw ConfigError("config: loss weights must be >= 0");
    if (train.weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
    if (train.lr_scale <= 0) throw ConfigError("config: lr_scale must be positive");
    if (dataset.r_u < 0 || dataset.r_u > 1) throw ConfigError("config: r_u must be in [0, 1]");
    if (dataset.kind != "blobs" && dataset.kind != "binary") {
      throw ConfigError("config: unknown dataset kind '" + dataset.kind + "'");
    }
    if (model.heads == 0 || model.embed_dim % model.heads != 0) {
      throw ConfigError("config: embed_dim must be divisible by heads");
    }
  }
};

namespace config_detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("config: unknown key '" + where + "." + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace config_detail

inline ExperimentConfig config_from_json(const json& j) {
  using config_detail::check_keys;
  using config_detail::read;
  ExperimentConfig c;
  check_keys(j, {"seed", "output_dir", "dataset", "model", "train", "augment", "ablation", "checkpoint_every",
                 "select_best_val"},
             "root");
  read(j, "seed", c.seed, "root");
  read(j, "output_dir", c.output_dir, "root");
  read(j, "checkpoint_every", c.checkpoint_every, "root");
  read(j, "select_best_val", c.select_best_val, "root");

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, {"kind", "seed", "classes", "dim", "train_per_class", "test_per_class", "centroid_spread",
                   "noise_sigma", "train_path", "test_path", "shifted_path", "height", "width", "channels",
                   "n_labels", "val_fraction", "r_u", "shift", "shifted_per_class"},
               "dataset");
    auto& ds = c.dataset;
    read(d, "kind", ds.kind, "dataset");
    if (d.contains("seed")) {
      std::uint64_t s = 0;
      read(d, "seed", s, "dataset");
      ds.seed = s;
    }
    read(d, "classes", ds.classes, "dataset");
    read(d, "dim", ds.dim, "dataset");
    read(d, "train_per_class", ds.train_per_class, "dataset");
    read(d, "test_per_class", ds.test_per_class, "dataset");
    read(d, "centroid_spread", ds.centroid_spread, "dataset");
    read(d, "noise_sigma", ds.noise_sigma, "dataset");
    read(d, "train_path", ds.train_path, "dataset");
    read(d, "test_path", ds.test_path, "dataset");
    read(d, "shifted_path", ds.shifted_path, "dataset");
    read(d, "height", ds.layout.height, "dataset");
    read(d, "width", ds.layout.width, "dataset");
    read(d, "channels", ds.layout.channels, "dataset");
    ds.layout.num_classes = ds.classes;
    read(d, "n_labels", ds.n_labels, "dataset");
    read(d, "val_fraction", ds.val_fraction, "dataset");
    read(d, "r_u", ds.r_u, "dataset");
    read(d, "shifted_per_class", ds.shifted_per_class, "dataset");
    if (d.contains("shift")) {
      const json& s = d["shift"];
      check_keys(s, {"rotation_deg", "translation", "noise_scale"}, "dataset.shift");
      read(s, "rotation_deg", ds.shift.rotation_deg, "dataset.shift");
      read(s, "translation", ds.shift.translation, "dataset.shift");
      read(s, "noise_scale", ds.shift.noise_scale, "dataset.shift");
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"hidden", "feature_dim", "embed_dim", "heads"}, "model");
    read(m, "hidden", c.model.hidden, "model");
    read(m, "feature_dim", c.model.feature_dim, "model");
    read(m, "embed_dim", c.model.embed_dim, "model");
    read(m, "heads", c.model.heads, "model");
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, {"batch_labeled", "batch_unlabeled", "weight_decay", "lambda_g", "lambda_f",
                   "prototypes_per_class", "prototype_interval", "pretrain_epochs", "cycle_epochs",
                   "converge_epochs", "lr_scale", "kmeans_restarts", "kmeans_max_iter", "weak_flip",
                   "weak_translate", "weak_jitter", "threads"},
               "train");
    auto& tc = c.train;
    read(t, "batch_labeled", tc.batch_labeled, "train");
    read(t, "batch_unlabeled", tc.batch_unlabeled, "train");
    read(t, "weight_decay", tc.weight_decay, "train");
    read(t, "lambda_g", tc.weights.lambda_g, "train");
    read(t, "lambda_f", tc.weights.lambda_f, "train");
    read(t, "prototypes_per_class", tc.prototypes_per_class, "train");
    read(t, "prototype_interval", tc.prototype_interval, "train");
    read(t, "pretrain_epochs", tc.pretrain_epochs, "train");
    read(t, "cycle_epochs", tc.cycle_epochs, "train");
    read(t, "converge_epochs", tc.converge_epochs, "train");
    read(t, "lr_scale", tc.lr_scale, "train");
    read(t, "kmeans_restarts", tc.kmeans_restarts, "train");
    read(t, "kmeans_max_iter", tc.kmeans_max_iter, "train");
    read(t, "weak_flip", tc.weak.flip, "train");
    read(t, "weak_translate", tc.weak.max_translate_frac, "train");
    read(t, "weak_jitter", tc.weak.jitter_sigma, "train");
    read(t, "threads", tc.threads, "train");
  }

  if (j.contains("augment")) {
    const json& a = j["augment"];
    check_keys(a, {"n", "magnitude", "ops"}, "augment");
    read(a, "n", c.augment.n, "augment");
    read(a, "magnitude", c.augment.magnitude, "augment");
    read(a, "ops", c.augment.ops, "augment");
  }

  if (j.contains("ablation")) {
    const json& a = j["ablation"];
    check_keys(a, {"use_augf", "use_con_f", "use_con_g"}, "ablation");
    read(a, "use_augf", c.ablation.use_augf, "ablation");
    read(a, "use_con_f", c.ablation.use_con_f, "ablation");
    read(a, "use_con_g", c.ablation.use_con_g, "ablation");
  }

  c.model.num_classes = c.dataset.classes;
  c.validate();
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  j["select_best_val"] = c.select_best_val;
  const auto& ds = c.dataset;
  json d = {{"kind", ds.kind},
            {"classes", ds.classes},
            {"dim", ds.dim},
            {"train_per_class", ds.train_per_class},
            {"test_per_class", ds.test_per_class},
            {"centroid_spread", ds.centroid_spread},
            {"noise_sigma", ds.noise_sigma},
            {"train_path", ds.train_path},
            {"test_path", ds.test_path},
            {"shifted_path", ds.shifted_path},
            {"height", ds.layout.height},
            {"width", ds.layout.width},
            {"channels", ds.layout.channels},
            {"n_labels", ds.n_labels},
            {"val_fraction", ds.val_fraction},
            {"r_u", ds.r_u},
            {"shifted_per_class", ds.shifted_per_class},
            {"shift",
             {{"rotation_deg", ds.shift.rotation_deg},
              {"translation", ds.shift.translation},
              {"noise_scale", ds.shift.noise_scale}}}};
  if (ds.seed) d["seed"] = *ds.seed;
  j["dataset"] = d;
  j["model"] = {{"hidden", c.model.hidden},
                {"feature_dim", c.model.feature_dim},
                {"embed_dim", c.model.embed_dim},
                {"heads", c.model.heads}};
  const auto& t = c.train;
  j["train"] = {{"batch_labeled", t.batch_labeled},
                {"batch_unlabeled", t.batch_unlabeled},
                {"weight_decay", t.weight_decay},
                {"lambda_g", t.weights.lambda_g},
                {"lambda_f", t.weights.lambda_f},
                {"prototypes_per_class", t.prototypes_per_class},
                {"prototype_interval", t.prototype_interval},
                {"pretrain_epochs", t.pretrain_epochs},
                {"cycle_epochs", t.cycle_epochs},
                {"converge_epochs", t.converge_epochs},
                {"lr_scale", t.lr_scale},
                {"kmeans_restarts", t.kmeans_restarts},
                {"kmeans_max_iter", t.kmeans_max_iter},
                {"weak_flip", t.weak.flip},
                {"weak_translate", t.weak.max_translate_frac},
                {"weak_jitter", t.weak.jitter_sigma},
                {"threads", t.threads}};
  j["augment"] = {{"n", c.augment.n}, {"magnitude", c.augment.magnitude}, {"ops", c.augment.ops}};
  j["ablation"] = {{"use_augf", c.ablation.use_augf},
                   {"use_con_f", c.ablation.use_con_f},
                   {"use_con_g", c.ablation.use_con_g}};
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// Canonical text of a config (keys sorted, compact) used for hashing.
inline std::string canonical_config(const ExperimentConfig& c) { return config_to_json(c).dump(); }

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(canonical_config(c)); }

}  // namespace featmatch
