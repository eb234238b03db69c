#pragma once

// Experiment runner: data preparation from a config, single runs with
// metrics/report/checkpoint output, and the ablation and sensitivity
// harnesses.
//
// Requires linking OpenSSL's libcrypto (SHA-1 for the config content hash).

#include <openssl/sha.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "featmatch/checkpoint.hpp"
#include "featmatch/config.hpp"
#include "featmatch/data.hpp"
#include "featmatch/evaluation.hpp"
#include "featmatch/trainer.hpp"

namespace featmatch {

inline constexpr const char* kMetricsHeader =
    "epoch,iter,lr,L_clf,L_con_g,L_con_f,test_error,pl_acc_augf,pl_acc_no_augf";
inline constexpr const char* kReportFormat = "featmatch-report/1";

inline TrainData prepare_data(const ExperimentConfig& cfg) {
  const auto& dc = cfg.dataset;
  const std::uint64_t seed = cfg.data_seed();
  Dataset train;
  TrainData td;
  std::optional<UnlabeledSet> shifted;
  if (dc.kind == "blobs") {
    BlobSpec spec{dc.classes, dc.train_per_class, dc.dim, dc.centroid_spread, dc.noise_sigma, seed};
    train = make_blobs(spec, 0).data;
    BlobSpec test_spec = spec;
    test_spec.per_class = dc.test_per_class;
    td.test = make_blobs(test_spec, 1).data;
    if (dc.r_u > 0.0) {
      BlobSpec shift_spec = spec;
      shift_spec.per_class = dc.shifted_per_class;
      shifted = UnlabeledSet(make_blobs(shift_spec, 2, &dc.shift).data);
    }
  } else {
    if (dc.train_path.empty() || dc.test_path.empty()) {
      throw ConfigError("config: binary dataset needs train_path and test_path");
    }
    ImageLayout layout = dc.layout;
    layout.num_classes = dc.classes;
    train = load_binary_images(dc.train_path, layout);
    td.test = load_binary_images(dc.test_path, layout);
    if (dc.r_u > 0.0) {
      if (dc.shifted_path.empty()) throw ConfigError("config: r_u > 0 on binary data needs shifted_path");
      Dataset s = load_binary_images(dc.shifted_path, layout);
      for (auto& d : s.domain) d = 1;
      shifted = UnlabeledSet(std::move(s));
    }
  }
  if (dc.val_fraction > 0.0) {
    auto [keep, val] = split_holdout(train, dc.val_fraction, seed);
    train = std::move(keep);
    td.validation = std::move(val);
  }
  auto [lab, unl] = split_labeled(train, dc.n_labels, seed);
  td.labeled = std::move(lab);
  td.unlabeled = shifted ? mix_domains(unl, *shifted, dc.r_u, seed) : std::move(unl);
  return td;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, const MetricsLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics file '" + path.string() + "'");
  out << kMetricsHeader << '\n';
  for (const auto& m : log) {
    out << m.epoch << ',' << m.iter << ',' << format_double(m.lr) << ',' << format_double(m.l_clf) << ','
        << format_double(m.l_con_g) << ',' << format_double(m.l_con_f) << ',' << format_double(m.test_error) << ','
        << format_double(m.pl_acc_augf) << ',' << format_double(m.pl_acc_no_augf) << '\n';
  }
}

// SHA-1 over "blob <len>\0<content>", as git hashes file contents.
inline std::string git_blob_hash(const std::string& content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data += content;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  std::ostringstream os;
  for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return os.str();
}

struct ExperimentResult {
  double test_error = 0.0;
  double test_error_no_augf = 0.0;
  double mean_pl_acc_augf = 0.0;     // averaged over epochs with AugF trained
  double mean_pl_acc_no_augf = 0.0;  // same epochs
  std::size_t iterations = 0;
  std::size_t epochs = 0;
  std::size_t extractions = 0;
  double seconds = 0.0;
  MetricsLog metrics;
};

struct RunOptions {
  bool write_files = true;
  bool single_thread = true;
};

// Mean pseudo-label accuracies over the epochs after pre-training.
inline std::pair<double, double> mean_pl_accuracy(const MetricsLog& log, std::size_t pretrain_epochs) {
  double a = 0.0, b = 0.0;
  std::size_t n = 0;
  for (const auto& m : log) {
    if (m.epoch <= pretrain_epochs || !std::isfinite(m.pl_acc_augf)) continue;
    a += m.pl_acc_augf;
    b += m.pl_acc_no_augf;
    ++n;
  }
  if (n == 0) return {std::nan(""), std::nan("")};
  return {a / static_cast<double>(n), b / static_cast<double>(n)};
}

inline json make_report(const ExperimentConfig& cfg, const ExperimentResult& r) {
  const std::string canon = canonical_config(cfg);
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return json{{"format", kReportFormat},
              {"config", config_to_json(cfg)},
              {"config_hash", git_blob_hash(canon)},
              {"result",
               {{"test_error", r.test_error},
                {"test_error_no_augf", r.test_error_no_augf},
                {"mean_pl_acc_augf", num(r.mean_pl_acc_augf)},
                {"mean_pl_acc_no_augf", num(r.mean_pl_acc_no_augf)},
                {"iterations", r.iterations},
                {"epochs", r.epochs},
                {"prototype_extractions", r.extractions}}}};
}

inline ExperimentResult run_experiment(ExperimentConfig cfg, const RunOptions& opt = {}) {
  if (opt.single_thread) cfg.train.threads = 1;
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(cfg, prepare_data(cfg));
  const std::filesystem::path out_dir = cfg.output_dir;
  if (opt.write_files) std::filesystem::create_directories(out_dir);

  trainer.fit([&](const Trainer& t, const EpochMetrics& row) {
    if (opt.write_files && cfg.checkpoint_every > 0 && row.epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("checkpoint_epoch_" + std::to_string(row.epoch) + ".bin"), cfg, t.state(),
                      t.metrics());
    }
  });

  const auto sel = trainer.selected_model();
  const auto eval = evaluate(sel.net, sel.use_augf ? &sel.prototypes : nullptr, trainer.data().test);
  ExperimentResult r;
  r.test_error = eval.error;
  r.test_error_no_augf = eval.error_no_augf;
  std::tie(r.mean_pl_acc_augf, r.mean_pl_acc_no_augf) = mean_pl_accuracy(trainer.metrics(), cfg.train.pretrain_epochs);
  r.iterations = trainer.state().iteration;
  r.epochs = trainer.state().epoch;
  r.extractions = trainer.state().extractions;
  r.metrics = trainer.metrics();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (opt.write_files) {
    write_metrics_csv(out_dir / "metrics.csv", trainer.metrics());
    save_checkpoint(out_dir / "checkpoint.bin", cfg, trainer.state(), trainer.metrics());
    std::ofstream rep(out_dir / "report.json", std::ios::trunc);
    if (!rep) throw IoError("cannot write report in '" + out_dir.string() + "'");
    rep << make_report(cfg, r).dump(2) << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ablation (four switch combinations) and sensitivity sweeps.

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::vector<double> values;
};

inline SummaryStats summarize(std::vector<double> values) {
  SummaryStats s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.values.size());
  if (s.values.size() > 1) {
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
  }
  return s;
}

struct AblationRow {
  std::string name;
  AblationSwitches switches;
  SummaryStats error;
};

inline std::vector<AblationRow> ablation_rows() {
  return {{"Baseline", {false, true, false}, {}},
          {"w/o L_con-f", {true, false, true}, {}},
          {"w/o L_con-g", {true, true, false}, {}},
          {"FeatMatch (Ours)", {true, true, true}, {}}};
}

// Runs each cell (row x seed). Cells run concurrently unless single_thread;
// every cell owns its output directory and RNG streams, so the numbers do
// not depend on scheduling.
template <typename Cell>
std::vector<double> run_cells(const std::vector<Cell>& cells, bool single_thread) {
  std::vector<double> out(cells.size());
  if (single_thread) {
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = cells[i]();
    return out;
  }
  std::vector<std::future<double>> futs;
  for (const auto& c : cells) futs.push_back(std::async(std::launch::async, c));
  for (std::size_t i = 0; i < futs.size(); ++i) out[i] = futs[i].get();
  return out;
}

inline std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

inline std::vector<AblationRow> run_ablation(const ExperimentConfig& base, std::size_t seeds, const RunOptions& opt = {}) {
  auto rows = ablation_rows();
  std::vector<std::function<double()>> cells;
  const auto seed_values = seed_list(base.seed, seeds);
  for (const auto& row : rows) {
    for (std::uint64_t s : seed_values) {
      ExperimentConfig c = base;
      c.seed = s;
      c.ablation = row.switches;
      std::string dir = row.name;
      for (char& ch : dir) {
        if (ch == '/' || ch == ' ') ch = '_';
      }
      c.output_dir = (std::filesystem::path(base.output_dir) / "ablation" / dir / ("seed_" + std::to_string(s))).string();
      cells.push_back([c, opt] { return run_experiment(c, RunOptions{opt.write_files, true}).test_error; });
    }
  }
  const auto errs = run_cells(cells, opt.single_thread);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    rows[r].error = summarize({errs.begin() + static_cast<std::ptrdiff_t>(r * seeds),
                               errs.begin() + static_cast<std::ptrdiff_t>((r + 1) * seeds)});
  }
  return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| Method | Error (%) |\n|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.name << " | " << std::fixed << std::setprecision(2) << 100.0 * r.error.mean << " +- "
       << 100.0 * r.error.stddev << " |\n";
  }
  return os.str();
}

enum class SweepAxis { PrototypesPerClass, PrototypeInterval };

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "pk") return SweepAxis::PrototypesPerClass;
  if (s == "ip") return SweepAxis::PrototypeInterval;
  throw ConfigError("sweep: unknown axis '" + s + "' (expected pk or ip)");
}

struct SweepRow {
  std::size_t value = 0;
  SummaryStats error;
};

inline std::vector<SweepRow> run_sensitivity(SweepAxis axis, const std::vector<std::size_t>& values,
                                             const ExperimentConfig& base, std::size_t seeds,
                                             const RunOptions& opt = {}) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  std::vector<std::function<double()>> cells;
  const auto seed_values = seed_list(base.seed, seeds);
  for (std::size_t v : values) {
    for (std::uint64_t s : seed_values) {
      ExperimentConfig c = base;
      c.seed = s;
      std::string tag;
      if (axis == SweepAxis::PrototypesPerClass) {
        if (v == 0) throw ConfigError("sweep: p_k must be positive");
        c.train.prototypes_per_class = v;
        tag = "pk_" + std::to_string(v);
      } else {
        c.train.prototype_interval = v;
        tag = "ip_" + std::to_string(v);
      }
      c.output_dir = (std::filesystem::path(base.output_dir) / "sweep" / tag / ("seed_" + std::to_string(s))).string();
      cells.push_back([c, opt] { return run_experiment(c, RunOptions{opt.write_files, true}).test_error; });
    }
  }
  const auto errs = run_cells(cells, opt.single_thread);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    rows.push_back({values[i], summarize({errs.begin() + static_cast<std::ptrdiff_t>(i * seeds),
                                          errs.begin() + static_cast<std::ptrdiff_t>((i + 1) * seeds)})});
  }
  return rows;
}

// One row per swept value.
inline void write_sweep_csv(const std::filesystem::path& path, SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write sweep file '" + path.string() + "'");
  out << "axis,value,mean_error,std_error,seeds\n";
  for (const auto& r : rows) {
    out << (axis == SweepAxis::PrototypesPerClass ? "pk" : "ip") << ',' << r.value << ','
        << format_double(r.error.mean) << ',' << format_double(r.error.stddev) << ',' << r.error.values.size() << '\n';
  }
}

inline void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write ablation file '" + path.string() + "'");
  out << "method,use_augf,use_con_f,use_con_g,mean_error,std_error,seeds\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.switches.use_augf << ',' << r.switches.use_con_f << ',' << r.switches.use_con_g << ','
        << format_double(r.error.mean) << ',' << format_double(r.error.stddev) << ',' << r.error.values.size() << '\n';
  }
}

}  // namespace featmatch
