#pragma once

// Binary checkpoint, all integers and doubles little-endian. See
// docs/checkpoint_format.md for the byte layout.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "featmatch/config.hpp"
#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"
#include "featmatch/trainer.hpp"

namespace featmatch {

inline constexpr char kCheckpointMagic[8] = {'F', 'M', 'C', 'K', 'P', 'T', '\0', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) f64(v);
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> b) : buf_(std::move(b)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const std::size_t r = u32();
    const std::size_t c = u32();
    need(r * c * 8);
    Matrix m(r, c);
    for (double& v : m.data()) v = f64();
    return m;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint: unexpected end of file");
  }
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t iteration = 0;
};

struct Checkpoint {
  CheckpointHeader header;
  ExperimentConfig config;
  TrainState state;
  MetricsLog metrics;
};

inline void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& st,
                            const MetricsLog& metrics) {
  ckpt_detail::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(config_hash(cfg));
  w.u64(st.iteration);
  w.u64(st.epoch);
  w.u64(st.extractions);
  w.str(canonical_config(cfg));

  const auto params = st.net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.matrix(p->value);
  }
  const auto& vel = st.optimizer.velocity();
  w.u32(static_cast<std::uint32_t>(vel.size()));
  for (const auto& m : vel) w.matrix(m);

  w.i64(st.prototypes.epoch);
  w.u32(static_cast<std::uint32_t>(st.prototypes.feature_dim));
  w.u32(static_cast<std::uint32_t>(st.prototypes.by_class.size()));
  for (const auto& m : st.prototypes.by_class) w.matrix(m);

  w.u64(st.bank.capacity());
  w.matrix(st.bank.features());
  const auto labels = st.bank.labels();
  for (std::size_t l : labels) w.u64(l);

  w.u32(1);  // RNG streams
  w.str(st.labeled_sampler.save_state());

  w.u32(static_cast<std::uint32_t>(metrics.size()));
  for (const auto& m : metrics) {
    w.u64(m.epoch);
    w.u64(m.iter);
    for (double v : {m.lr, m.l_clf, m.l_con_g, m.l_con_f, m.test_error, m.pl_acc_augf, m.pl_acc_no_augf}) w.f64(v);
  }

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  ckpt_detail::Reader r(std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("checkpoint: bad magic");
  Checkpoint c;
  c.header.version = r.u32();
  if (c.header.version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(c.header.version));
  }
  c.header.config_hash = r.u64();
  c.header.iteration = r.u64();
  TrainState& st = c.state;
  st.iteration = c.header.iteration;
  st.epoch = r.u64();
  st.extractions = r.u64();
  try {
    c.config = config_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: embedded config is not valid JSON: ") + e.what());
  }
  if (config_hash(c.config) != c.header.config_hash) throw FormatError("checkpoint: config hash mismatch");

  const std::uint32_t n_params = r.u32();
  std::vector<std::pair<std::string, Matrix>> loaded;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    loaded.emplace_back(std::move(name), r.matrix());
  }
  // Rebuild the network from the stored tensors (input dim comes from the first layer).
  if (loaded.empty()) throw FormatError("checkpoint: no parameters");
  ModelSpec spec = c.config.model;
  spec.input_dim = loaded.front().second.rows();
  st.net = Network(spec);
  auto params = st.net.parameters();
  if (params.size() != loaded.size()) throw FormatError("checkpoint: parameter count does not match config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != loaded[i].first || !params[i]->value.same_shape(loaded[i].second)) {
      throw FormatError("checkpoint: parameter '" + loaded[i].first + "' does not match the model");
    }
    params[i]->value = std::move(loaded[i].second);
    params[i]->zero_grad();
  }
  st.optimizer = NesterovSgd(params);
  const std::uint32_t n_vel = r.u32();
  if (n_vel != params.size()) throw FormatError("checkpoint: velocity count mismatch");
  for (std::uint32_t i = 0; i < n_vel; ++i) {
    Matrix m = r.matrix();
    if (!m.same_shape(params[i]->value)) throw FormatError("checkpoint: velocity shape mismatch");
    st.optimizer.velocity()[i] = std::move(m);
  }

  st.prototypes.epoch = static_cast<long>(r.i64());
  st.prototypes.feature_dim = r.u32();
  const std::uint32_t n_classes = r.u32();
  for (std::uint32_t i = 0; i < n_classes; ++i) st.prototypes.by_class.push_back(r.matrix());

  const std::uint64_t capacity = r.u64();
  const Matrix feats = r.matrix();
  std::vector<std::size_t> labels(feats.rows());
  for (auto& l : labels) l = r.u64();
  st.bank = MemoryBank(capacity, spec.feature_dim);
  if (feats.rows() > 0) st.bank.record(feats, labels);

  const std::uint32_t n_rng = r.u32();
  if (n_rng != 1) throw FormatError("checkpoint: unexpected RNG stream count");
  st.labeled_sampler.load_state(r.str());

  const std::uint32_t n_rows = r.u32();
  for (std::uint32_t i = 0; i < n_rows; ++i) {
    EpochMetrics m;
    m.epoch = r.u64();
    m.iter = r.u64();
    for (double* v : {&m.lr, &m.l_clf, &m.l_con_g, &m.l_con_f, &m.test_error, &m.pl_acc_augf, &m.pl_acc_no_augf}) {
      *v = r.f64();
    }
    c.metrics.push_back(m);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

}  // namespace featmatch
