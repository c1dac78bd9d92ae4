#include "shrinking/checkpoint.hpp"

#include <cstring>

#include "shrinking/binary_io.hpp"
#include "shrinking/errors.hpp"

namespace shrinking {
namespace {

constexpr char kMagic[8] = {'S', 'H', 'R', 'K', 'C', 'K', 'P', 'T'};

void put_sizes(ByteWriter& w, const std::vector<std::size_t>& v) {
  w.u64(v.size());
  for (std::size_t x : v) w.u64(x);
}

std::vector<std::size_t> read_sizes(ByteReader& r) {
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 8) throw DataError("checkpoint: list length exceeds file size");
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = r.u64();
  return v;
}

void put_matrix(ByteWriter& w, const Matrix& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  w.f64s(m.values());
}

Matrix read_matrix(ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (cols != 0 && rows > r.remaining() / 8 / cols) throw DataError("checkpoint: matrix larger than file");
  Matrix m(rows, cols);
  r.f64s(m.values());
  return m;
}

void put_hidden(ByteWriter& w, const UnitHidden& h) {
  for (const auto* v : {&h.self_gate, &h.edge_kernel, &h.self_kernel, &h.normalizer, &h.gate_self, &h.gate_up}) {
    put_sizes(w, *v);
  }
}

UnitHidden read_hidden(ByteReader& r) {
  UnitHidden h;
  for (auto* v : {&h.self_gate, &h.edge_kernel, &h.self_kernel, &h.normalizer, &h.gate_self, &h.gate_up}) {
    *v = read_sizes(r);
  }
  return h;
}

void put_params(ByteWriter& w, const NetworkParams& p) {
  std::size_t count = 0;
  p.for_each_parameter([&](const Matrix&) { ++count; });
  w.u64(count);
  p.for_each_parameter([&](const Matrix& m) { put_matrix(w, m); });
}

// Weights are rebuilt from the config for their structure, then overwritten.
NetworkParams read_params(ByteReader& r, const NetworkConfig& config) {
  NetworkParams p = build_network(config, 0);
  const std::uint64_t count = r.u64();
  std::size_t expected = 0;
  p.for_each_parameter([&](const Matrix&) { ++expected; });
  if (count != expected) throw DataError("checkpoint: parameter block count does not match the network config");
  p.for_each_parameter([&](Matrix& m) {
    Matrix loaded = read_matrix(r);
    if (!loaded.same_shape(m)) throw DataError("checkpoint: parameter block shape does not match the network config");
    m = std::move(loaded);
  });
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof kMagic});
  w.u32(kCheckpointVersion);

  const TrainConfig& t = c.train;
  for (double v : {t.lr, t.beta1, t.beta2, t.eps, t.noise_sigma, t.validation_fraction}) w.f64(v);
  for (std::size_t v : {t.batch_size, t.max_epochs, t.patience, t.threads}) w.u64(v);
  w.u64(t.seed);

  w.u32(static_cast<std::uint32_t>(c.class_names.size()));
  for (const auto& n : c.class_names) w.str(n);
  w.u64(c.points);

  const NetworkConfig& n = c.params.config;
  w.u64(n.input_dim);
  w.u64(n.layers.size());
  for (std::size_t l = 0; l < n.layers.size(); ++l) {
    w.u64(n.layers[l].fan_out);
    w.u64(n.layers[l].k);
    w.u64(n.layers[l].out_dim);
    put_hidden(w, n.hidden_for(l));
  }
  put_sizes(w, n.classifier_hidden);
  w.u64(n.classes);

  put_params(w, c.params);
  put_params(w, c.best_params);

  w.u64(c.adam.step);
  w.u64(c.adam.first_moment.size());
  for (std::size_t i = 0; i < c.adam.first_moment.size(); ++i) {
    put_matrix(w, c.adam.first_moment[i]);
    put_matrix(w, c.adam.second_moment[i]);
  }

  w.u64(c.epoch);
  w.f64(c.best_val_accuracy);
  w.u64(c.best_epoch);
  w.u64(c.epochs_since_best);
  w.u8(c.finished ? 1 : 0);
  w.u64(c.history.size());
  for (const auto& h : c.history) {
    w.u64(h.epoch);
    w.f64(h.train_loss);
    w.f64(h.val_accuracy);
    w.u64(h.steps);
  }
  w.u64(c.step_losses.size());
  w.f64s(c.step_losses);
  seal_with_crc(w);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(what + ": not a checkpoint (bad magic)");
  }
  ByteReader head(bytes, what);
  head.take(sizeof kMagic);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  ByteReader r(verify_crc(bytes, what), what);
  r.take(sizeof kMagic + 4);

  Checkpoint c;
  TrainConfig& t = c.train;
  for (double* v : {&t.lr, &t.beta1, &t.beta2, &t.eps, &t.noise_sigma, &t.validation_fraction}) *v = r.f64();
  for (std::size_t* v : {&t.batch_size, &t.max_epochs, &t.patience, &t.threads}) *v = r.u64();
  t.seed = r.u64();

  const std::uint32_t classes = r.u32();
  for (std::uint32_t i = 0; i < classes; ++i) c.class_names.push_back(r.str());
  c.points = r.u64();

  NetworkConfig n;
  n.input_dim = r.u64();
  const std::uint64_t layers = r.u64();
  if (layers > r.remaining()) throw DataError(what + ": corrupt layer count");
  for (std::uint64_t l = 0; l < layers; ++l) {
    LayerSpec s;
    s.fan_out = r.u64();
    s.k = r.u64();
    s.out_dim = r.u64();
    s.hidden = read_hidden(r);
    n.layers.push_back(s);
  }
  n.classifier_hidden = read_sizes(r);
  n.classes = r.u64();
  try {
    validate_config(n);
    c.params = read_params(r, n);
    c.best_params = read_params(r, n);
  } catch (const ConfigError& e) {
    throw DataError(what + ": " + e.what());
  }

  c.adam.step = r.u64();
  const std::uint64_t moments = r.u64();
  if (moments > r.remaining()) throw DataError(what + ": corrupt moment count");
  for (std::uint64_t i = 0; i < moments; ++i) {
    c.adam.first_moment.push_back(read_matrix(r));
    c.adam.second_moment.push_back(read_matrix(r));
  }

  c.epoch = r.u64();
  c.best_val_accuracy = r.f64();
  c.best_epoch = r.u64();
  c.epochs_since_best = r.u64();
  c.finished = r.u8() != 0;
  const std::uint64_t hist = r.u64();
  if (hist > r.remaining() / 32) throw DataError(what + ": corrupt history length");
  for (std::uint64_t i = 0; i < hist; ++i) {
    EpochRecord h;
    h.epoch = r.u64();
    h.train_loss = r.f64();
    h.val_accuracy = r.f64();
    h.steps = r.u64();
    c.history.push_back(h);
  }
  const std::uint64_t steps = r.u64();
  if (steps > r.remaining() / 8) throw DataError(what + ": corrupt step-loss length");
  c.step_losses.resize(steps);
  r.f64s(c.step_losses);
  if (r.remaining() != 0) throw DataError(what + ": trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace shrinking
