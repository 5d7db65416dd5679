#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>

#include <zlib.h>

#include "wflow/errors.hpp"
#include "wflow/flow_chain.hpp"

// Layout (little-endian):
//   "WFLW" | u16 version | u64 payload length | payload | u32 crc32(payload)
// payload = sequence of sections, each u8 tag | u64 length | bytes.

namespace wflow {
namespace {

enum Tag : std::uint8_t { kMeta = 1, kBlock = 2, kBase = 3 };

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { buf_ += s; }
  const std::string& str() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), end_(p + n) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  Reader sub(std::size_t n) {
    need(n);
    Reader r(p_, n);
    p_ += n;
    return r;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw FormatError("checkpoint truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p_[i])) << (8 * i);
    p_ += n;
    return v;
  }
  const char* p_;
  const char* end_;
};

std::uint32_t crc_of(const std::string& s) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
  return static_cast<std::uint32_t>(c);
}

void section(Writer& out, Tag tag, const Writer& body) {
  out.u8(tag);
  out.u64(body.str().size());
  out.bytes(body.str());
}

void write_gaussian(Writer& w, const Gaussian& g) {
  const auto d = g.mean().size();
  for (Eigen::Index i = 0; i < d; ++i) w.f64(g.mean()(i));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) w.f64(g.cov()(i, j));
}

Gaussian read_gaussian(Reader& r, std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::VectorXd mu(d);
  Eigen::MatrixXd cov(d, d);
  for (Eigen::Index i = 0; i < d; ++i) mu(i) = r.f64();
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = r.f64();
  try {
    return Gaussian(mu, cov);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint base density: ") + e.what());
  }
}

Tensor read_tensor(Reader& r, std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data()) v = r.f64();
  return t;
}

FlowBlock read_block(Reader r, std::size_t dim) {
  TimeInterval iv;
  iv.begin = r.f64();
  iv.end = r.f64();
  const std::uint8_t scheme = r.u8();
  if (scheme > 1) throw FormatError("checkpoint: unknown integration scheme");
  const std::uint32_t steps = r.u32();
  const double time_scale = r.f64();
  const bool trained = r.u8() != 0;
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 64) throw FormatError("checkpoint: implausible layer count");
  std::vector<DenseLayer> layers;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t out = r.u32();
    const std::uint32_t in = r.u32();
    const std::uint8_t act = r.u8();
    if (act > 2) throw FormatError("checkpoint: unknown activation");
    if (out == 0 || in == 0 || out > 1u << 16 || in > 1u << 16) throw FormatError("checkpoint: implausible layer shape");
    DenseLayer layer;
    layer.weight = read_tensor(r, out, in);
    layer.bias = read_tensor(r, 1, out);
    layer.activation = static_cast<Activation>(act);
    layers.push_back(std::move(layer));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes in block section");
  try {
    VelocityField field(dim, Mlp(std::move(layers)), iv, time_scale);
    return FlowBlock{std::move(field), IntegratorConfig{static_cast<Scheme>(scheme), steps, iv}, trained};
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint block: ") + e.what());
  }
}

AnalyticDensity read_base(Reader r, std::size_t dim) {
  const std::uint8_t kind = r.u8();
  const std::uint32_t d = r.u32();
  if (d != dim) throw FormatError("checkpoint: base density dimension differs from chain");
  if (kind == 0) {
    Gaussian g = read_gaussian(r, d);
    if (!r.done()) throw FormatError("checkpoint: trailing bytes in base section");
    return AnalyticDensity(std::move(g));
  }
  if (kind != 1) throw FormatError("checkpoint: unknown base density kind");
  const std::uint32_t k = r.u32();
  if (k == 0 || k > 1u << 16) throw FormatError("checkpoint: implausible mixture size");
  Mixture mix;
  for (std::uint32_t i = 0; i < k; ++i) {
    mix.weights.push_back(r.f64());
    mix.components.push_back(read_gaussian(r, d));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes in base section");
  try {
    return AnalyticDensity(std::move(mix));
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint base density: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(const FlowChain& chain, std::ostream& os) {
  if (chain.base().is_potential()) throw std::invalid_argument("cannot checkpoint a chain with a potential-only base");
  Writer payload;
  {
    Writer meta;
    meta.u32(static_cast<std::uint32_t>(chain.dim()));
    meta.u32(static_cast<std::uint32_t>(chain.size()));
    section(payload, kMeta, meta);
  }
  for (const FlowBlock& b : chain.blocks()) {
    Writer w;
    w.f64(b.field.interval().begin);
    w.f64(b.field.interval().end);
    w.u8(static_cast<std::uint8_t>(b.integrator.scheme));
    w.u32(b.integrator.steps);
    w.f64(b.field.time_scale());
    w.u8(b.trained ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(b.field.net().layers().size()));
    for (const DenseLayer& l : b.field.net().layers()) {
      w.u32(static_cast<std::uint32_t>(l.weight.rows()));
      w.u32(static_cast<std::uint32_t>(l.weight.cols()));
      w.u8(static_cast<std::uint8_t>(l.activation));
      for (double v : l.weight.data()) w.f64(v);
      for (double v : l.bias.data()) w.f64(v);
    }
    section(payload, kBlock, w);
  }
  {
    Writer w;
    if (chain.base().is_gaussian()) {
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(chain.dim()));
      write_gaussian(w, chain.base().gaussian());
    } else {
      const Mixture& mix = chain.base().mixture();
      w.u8(1);
      w.u32(static_cast<std::uint32_t>(chain.dim()));
      w.u32(static_cast<std::uint32_t>(mix.weights.size()));
      for (std::size_t k = 0; k < mix.weights.size(); ++k) {
        w.f64(mix.weights[k]);
        write_gaussian(w, mix.components[k]);
      }
    }
    section(payload, kBase, w);
  }

  Writer file;
  file.bytes("WFLW");
  file.u16(kCheckpointVersion);
  file.u64(payload.str().size());
  file.bytes(payload.str());
  file.u32(crc_of(payload.str()));
  os.write(file.str().data(), static_cast<std::streamsize>(file.str().size()));
  if (!os) throw FormatError("failed to write checkpoint");
}

void save_checkpoint(const FlowChain& chain, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  save_checkpoint(chain, os);
}

FlowChain load_checkpoint(std::istream& is) {
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Reader r(bytes.data(), bytes.size());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "WFLW", 4) != 0) throw FormatError("not a wflow checkpoint (bad magic)");
  r.sub(4);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = r.u64();
  if (len > bytes.size()) throw FormatError("checkpoint truncated");
  const std::string payload_bytes = bytes.substr(14, len);
  Reader payload = r.sub(len);
  const std::uint32_t crc = r.u32();
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  if (crc != crc_of(payload_bytes)) throw FormatError("checkpoint checksum mismatch (file is corrupted)");

  std::size_t dim = 0, n_blocks = 0;
  bool have_meta = false;
  std::vector<FlowBlock> blocks;
  std::optional<AnalyticDensity> base;
  while (!payload.done()) {
    const std::uint8_t tag = payload.u8();
    const std::uint64_t n = payload.u64();
    Reader body = payload.sub(n);
    if (tag == kMeta) {
      dim = body.u32();
      n_blocks = body.u32();
      have_meta = true;
    } else if (!have_meta) {
      throw FormatError("checkpoint: metadata section must come first");
    } else if (tag == kBlock) {
      blocks.push_back(read_block(body, dim));
    } else if (tag == kBase) {
      base = read_base(body, dim);
    }
    // Unknown sections are skipped.
  }
  if (!have_meta || !base || blocks.size() != n_blocks) throw FormatError("checkpoint: missing sections");
  try {
    return FlowChain(std::move(blocks), std::move(*base));
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

FlowChain load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace wflow
