#include "cilf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "cilf/errors.hpp"

namespace cilf {
namespace {

constexpr char kMagic[4] = {'C', 'I', 'L', 'F'};
constexpr std::uint8_t kFloat64 = 1;
constexpr std::uint8_t kInt64 = 2;
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  Writer() {
    out_.insert(out_.end(), kMagic, kMagic + 4);
    le(kCheckpointVersion);
    le(std::uint32_t{0});  // record count, patched by take()
  }

  void record(const std::string& name, const std::vector<std::uint64_t>& dims, std::span<const double> data) {
    header(name, kFloat64, dims);
    for (double v : data) le(std::bit_cast<std::uint64_t>(v));
  }
  void ints(const std::string& name, const std::vector<std::int64_t>& values) {
    header(name, kInt64, {values.size()});
    for (auto v : values) le(static_cast<std::uint64_t>(v));
  }
  void tensor(const std::string& name, const Tensor& t) {
    record(name, std::vector<std::uint64_t>(t.shape().begin(), t.shape().end()), t.data());
  }

  std::vector<std::uint8_t> take() {
    for (std::size_t i = 0; i < 4; ++i) out_[8 + i] = static_cast<std::uint8_t>(count_ >> (8 * i));
    return std::move(out_);
  }

 private:
  template <typename U>
  void le(U u) {
    for (std::size_t i = 0; i < sizeof u; ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }

  void header(const std::string& name, std::uint8_t dtype, const std::vector<std::uint64_t>& dims) {
    le(static_cast<std::uint32_t>(name.size()));
    out_.insert(out_.end(), name.begin(), name.end());
    out_.push_back(dtype);
    le(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) le(d);
    ++count_;
  }

  std::vector<std::uint8_t> out_;
  std::uint32_t count_ = 0;
};

struct Record {
  std::uint8_t dtype = kFloat64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  std::int64_t offset = 0;

  std::size_t count() const { return dtype == kFloat64 ? f64.size() : i64.size(); }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U le(const char* field) {
    need(sizeof(U), field);
    U u = 0;
    for (std::size_t i = 0; i < sizeof u; ++i) u |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof u;
    return u;
  }

  std::string text(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::int64_t pos() const { return static_cast<std::int64_t>(pos_); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* field) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + field, pos());
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::map<std::string, Record> read_records(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const std::string magic = in.text(4, "magic");
  if (magic != std::string(kMagic, 4)) throw FormatError("checkpoint magic is not CILF", 0);
  const auto version_at = in.pos();
  const auto version = in.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  const auto count = in.le<std::uint32_t>("record count");
  std::map<std::string, Record> out;
  for (std::uint32_t r = 0; r < count; ++r) {
    Record rec;
    rec.offset = in.pos();
    const auto name_len = in.le<std::uint32_t>("record name length");
    const std::string name = in.text(name_len, "record name");
    const auto dtype_at = in.pos();
    rec.dtype = in.le<std::uint8_t>("dtype tag");
    if (rec.dtype != kFloat64 && rec.dtype != kInt64) {
      throw FormatError("record '" + name + "' has unknown dtype tag " + std::to_string(rec.dtype), dtype_at);
    }
    const auto rank_at = in.pos();
    const auto rank = in.le<std::uint32_t>("rank");
    if (rank > kMaxRank) throw FormatError("record '" + name + "' has implausible rank", rank_at);
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.dims.push_back(in.le<std::uint64_t>("dimension"));
      n *= rec.dims.back();
    }
    if (n > bytes.size()) throw FormatError("record '" + name + "' payload exceeds file size", in.pos());
    if (rec.dtype == kFloat64) {
      rec.f64.reserve(n);
      for (std::uint64_t i = 0; i < n; ++i) rec.f64.push_back(std::bit_cast<double>(in.le<std::uint64_t>("payload")));
    } else {
      rec.i64.reserve(n);
      for (std::uint64_t i = 0; i < n; ++i) rec.i64.push_back(static_cast<std::int64_t>(in.le<std::uint64_t>("payload")));
    }
    if (!out.emplace(name, std::move(rec)).second) throw FormatError("duplicate record '" + name + "'", out[name].offset);
  }
  if (!in.done()) throw FormatError("trailing bytes after the last record", in.pos());
  return out;
}

const Record& require(const std::map<std::string, Record>& recs, const std::string& name, std::uint8_t dtype) {
  auto it = recs.find(name);
  if (it == recs.end()) throw FormatError("checkpoint lacks record '" + name + "'");
  if (it->second.dtype != dtype) throw FormatError("record '" + name + "' has the wrong dtype", it->second.offset);
  return it->second;
}

std::int64_t scalar_int(const std::map<std::string, Record>& recs, const std::string& name) {
  const auto& r = require(recs, name, kInt64);
  if (r.i64.size() != 1) throw FormatError("record '" + name + "' must hold one value", r.offset);
  return r.i64[0];
}

std::vector<std::size_t> int_list(const std::map<std::string, Record>& recs, const std::string& name) {
  const auto& r = require(recs, name, kInt64);
  std::vector<std::size_t> out;
  for (auto v : r.i64) {
    if (v < 0) throw FormatError("record '" + name + "' holds a negative value", r.offset);
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Tensor to_tensor(const Record& r, const std::string& name) {
  if (r.dims.empty()) throw FormatError("record '" + name + "' has rank 0", r.offset);
  Shape shape(r.dims.begin(), r.dims.end());
  for (auto d : shape) {
    if (d == 0) throw FormatError("record '" + name + "' has a zero dimension", r.offset);
  }
  return Tensor(std::move(shape), r.f64);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const IncrementalModel& model, const PrototypeMemory& memory,
                                            std::size_t stage) {
  Writer w;
  const ArchSpec& arch = model.extractor.arch();
  w.ints("meta/stage", {static_cast<std::int64_t>(stage)});
  w.ints("meta/arch_kind", {arch.kind == ArchKind::Mlp ? 0 : 1});
  w.ints("meta/channels", {static_cast<std::int64_t>(arch.channels)});
  w.ints("meta/side", {static_cast<std::int64_t>(arch.side)});
  w.ints("meta/hidden", std::vector<std::int64_t>(arch.hidden.begin(), arch.hidden.end()));
  w.ints("meta/conv_channels", std::vector<std::int64_t>(arch.conv_channels.begin(), arch.conv_channels.end()));
  w.ints("meta/feature_dim", {static_cast<std::int64_t>(arch.feature_dim)});
  w.ints("meta/views_per_class", {static_cast<std::int64_t>(model.head.views_per_class())});

  for (const auto& [name, t] : model.extractor.named_tensors()) w.tensor(name, *t);
  if (model.head.num_nodes() > 0) {
    w.tensor("head/weight", model.head.weight());
    w.tensor("head/bias", model.head.bias());
  }

  const std::size_t d = memory.feature_dim();
  const auto nodes = memory.nodes();
  w.ints("memory/mode", {static_cast<std::int64_t>(memory.mode())});
  w.ints("memory/feature_dim", {static_cast<std::int64_t>(d)});
  w.record("memory/radius", {1}, std::vector<double>{memory.radius()});
  w.ints("memory/nodes", std::vector<std::int64_t>(nodes.begin(), nodes.end()));
  std::vector<double> protos, covs;
  for (auto k : nodes) {
    const auto mu = memory.prototype(k);
    protos.insert(protos.end(), mu.begin(), mu.end());
    const auto cov = memory.covariance(k);
    covs.insert(covs.end(), cov.begin(), cov.end());
  }
  w.record("memory/prototypes", {nodes.size(), d}, protos);
  const std::size_t cov_len = nodes.empty() ? 0 : covs.size() / nodes.size();
  w.record("memory/covariances", {nodes.size(), cov_len}, covs);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const auto recs = read_records(bytes);
  Checkpoint ck;
  ck.stage = static_cast<std::size_t>(scalar_int(recs, "meta/stage"));

  ArchSpec arch;
  const auto kind = scalar_int(recs, "meta/arch_kind");
  if (kind != 0 && kind != 1) throw FormatError("unknown architecture tag", recs.at("meta/arch_kind").offset);
  arch.kind = kind == 0 ? ArchKind::Mlp : ArchKind::SmallConv;
  arch.channels = static_cast<std::size_t>(scalar_int(recs, "meta/channels"));
  arch.side = static_cast<std::size_t>(scalar_int(recs, "meta/side"));
  arch.hidden = int_list(recs, "meta/hidden");
  arch.conv_channels = int_list(recs, "meta/conv_channels");
  arch.feature_dim = static_cast<std::size_t>(scalar_int(recs, "meta/feature_dim"));
  const auto views = static_cast<std::size_t>(scalar_int(recs, "meta/views_per_class"));
  try {
    Rng init(0);
    ck.model = IncrementalModel(arch, views, init);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint describes an invalid model: ") + e.what());
  }

  for (auto& [name, t] : ck.model.extractor.named_parameters()) {
    const auto& r = require(recs, name, kFloat64);
    Tensor loaded = to_tensor(r, name);
    if (loaded.shape() != t->shape()) {
      throw FormatError("record '" + name + "' has shape " + shape_string(loaded.shape()) + ", model expects " +
                            shape_string(t->shape()),
                        r.offset);
    }
    std::copy(loaded.data().begin(), loaded.data().end(), t->data().begin());
  }
  if (recs.count("head/weight")) {
    const auto& rw = require(recs, "head/weight", kFloat64);
    const auto& rb = require(recs, "head/bias", kFloat64);
    try {
      ck.model.head.assign(to_tensor(rw, "head/weight"), to_tensor(rb, "head/bias"));
    } catch (const DimensionError& e) {
      throw FormatError(e.what(), rw.offset);
    }
  }

  const auto mode_val = scalar_int(recs, "memory/mode");
  if (mode_val < 0 || mode_val > 2) throw FormatError("unknown covariance mode tag", recs.at("memory/mode").offset);
  const auto mode = static_cast<CovarianceMode>(mode_val);
  const auto d = static_cast<std::size_t>(scalar_int(recs, "memory/feature_dim"));
  if (d == 0) throw FormatError("memory feature dimension is 0", recs.at("memory/feature_dim").offset);
  ck.memory = PrototypeMemory(d, mode);
  const auto& radius = require(recs, "memory/radius", kFloat64);
  if (radius.f64.size() != 1) throw FormatError("memory/radius must hold one value", radius.offset);
  ck.memory.set_radius(radius.f64[0]);
  const auto nodes = int_list(recs, "memory/nodes");
  const auto& protos = require(recs, "memory/prototypes", kFloat64);
  const auto& covs = require(recs, "memory/covariances", kFloat64);
  if (protos.f64.size() != nodes.size() * d) throw FormatError("prototype payload does not match node count", protos.offset);
  const std::size_t cov_len = mode == CovarianceMode::Radius ? 0 : mode == CovarianceMode::Diagonal ? d : d * d;
  if (covs.f64.size() != nodes.size() * cov_len) {
    throw FormatError("covariance payload does not match node count", covs.offset);
  }
  VectorMap mu, sigma;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    mu[nodes[i]].assign(protos.f64.begin() + std::ptrdiff_t(i * d), protos.f64.begin() + std::ptrdiff_t((i + 1) * d));
    if (cov_len > 0) {
      sigma[nodes[i]].assign(covs.f64.begin() + std::ptrdiff_t(i * cov_len),
                             covs.f64.begin() + std::ptrdiff_t((i + 1) * cov_len));
    }
  }
  ck.memory.commit(mu, sigma);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const IncrementalModel& model, const PrototypeMemory& memory,
                     std::size_t stage) {
  const auto bytes = encode_checkpoint(model, memory, stage);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cilf
