#include "conceptmem/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "conceptmem/error.hpp"

namespace cmem {

Parameter& ParamSet::add(std::string name, Array value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(Parameter{std::move(name), std::move(value), trainable});
  return params_.back();
}

Parameter& ParamSet::at(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const Parameter& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

bool operator==(const Parameter& a, const Parameter& b) {
  return a.name == b.name && a.trainable == b.trainable && a.value == b.value;
}

bool operator==(const ParamSet& a, const ParamSet& b) { return a.seed_ == b.seed_ && a.params_ == b.params_; }

Array glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Array out(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform(-limit, limit);
  return out;
}

ParamSet* Checkpoint::find(std::string_view ns) {
  for (auto& [name, set] : sections) {
    if (name == ns) return &set;
  }
  return nullptr;
}

const ParamSet* Checkpoint::find(std::string_view ns) const { return const_cast<Checkpoint*>(this)->find(ns); }

namespace {

constexpr char kMagic[8] = {'C', 'M', 'E', 'M', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(Checkpoint::kVersion);
  w.u64(checkpoint.metadata.size());
  w.bytes(checkpoint.metadata);
  w.u32(static_cast<std::uint32_t>(checkpoint.sections.size()));
  for (const auto& [ns, set] : checkpoint.sections) {
    w.u32(static_cast<std::uint32_t>(ns.size()));
    w.bytes(ns);
    w.u64(set.seed());
    w.u32(static_cast<std::uint32_t>(set.size()));
    for (const auto& p : set.entries()) {
      w.u32(static_cast<std::uint32_t>(p.name.size()));
      w.bytes(p.name);
      w.u8(p.trainable ? 1 : 0);
      w.u32(static_cast<std::uint32_t>(p.value.rank()));
      for (std::size_t d : p.value.shape()) w.u64(d);
      for (double v : p.value.data()) w.f64(v);
    }
  }
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw LoadError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = r.bytes(r.u64());
  const std::uint32_t n_sections = r.u32();
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    std::string ns = r.bytes(r.u32());
    ParamSet set(r.u64());
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
      std::string name = r.bytes(r.u32());
      const bool trainable = r.u8() != 0;
      Shape shape(r.u32());
      for (auto& d : shape) d = r.u64();
      std::vector<double> data(element_count(shape));
      for (auto& v : data) v = r.f64();
      set.add(std::move(name), Array(std::move(shape), std::move(data)), trainable);
    }
    ck.sections.emplace_back(std::move(ns), std::move(set));
  }
  if (!r.done()) throw LoadError("trailing bytes after checkpoint payload");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace cmem
