// Copyright 2026 The fsdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "fsdiff/denoiser.hpp"

namespace fsdiff {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'D', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

// All scalars are encoded little-endian regardless of host order.
template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string context)
      : data_(data), context_(std::move(context)) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > data_.size()) fail("truncated");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  std::string get_bytes(size_t n) {
    if (pos_ + n > data_.size()) fail("truncated");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("corrupt checkpoint (" + context_ + "): " + why);
  }

 private:
  const std::string& data_;
  std::string context_;
  size_t pos_ = 0;
};

void put_tensor(std::string& out, const Tensor& t) {
  put<uint32_t>(out, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape()) put<int64_t>(out, d);
  for (int64_t i = 0; i < t.numel(); ++i) put<double>(out, t[i]);
}

Tensor get_tensor(Reader& r) {
  const uint32_t ndim = r.get<uint32_t>();
  if (ndim > 8) r.fail("implausible tensor rank");
  std::vector<int64_t> shape(ndim);
  for (auto& d : shape) {
    d = r.get<int64_t>();
    if (d < 0 || d > (int64_t{1} << 32)) r.fail("implausible tensor dim");
  }
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.get<double>();
  return t;
}

void put_section(std::string& out, const std::string& name, const std::string& payload) {
  put<uint32_t>(out, static_cast<uint32_t>(name.size()));
  out += name;
  put<uint64_t>(out, payload.size());
  out += payload;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kVersion);

  put_section(out, "config", serialize_key_values(to_key_values(ckpt.config)));

  std::string sched;
  put<int32_t>(sched, ckpt.schedule.T);
  put<double>(sched, ckpt.schedule.beta_start);
  put<double>(sched, ckpt.schedule.beta_end);
  put_section(out, "schedule", sched);

  std::string params;
  put<uint32_t>(params, static_cast<uint32_t>(ckpt.params.tensors.size()));
  for (const Tensor& t : ckpt.params.tensors) put_tensor(params, t);
  put_section(out, "params", params);

  std::string opt;
  put<int64_t>(opt, ckpt.opt_state.step);
  put<uint32_t>(opt, static_cast<uint32_t>(ckpt.opt_state.m.size()));
  for (const Tensor& t : ckpt.opt_state.m) put_tensor(opt, t);
  for (const Tensor& t : ckpt.opt_state.v) put_tensor(opt, t);
  put_section(out, "optimizer", opt);

  std::string rng;
  for (uint64_t w : ckpt.rng_state.s) put<uint64_t>(rng, w);
  put<uint8_t>(rng, ckpt.rng_state.has_spare ? 1 : 0);
  put<double>(rng, ckpt.rng_state.spare);
  put_section(out, "rng", rng);

  std::string meta;
  put<int64_t>(meta, ckpt.iteration);
  put<uint64_t>(meta, params_hash(ckpt.params));
  put_section(out, "meta", meta);

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string data = buf.str();

  Reader top(data, path.string());
  const std::string magic = top.get_bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) top.fail("bad magic");
  const uint32_t version = top.get<uint32_t>();
  if (version != kVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version) + " in " + path.string());
  }

  std::map<std::string, std::string> sections;
  while (!top.at_end()) {
    const uint32_t name_len = top.get<uint32_t>();
    if (name_len > 64) top.fail("implausible section name");
    const std::string name = top.get_bytes(name_len);
    const uint64_t payload_len = top.get<uint64_t>();
    sections[name] = top.get_bytes(payload_len);
  }
  for (const char* required : {"config", "schedule", "params", "optimizer", "rng", "meta"}) {
    if (!sections.count(required)) top.fail(std::string("missing section ") + required);
  }

  Checkpoint ckpt;
  ckpt.config = train_config_from_key_values(parse_key_values(sections["config"]));

  {
    Reader r(sections["schedule"], path.string() + ":schedule");
    const int32_t t = r.get<int32_t>();
    const double bs = r.get<double>();
    const double be = r.get<double>();
    ckpt.schedule = build_schedule(t, bs, be);
  }
  {
    Reader r(sections["params"], path.string() + ":params");
    const uint32_t count = r.get<uint32_t>();
    ckpt.params.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) ckpt.params.tensors.push_back(get_tensor(r));
  }
  {
    Reader r(sections["optimizer"], path.string() + ":optimizer");
    ckpt.opt_state.step = r.get<int64_t>();
    const uint32_t count = r.get<uint32_t>();
    ckpt.opt_state.m.reserve(count);
    ckpt.opt_state.v.reserve(count);
    for (uint32_t i = 0; i < count; ++i) ckpt.opt_state.m.push_back(get_tensor(r));
    for (uint32_t i = 0; i < count; ++i) ckpt.opt_state.v.push_back(get_tensor(r));
  }
  {
    Reader r(sections["rng"], path.string() + ":rng");
    for (uint64_t& w : ckpt.rng_state.s) w = r.get<uint64_t>();
    ckpt.rng_state.has_spare = r.get<uint8_t>() != 0;
    ckpt.rng_state.spare = r.get<double>();
  }
  {
    Reader r(sections["meta"], path.string() + ":meta");
    ckpt.iteration = r.get<int64_t>();
    const uint64_t stored_hash = r.get<uint64_t>();
    if (stored_hash != params_hash(ckpt.params)) r.fail("parameter hash mismatch");
  }

  // Structural sanity: the parameter list must match the echoed config.
  const Denoiser net(ckpt.config.model);
  if (ckpt.params.tensors.size() != net.param_specs().size()) {
    throw std::runtime_error("load_checkpoint: parameter list does not match config in " +
                             path.string());
  }
  for (size_t i = 0; i < ckpt.params.tensors.size(); ++i) {
    if (ckpt.params.tensors[i].shape() != net.param_specs()[i].shape) {
      throw std::runtime_error("load_checkpoint: tensor shape mismatch at " +
                               net.param_specs()[i].name + " in " + path.string());
    }
  }
  return ckpt;
}

Checkpoint load_checkpoint_for(const std::filesystem::path& path,
                               const DenoiserConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config.model == expected)) {
    throw std::runtime_error("checkpoint architecture mismatch: " + path.string() +
                             " was trained with a different model configuration");
  }
  return ckpt;
}

}  // namespace fsdiff
