#pragma once

// Checkpoint file layout (all integers and doubles little-endian):
//
//   8 bytes   "SCALECKP"
//   u32       format version (1)
//   u64       length L of the metadata block
//   L bytes   JSON metadata: arch, theta, optimizer scalars, epoch counters,
//             array lengths
//   f64 * p   w
//   f64 * p   w0
//   f64 * m   optimizer first buffer
//   f64 * v   optimizer second buffer
//   u64       FNV-1a hash of everything above
//
// Weights are stored as doubles whatever the training precision, which is
// exact for float32 runs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scale/config.hpp"
#include "scale/trainer.hpp"

namespace scale {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

enum class CheckpointErrorKind { missing, corrupt, mismatch };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind k, const std::string& m)
      : std::runtime_error(m), kind_(k) {}
  [[nodiscard]] CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'A', 'L', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename V>
void put_raw(std::vector<char>& b, const V& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  b.insert(b.end(), p, p + sizeof(V));
}

inline void put_doubles(std::vector<char>& b, const std::vector<double>& v) {
  for (double d : v) put_raw(b, d);
}

struct Reader {
  const std::vector<char>& b;
  std::size_t at = 0;
  std::string path;

  void need(std::size_t n) const {
    if (at + n > b.size())
      throw CheckpointError(CheckpointErrorKind::corrupt, "checkpoint '" + path + "' is truncated");
  }
  template <typename V>
  V raw() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b.data() + at, sizeof(V));
    at += sizeof(V);
    return v;
  }
  std::vector<double> doubles(std::size_t n) {
    need(n * sizeof(double));
    std::vector<double> v(n);
    if (n) std::memcpy(v.data(), b.data() + at, n * sizeof(double));
    at += n * sizeof(double);
    return v;
  }
};

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& st) {
  Json meta;
  meta["arch"] = st.params.arch.describe();
  meta["theta"] = detail::theta_to_json(st.theta);
  meta["epoch"] = st.epoch;
  meta["aug_step"] = st.aug_step;
  meta["optim"] = {{"kind", to_string(st.optim.kind)}, {"lr0", st.optim.lr0},
                   {"momentum", st.optim.momentum},    {"beta1", st.optim.beta1},
                   {"beta2", st.optim.beta2},          {"eps", st.optim.eps},
                   {"weight_decay", st.optim.weight_decay},
                   {"horizon", st.optim.horizon},      {"step", st.optim.step}};
  meta["sizes"] = {st.params.w.size(), st.optim.m.size(), st.optim.v.size()};
  // Theta values go through JSON; keep them bit-exact with a raw copy too.
  std::vector<double> theta_raw;
  for (const auto& b : st.theta.blocks) {
    theta_raw.push_back(b.pi);
    theta_raw.push_back(b.alpha);
  }
  const std::string m = meta.dump();

  std::vector<char> buf(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_raw(buf, kCheckpointVersion);
  detail::put_raw(buf, static_cast<std::uint64_t>(m.size()));
  buf.insert(buf.end(), m.begin(), m.end());
  detail::put_doubles(buf, theta_raw);
  detail::put_doubles(buf, std::vector<double>(st.params.w.begin(), st.params.w.end()));
  detail::put_doubles(buf, std::vector<double>(st.params.w0.begin(), st.params.w0.end()));
  detail::put_doubles(buf, st.optim.m);
  detail::put_doubles(buf, st.optim.v);
  detail::put_raw(buf, detail::fnv1a(buf));

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + tmp + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("short write to checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::missing, "checkpoint '" + path + "' not found");
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto corrupt = [&](const std::string& why) {
    return CheckpointError(CheckpointErrorKind::corrupt, "checkpoint '" + path + "': " + why);
  };
  if (buf.size() < 8 + 4 + 8 + 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw corrupt("bad magic");
  {
    std::vector<char> body(buf.begin(), buf.end() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (detail::fnv1a(body) != stored) throw corrupt("checksum mismatch");
  }
  detail::Reader r{buf, 8, path};
  if (r.raw<std::uint32_t>() != kCheckpointVersion) throw corrupt("unsupported version");
  const auto len = r.raw<std::uint64_t>();
  r.need(len);
  Json meta;
  try {
    meta = Json::parse(std::string(buf.data() + r.at, len));
  } catch (const nlohmann::json::exception&) {
    throw corrupt("metadata is not JSON");
  }
  r.at += len;

  TrainState<T> st;
  try {
    st.params.arch = Architecture::parse(meta.at("arch").get<std::string>());
    st.theta = detail::theta_from_json(meta.at("theta"), "theta");
    st.epoch = meta.at("epoch").get<std::size_t>();
    st.aug_step = meta.at("aug_step").get<std::size_t>();
    const Json& o = meta.at("optim");
    st.optim.kind = optimizer_from_string(o.at("kind").get<std::string>());
    st.optim.lr0 = o.at("lr0").get<double>();
    st.optim.momentum = o.at("momentum").get<double>();
    st.optim.beta1 = o.at("beta1").get<double>();
    st.optim.beta2 = o.at("beta2").get<double>();
    st.optim.eps = o.at("eps").get<double>();
    st.optim.weight_decay = o.at("weight_decay").get<double>();
    st.optim.horizon = o.at("horizon").get<std::size_t>();
    st.optim.step = o.at("step").get<std::size_t>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw corrupt(std::string("bad metadata: ") + e.what());
  }
  const auto sizes = meta.at("sizes").get<std::vector<std::size_t>>();
  if (sizes.size() != 3 || sizes[0] != st.params.arch.param_count())
    throw corrupt("weight count does not match the architecture");
  const auto theta_raw = r.doubles(2 * st.theta.size());
  for (std::size_t k = 0; k < st.theta.size(); ++k) {
    st.theta.blocks[k].pi = theta_raw[2 * k];
    st.theta.blocks[k].alpha = theta_raw[2 * k + 1];
  }
  const auto w = r.doubles(sizes[0]);
  const auto w0 = r.doubles(sizes[0]);
  st.params.w.assign(w.begin(), w.end());
  st.params.w0.assign(w0.begin(), w0.end());
  st.optim.m = r.doubles(sizes[1]);
  st.optim.v = r.doubles(sizes[2]);
  if (r.at + 8 != buf.size()) throw corrupt("trailing bytes");
  return st;
}

}  // namespace scale
