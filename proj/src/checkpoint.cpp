#include "hnseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hnseg/json_io.hpp"

namespace hnseg {

namespace {

constexpr char kMagic[8] = {'H', 'N', 'S', 'G', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw FormatError("truncated checkpoint " + path);
  return v;
}

void put_string(std::ofstream& f, const std::string& s) {
  put(f, std::uint32_t(s.size()));
  f.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::ifstream& f, const std::string& path) {
  const auto n = get<std::uint32_t>(f, path);
  std::string s(n, '\0');
  f.read(s.data(), std::streamsize(n));
  if (!f) throw FormatError("truncated checkpoint " + path);
  return s;
}

nlohmann::json arch_to_json(const SegResNetConfig& c) {
  return nlohmann::json{{"in_channels", c.in_channels},
                        {"out_channels", c.out_channels},
                        {"init_filters", c.init_filters},
                        {"blocks_down", c.blocks_down},
                        {"ds_levels", c.ds_levels}};
}

SegResNetConfig arch_from_json(const nlohmann::json& j) {
  SegResNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.init_filters = j.at("init_filters").get<int>();
  c.blocks_down = j.at("blocks_down").get<std::vector<int>>();
  c.ds_levels = j.at("ds_levels").get<int>();
  return c;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t arch_hash(const SegResNetConfig& cfg) {
  return fnv1a64(arch_to_json(cfg).dump());
}

void save_checkpoint(const std::string& path, const SegResNet<float>& net,
                     const AdamW<float>* opt, const CheckpointMeta& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(kMagic, 8);
  put(f, std::uint32_t(1));
  put(f, arch_hash(net.config()));
  put(f, meta.config_hash);
  put(f, std::int32_t(meta.epoch));
  put(f, meta.best_val);
  put(f, std::int32_t(meta.best_epoch));
  put_string(f, arch_to_json(net.config()).dump());

  const auto& names = net.param_names();
  put(f, std::uint32_t(names.size()));
  for (const auto& name : names) {
    const auto& t = net.param(name);
    put_string(f, name);
    put(f, std::uint8_t(t->shape.size()));
    for (const auto d : t->shape) put(f, std::int64_t(d));
    put(f, std::uint8_t(0));  // dtype: float32
    f.write(reinterpret_cast<const char*>(t->values.data()),
            std::streamsize(t->values.size() * sizeof(float)));
  }

  put(f, std::uint8_t(opt ? 1 : 0));
  if (opt) {
    put(f, std::uint64_t(opt->step_count()));
    put(f, std::uint32_t(opt->first_moments().size()));
    for (std::size_t i = 0; i < opt->first_moments().size(); ++i) {
      const auto& m = opt->first_moments()[i];
      const auto& v = opt->second_moments()[i];
      put(f, std::uint64_t(m.size()));
      f.write(reinterpret_cast<const char*>(m.data()),
              std::streamsize(m.size() * sizeof(float)));
      f.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(v.size() * sizeof(float)));
    }
  }
  if (!f) throw IoError("failed writing checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<std::uint64_t> expected_arch_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  const auto version = get<std::uint32_t>(f, path);
  if (version != 1)
    throw UnsupportedError("unsupported checkpoint version in " + path);
  LoadedCheckpoint out;
  const auto stored_arch_hash = get<std::uint64_t>(f, path);
  out.meta.config_hash = get<std::uint64_t>(f, path);
  out.meta.epoch = get<std::int32_t>(f, path);
  out.meta.best_val = get<double>(f, path);
  out.meta.best_epoch = get<std::int32_t>(f, path);
  const std::string arch_json = get_string(f, path);
  out.arch = arch_from_json(nlohmann::json::parse(arch_json));
  if (arch_hash(out.arch) != stored_arch_hash)
    throw FormatError("architecture hash mismatch inside " + path);
  if (expected_arch_hash && *expected_arch_hash != stored_arch_hash)
    throw StateError("checkpoint " + path +
                     " was trained with a different architecture config");

  Rng rng(0);  // values are overwritten below
  out.net = SegResNet<float>::build(out.arch, rng);
  const auto n_params = get<std::uint32_t>(f, path);
  if (n_params != out.net.param_names().size())
    throw FormatError("parameter count mismatch in " + path);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = get_string(f, path);
    const auto ndim = get<std::uint8_t>(f, path);
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(f, path);
    const auto dtype = get<std::uint8_t>(f, path);
    if (dtype != 0) throw UnsupportedError("unsupported dtype in " + path);
    const auto& t = out.net.param(name);
    if (t->shape != shape)
      throw FormatError("shape mismatch for " + name + " in " + path);
    f.read(reinterpret_cast<char*>(t->values.data()),
           std::streamsize(t->values.size() * sizeof(float)));
    if (!f) throw FormatError("truncated checkpoint " + path);
  }

  out.has_opt = get<std::uint8_t>(f, path) != 0;
  if (out.has_opt) {
    out.opt_step = get<std::uint64_t>(f, path);
    const auto n_opt = get<std::uint32_t>(f, path);
    out.opt_m.resize(n_opt);
    out.opt_v.resize(n_opt);
    for (std::uint32_t i = 0; i < n_opt; ++i) {
      const auto n = get<std::uint64_t>(f, path);
      out.opt_m[i].resize(n);
      out.opt_v[i].resize(n);
      f.read(reinterpret_cast<char*>(out.opt_m[i].data()),
             std::streamsize(n * sizeof(float)));
      f.read(reinterpret_cast<char*>(out.opt_v[i].data()),
             std::streamsize(n * sizeof(float)));
      if (!f) throw FormatError("truncated checkpoint " + path);
    }
  }
  return out;
}

}  // namespace hnseg
