#include "spikediff/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace spikediff {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'K', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const uint8_t* data, size_t n) {
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

struct Writer {
  std::ofstream f;
  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    SPD_REQUIRE(f.good(), "checkpoint: cannot open ", path, " for writing");
  }
  void bytes(const void* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    SPD_REQUIRE(f.good(), "checkpoint: write failed");
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void string(const std::string& s) {
    SPD_REQUIRE(s.size() < 65536, "checkpoint: name too long");
    pod<uint16_t>(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor_map(const std::map<std::string, Tensor>& m) {
    pod<uint32_t>(static_cast<uint32_t>(m.size()));
    for (const auto& [name, t] : m) {
      string(name);
      pod<uint8_t>(static_cast<uint8_t>(t.rank()));
      for (int64_t d : t.shape) pod<int64_t>(d);
      const auto* payload = reinterpret_cast<const uint8_t*>(t.data.data());
      size_t n = t.data.size() * sizeof(float);
      bytes(payload, n);
      pod<uint64_t>(fnv1a(payload, n));
    }
  }
};

struct Reader {
  std::ifstream f;
  std::string path;
  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    SPD_REQUIRE(f.good(), "checkpoint: cannot open ", p);
  }
  void bytes(void* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    SPD_REQUIRE(static_cast<size_t>(f.gcount()) == n, "checkpoint: ", path,
                " truncated (wanted ", n, " bytes)");
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string string() {
    uint16_t n = pod<uint16_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::map<std::string, Tensor> tensor_map() {
    std::map<std::string, Tensor> m;
    uint32_t count = pod<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
      std::string name = string();
      uint8_t rank = pod<uint8_t>();
      Shape shape(rank);
      for (auto& d : shape) d = pod<int64_t>();
      Tensor t(shape);
      size_t n = t.data.size() * sizeof(float);
      bytes(t.data.data(), n);
      uint64_t want = pod<uint64_t>();
      uint64_t got = fnv1a(reinterpret_cast<const uint8_t*>(t.data.data()), n);
      SPD_REQUIRE(got == want, "checkpoint: ", path, ": checksum mismatch for tensor '", name,
                  "' (payload corrupt)");
      m.emplace(std::move(name), std::move(t));
    }
    return m;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<uint32_t>(kVersion);

  w.pod<int32_t>(ckpt.unet.image_size);
  w.pod<int32_t>(ckpt.unet.in_channels);
  w.pod<int32_t>(ckpt.unet.base_channels);
  w.pod<uint32_t>(static_cast<uint32_t>(ckpt.unet.channel_multipliers.size()));
  for (int m : ckpt.unet.channel_multipliers) w.pod<int32_t>(m);
  w.pod<int32_t>(ckpt.unet.num_res_blocks);
  w.pod<int32_t>(ckpt.unet.time_embed_dim);
  w.pod<float>(ckpt.unet.neuron.v_threshold);
  w.pod<float>(ckpt.unet.neuron.tau_decay);
  w.pod<float>(ckpt.unet.neuron.surrogate_width);
  w.pod<int32_t>(ckpt.unet.neuron.num_steps);
  w.pod<int32_t>(ckpt.diffusion_T);
  w.pod<uint8_t>(ckpt.lambda_signed ? 1 : 0);
  w.pod<int64_t>(ckpt.train_step);

  w.tensor_map(ckpt.params.tensors);
  w.tensor_map(ckpt.params.buffers);

  w.pod<uint8_t>(ckpt.moments.has_value() ? 1 : 0);
  if (ckpt.moments) {
    w.pod<int64_t>(ckpt.moments->step);
    w.tensor_map(ckpt.moments->m);
    w.tensor_map(ckpt.moments->v);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  SPD_REQUIRE(std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, "checkpoint: ", path,
              ": bad magic, not a checkpoint file");
  uint32_t version = r.pod<uint32_t>();
  SPD_REQUIRE(version == kVersion, "checkpoint: ", path, ": unsupported version ", version,
              " (this build reads version ", kVersion, ")");

  Checkpoint ckpt;
  ckpt.unet.image_size = r.pod<int32_t>();
  ckpt.unet.in_channels = r.pod<int32_t>();
  ckpt.unet.base_channels = r.pod<int32_t>();
  uint32_t nm = r.pod<uint32_t>();
  ckpt.unet.channel_multipliers.resize(nm);
  for (auto& m : ckpt.unet.channel_multipliers) m = r.pod<int32_t>();
  ckpt.unet.num_res_blocks = r.pod<int32_t>();
  ckpt.unet.time_embed_dim = r.pod<int32_t>();
  ckpt.unet.neuron.v_threshold = r.pod<float>();
  ckpt.unet.neuron.tau_decay = r.pod<float>();
  ckpt.unet.neuron.surrogate_width = r.pod<float>();
  ckpt.unet.neuron.num_steps = r.pod<int32_t>();
  ckpt.diffusion_T = r.pod<int32_t>();
  ckpt.lambda_signed = r.pod<uint8_t>() != 0;
  ckpt.train_step = r.pod<int64_t>();

  ckpt.params.tensors = r.tensor_map();
  ckpt.params.buffers = r.tensor_map();

  if (r.pod<uint8_t>()) {
    AdamState st;
    st.step = r.pod<int64_t>();
    st.m = r.tensor_map();
    st.v = r.tensor_map();
    ckpt.moments = std::move(st);
  }
  return ckpt;
}

}  // namespace spikediff
