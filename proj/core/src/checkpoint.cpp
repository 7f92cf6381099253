#include "exdrop/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace exdrop {
namespace {

constexpr char kMagic[8] = {'E', 'X', 'D', 'R', 'O', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t len) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

void append_raw(std::string& buf, const void* p, std::size_t len) {
  buf.append(static_cast<const char*>(p), len);
}

void append_u32(std::string& buf, std::uint32_t v) { append_raw(buf, &v, sizeof v); }
void append_u64(std::string& buf, std::uint64_t v) { append_raw(buf, &v, sizeof v); }

// Bounds-checked cursor over the loaded file body.
class Reader {
 public:
  Reader(const char* data, std::size_t len, std::string path)
      : data_(data), len_(len), path_(std::move(path)) {}

  void read(void* out, std::size_t n) {
    if (pos_ + n > len_) {
      throw std::runtime_error("load_checkpoint: '" + path_ + "' is truncated");
    }
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, sizeof v);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v;
    read(&v, sizeof v);
    return v;
  }

  std::string str(std::size_t n) {
    if (pos_ + n > len_) {
      throw std::runtime_error("load_checkpoint: '" + path_ + "' is truncated");
    }
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == len_; }

 private:
  const char* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
  std::string path_;
};

Matrix take_entry(std::map<std::string, Matrix>& entries, const std::string& name,
                  const std::string& path) {
  auto it = entries.find(name);
  if (it == entries.end()) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is missing entry '" +
                             name + "'");
  }
  Matrix m = std::move(it->second);
  entries.erase(it);
  return m;
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::string& path) {
  // The canonical walk only reads here; named_params wants a mutable ref.
  auto named = named_params(const_cast<EncoderParams&>(params));

  std::string buf;
  append_raw(buf, kMagic, sizeof kMagic);
  append_u32(buf, kVersion);
  append_u32(buf, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, m] : named) {
    append_u32(buf, static_cast<std::uint32_t>(name.size()));
    append_raw(buf, name.data(), name.size());
    append_u64(buf, m->rows());
    append_u64(buf, m->cols());
    append_raw(buf, m->data(), m->size() * sizeof(double));
  }
  append_u64(buf, fnv1a(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write to '" + path + "' failed");
}

EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t kMinSize = sizeof kMagic + 2 * sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (body.size() < kMinSize) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is too short to be a checkpoint");
  }

  const std::size_t payload_len = body.size() - sizeof(std::uint64_t);
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, body.data() + payload_len, sizeof stored_sum);
  if (fnv1a(body.data(), payload_len) != stored_sum) {
    throw std::runtime_error("load_checkpoint: checksum mismatch in '" + path + "'");
  }

  Reader r(body.data(), payload_len, path);
  char magic[sizeof kMagic];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("load_checkpoint: '" + path + "' has version " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kVersion));
  }

  const std::uint32_t count = r.u32();
  std::map<std::string, Matrix> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows * cols > (1ull << 32)) {
      throw std::runtime_error("load_checkpoint: entry '" + name + "' in '" + path +
                               "' has implausible shape");
    }
    Matrix m(rows, cols);
    r.read(m.data(), m.size() * sizeof(double));
    if (!entries.emplace(std::move(name), std::move(m)).second) {
      throw std::runtime_error("load_checkpoint: duplicate entry in '" + path + "'");
    }
  }
  if (!r.done()) {
    throw std::runtime_error("load_checkpoint: trailing bytes in '" + path + "'");
  }

  // Layer count comes from the entry names themselves.
  std::size_t layers = 0;
  for (const auto& [name, m] : entries) {
    if (name.rfind("layer", 0) == 0) {
      const std::size_t dot = name.find('.');
      if (dot == std::string::npos || dot == 5) {
        throw std::runtime_error("load_checkpoint: malformed entry name '" + name + "'");
      }
      const std::size_t idx = std::stoul(name.substr(5, dot - 5));
      layers = std::max(layers, idx + 1);
    }
  }

  EncoderParams params;
  params.embed = take_entry(entries, "embed", path);
  params.cls = take_entry(entries, "cls", path);
  params.pos = take_entry(entries, "pos", path);
  params.layers.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = "layer" + std::to_string(l) + ".";
    auto& lw = params.layers[l];
    lw.w_q = take_entry(entries, base + "w_q", path);
    lw.w_k = take_entry(entries, base + "w_k", path);
    lw.w_v = take_entry(entries, base + "w_v", path);
    lw.w_o = take_entry(entries, base + "w_o", path);
    lw.w_ff1 = take_entry(entries, base + "w_ff1", path);
    lw.w_ff2 = take_entry(entries, base + "w_ff2", path);
    lw.ln1_gain = take_entry(entries, base + "ln1_gain", path);
    lw.ln1_bias = take_entry(entries, base + "ln1_bias", path);
    lw.ln2_gain = take_entry(entries, base + "ln2_gain", path);
    lw.ln2_bias = take_entry(entries, base + "ln2_bias", path);
  }
  params.final_gain = take_entry(entries, "final_gain", path);
  params.final_bias = take_entry(entries, "final_bias", path);
  params.head_w = take_entry(entries, "head_w", path);
  params.head_b = take_entry(entries, "head_b", path);

  if (!entries.empty()) {
    throw std::runtime_error("load_checkpoint: unexpected entry '" +
                             entries.begin()->first + "' in '" + path + "'");
  }
  return params;
}

}  // namespace exdrop
