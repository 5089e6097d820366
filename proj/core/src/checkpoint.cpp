#include "cmwm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cmwm {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size())
      throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  bool done() const { return pos == bytes.size(); }
};

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.push_back('C');
  out.push_back('M');
  out.push_back('W');
  out.push_back('M');
  put_u32(out, ckpt.version);
  put_u32(out, static_cast<uint32_t>(ckpt.config_json.size()));
  out.insert(out.end(), ckpt.config_json.begin(), ckpt.config_json.end());
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& p = ckpt.params[i];
    if (i > 0 && !(ckpt.params[i - 1].name < p.name))
      throw std::logic_error("checkpoint: params must be in name order");
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<uint32_t>(p.shape.size()));
    int64_t numel = 1;
    for (int d : p.shape) {
      put_u64(out, static_cast<uint64_t>(d));
      numel *= d;
    }
    if (numel != static_cast<int64_t>(p.data.size()))
      throw std::logic_error("checkpoint: data does not match dims");
    const size_t at = out.size();
    out.resize(at + p.data.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + at, p.data.data(), p.data.size() * 4);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  if (r.str(4) != "CMWM") throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  const uint32_t json_len = r.u32();
  ckpt.config_json = r.str(json_len);
  while (!r.done()) {
    ParamBlob p;
    p.name = r.str(r.u32());
    const uint32_t rank = r.u32();
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint64_t d = r.u64();
      p.shape.push_back(static_cast<int>(d));
      numel *= static_cast<int64_t>(d);
    }
    p.data.resize(static_cast<size_t>(numel));
    r.need(static_cast<size_t>(numel) * 4);
    std::memcpy(p.data.data(), bytes.data() + r.pos,
                static_cast<size_t>(numel) * 4);
    r.pos += static_cast<size_t>(numel) * 4;
    if (!ckpt.params.empty() && !(ckpt.params.back().name < p.name))
      throw std::runtime_error("checkpoint: params out of order");
    ckpt.params.push_back(std::move(p));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: short write " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("checkpoint: short read " + path);
  return deserialize_checkpoint(bytes);
}

}  // namespace cmwm
