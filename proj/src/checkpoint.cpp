#include "cep/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cep {

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument("checkpoint: " + msg + " at byte offset " +
                                std::to_string(pos));
  }
  void need(size_t n) const {
    if (pos + n > buf.size()) {
      throw std::invalid_argument(
          "checkpoint: truncated, need " + std::to_string(n) +
          " bytes at byte offset " + std::to_string(pos));
    }
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) {
      v |= static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Tensor& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::invalid_argument("checkpoint: no tensor named " + name);
}

bool CheckpointData::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint_file(const std::string& path,
                          const CheckpointData& data) {
  std::string out;
  out += "CEPC";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    if (name.size() > 0xffff) {
      throw std::invalid_argument("checkpoint: tensor name too long: " + name);
    }
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int64_t d = 0; d < t.rank(); ++d) {
      put_u32(out, static_cast<uint32_t>(t.extent(d)));
    }
    for (int64_t i = 0; i < t.numel(); ++i) {
      put_f32(out, static_cast<float>(t.at(i)));
    }
  }
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
  }
  {
    std::ofstream f(path + ".meta", std::ios::trunc);
    if (!f) {
      throw std::runtime_error("checkpoint: cannot write " + path + ".meta");
    }
    for (const auto& [k, v] : data.meta) {
      f << k << " = " << v << "\n";
    }
  }
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  Reader r{buf};

  const std::string magic = r.bytes(4);
  if (magic != "CEPC") {
    r.pos = 0;
    r.fail("bad magic '" + magic + "'");
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.pos -= 4;
    r.fail("unsupported version " + std::to_string(version));
  }
  const uint32_t count = r.u32();
  CheckpointData data;
  data.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const uint8_t rank = r.u8();
    Shape shape;
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint32_t e = r.u32();
      if (e == 0) r.fail("zero extent in tensor " + name);
      shape.push_back(static_cast<int64_t>(e));
      numel *= e;
    }
    Tensor t(shape, Precision::f32);
    for (int64_t j = 0; j < numel; ++j) {
      t.set(j, static_cast<double>(r.f32()));
    }
    data.tensors.emplace_back(name, std::move(t));
  }
  if (r.pos != buf.size()) {
    r.fail("trailing bytes");
  }

  std::ifstream mf(path + ".meta");
  if (mf) {
    std::string line;
    while (std::getline(mf, line)) {
      const size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
      };
      data.meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }
  return data;
}

}  // namespace cep
