#include "core/weights_io.hpp"

#include <cstring>
#include <fstream>

namespace efcn {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::uint8_t* p;
  size_t size;
  size_t at = 0;

  void need(size_t n, const char* what) {
    if (at + n > size)
      throw FormatError(cat("weights: truncated ", what, " at byte ", at,
                            " (need ", n, ", have ", size - at, ")"));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[at++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint16_t(p[at]) | std::uint16_t(p[at + 1]) << 8;
    at += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[at + i]) << (8 * i);
    at += 4;
    return v;
  }
};

constexpr char kMagic[4] = {'E', 'F', 'C', 'N'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);
  put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff)
      throw ValidationError(cat("weights: tensor name too long (", t.name.size(), ")"));
    if (t.dims.empty() || t.dims.size() > 255)
      throw ValidationError(cat("weights: tensor '", t.name, "' has rank ", t.dims.size()));
    i64 n = 1;
    for (int d : t.dims) {
      if (d < 1) throw ValidationError(cat("weights: tensor '", t.name, "' has dim ", d));
      n *= d;
    }
    if (n != i64(t.values.size()))
      throw ValidationError(cat("weights: tensor '", t.name, "' holds ",
                                t.values.size(), " values for ", n, " elements"));
    put_u16(out, std::uint16_t(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(std::uint8_t(t.dims.size()));
    for (int d : t.dims) put_u32(out, std::uint32_t(d));
    const size_t base = out.size();
    out.resize(base + t.values.size() * 4);
    static_assert(sizeof(float) == 4);
    std::memcpy(out.data() + base, t.values.data(), t.values.size() * 4);
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::uint8_t* bytes, size_t size) {
  Cursor c{bytes, size};
  c.need(4, "magic");
  if (std::memcmp(bytes, kMagic, 4) != 0)
    throw FormatError("weights: bad magic at byte 0, expected \"EFCN\"");
  c.at = 4;
  const std::uint8_t version = c.u8("version");
  if (version != kVersion)
    throw FormatError(cat("weights: unsupported version ", int(version), " at byte 4"));
  const std::uint32_t count = c.u32("tensor count");

  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint16_t len = c.u16("name length");
    c.need(len, "name");
    t.name.assign(reinterpret_cast<const char*>(bytes + c.at), len);
    c.at += len;
    const std::uint8_t rank = c.u8("rank");
    if (rank == 0)
      throw FormatError(cat("weights: zero rank at byte ", c.at - 1));
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t dim = c.u32("dimension");
      if (dim == 0 || dim > 0x7fffffff)
        throw FormatError(cat("weights: bad dimension ", dim, " at byte ", c.at - 4));
      t.dims.push_back(int(dim));
    }
    const i64 n = t.numel();
    if (n > i64(size) / 4 + 1)
      throw FormatError(cat("weights: payload of ", n, " floats at byte ", c.at,
                            " exceeds the file"));
    c.need(size_t(n) * 4, "payload");
    t.values.resize(size_t(n));
    std::memcpy(t.values.data(), bytes + c.at, size_t(n) * 4);
    c.at += size_t(n) * 4;
    out.push_back(std::move(t));
  }
  if (c.at != size)
    throw FormatError(cat("weights: ", size - c.at, " trailing bytes at byte ", c.at));
  return out;
}

void save_weights(const std::vector<NamedTensor>& tensors, const std::string& path) {
  const std::vector<std::uint8_t> bytes = encode_weights(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open for writing"));
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError(cat(path, ": write failed"));
}

std::vector<NamedTensor> load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open for reading"));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_weights(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(cat(path, ": ", e.what()));
  }
}

std::vector<NamedTensor> snapshot_params(ParamList<float>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (auto& p : params) {
    NamedTensor t;
    t.name = p.name;
    const Shape& s = p.tensor.shape();
    t.dims = {s.n, s.c, s.h, s.w};
    t.values.assign(p.tensor.data(), p.tensor.data() + p.tensor.numel());
    out.push_back(std::move(t));
  }
  return out;
}

void restore_params(ParamList<float>& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.size())
    throw ValidationError(cat("weights: checkpoint holds ", tensors.size(),
                              " tensors, model expects ", params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& t = tensors[i];
    if (t.name != p.name)
      throw ValidationError(cat("weights: tensor ", i, " is '", t.name,
                                "', model expects '", p.name, "'"));
    const Shape& s = p.tensor.shape();
    const std::vector<int> want = {s.n, s.c, s.h, s.w};
    if (t.dims != want)
      throw ValidationError(cat("weights: '", t.name, "' shape mismatch, model expects ",
                                s.str()));
    std::copy(t.values.begin(), t.values.end(), p.tensor.data());
  }
}

}  // namespace efcn
