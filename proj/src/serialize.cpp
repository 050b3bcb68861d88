#include "dcrnet/serialize.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "dcrnet/errors.hpp"

namespace dcrnet {

namespace {

constexpr char kTensorMagic[4] = {'D', 'C', 'R', 'T'};
constexpr uint32_t kTensorVersion = 1;
constexpr uint32_t kDtypeF32 = 0;
constexpr uint32_t kDtypeF64 = 1;

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw DataError("unexpected end of file");
  }
}

template <typename T>
uint32_t dtype_tag();
template <>
uint32_t dtype_tag<float>() {
  return kDtypeF32;
}
template <>
uint32_t dtype_tag<double>() {
  return kDtypeF64;
}

}  // namespace

void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }
void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }
void write_u64(std::ostream& os, uint64_t v) { write_bytes(os, &v, 8); }
void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

uint8_t read_u8(std::istream& is) {
  uint8_t v;
  read_bytes(is, &v, 1);
  return v;
}

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  read_bytes(is, &v, 4);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v;
  read_bytes(is, &v, 8);
  return v;
}

double read_f64(std::istream& is) {
  double v;
  read_bytes(is, &v, 8);
  return v;
}

std::string read_string(std::istream& is) {
  uint32_t len = read_u32(is);
  if (len > (1u << 20)) throw DataError("string record too long");
  std::string s(len, '\0');
  if (len) read_bytes(is, s.data(), len);
  return s;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_bytes(os, kTensorMagic, 4);
  write_u32(os, kTensorVersion);
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
  write_u32(os, dtype_tag<T>());
  write_bytes(os, t.data(), sizeof(T) * static_cast<size_t>(t.numel()));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  read_bytes(is, magic, 4);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw DataError("bad tensor magic; not a tensor record");
  }
  uint32_t version = read_u32(is);
  if (version != kTensorVersion) {
    throw DataError("unsupported tensor format version " + std::to_string(version));
  }
  uint32_t rank = read_u32(is);
  if (rank < 1 || rank > 8) throw DataError("tensor rank out of range");
  std::vector<int64_t> shape(rank);
  int64_t numel = 1;
  for (auto& d : shape) {
    d = static_cast<int64_t>(read_u64(is));
    if (d < 1 || numel > (int64_t(1) << 40) / d) throw DataError("tensor dimensions invalid");
    numel *= d;
  }
  uint32_t dtype = read_u32(is);
  if (dtype == dtype_tag<T>()) {
    std::vector<T> data(static_cast<size_t>(numel));
    read_bytes(is, data.data(), sizeof(T) * data.size());
    return Tensor<T>(std::move(shape), std::move(data));
  }
  if (dtype == kDtypeF32) {
    std::vector<float> raw(static_cast<size_t>(numel));
    read_bytes(is, raw.data(), sizeof(float) * raw.size());
    std::vector<T> data(raw.begin(), raw.end());
    return Tensor<T>(std::move(shape), std::move(data));
  }
  if (dtype == kDtypeF64) {
    std::vector<double> raw(static_cast<size_t>(numel));
    read_bytes(is, raw.data(), sizeof(double) * raw.size());
    std::vector<T> data(raw.begin(), raw.end());
    return Tensor<T>(std::move(shape), std::move(data));
  }
  throw DataError("unknown tensor dtype tag " + std::to_string(dtype));
}

void atomic_write_file(const std::string& path,
                       const std::function<void(std::ostream&)>& writer) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp + " for writing");
    writer(os);
    os.flush();
    if (!os) throw DataError("write to " + tmp + " failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw DataError("cannot rename " + tmp + " to " + path);
  }
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);

}  // namespace dcrnet
