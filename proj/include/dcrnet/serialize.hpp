#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

#include "dcrnet/tensor.hpp"

namespace dcrnet {

// All on-disk integers and floats are little-endian.

void write_u8(std::ostream& os, uint8_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes

uint8_t read_u8(std::istream& is);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);

/// Tensor record: magic "DCRT", version, rank, dims, dtype tag (f32|f64),
/// raw element data.
template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

/// Reads a tensor record, converting the stored dtype to T if they differ.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

/// Writes a file atomically: the writer streams into a temp file which is
/// renamed over the target only after a successful close.
void atomic_write_file(const std::string& path, const std::function<void(std::ostream&)>& writer);

}  // namespace dcrnet
