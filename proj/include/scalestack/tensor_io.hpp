#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "scalestack/tensor.hpp"

// Flat binary tensor container. Each record is
//   "SSTK1" | precision byte (4 = f32, 8 = f64) | rank (u64 LE) |
//   rank extents (u64 LE) | raw little-endian buffer
// and a file is a plain concatenation of records.

namespace scalestack {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision : std::uint8_t { f32 = 4, f64 = 8 };

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

// Reads one record, converting to T if the stored precision differs.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensors(const std::filesystem::path& path, const std::vector<Tensor<T>>& tensors);

template <typename T>
std::vector<Tensor<T>> load_tensors(const std::filesystem::path& path);

}  // namespace scalestack
