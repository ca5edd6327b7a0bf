#include "scalestack/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace scalestack {

namespace {

constexpr std::array<char, 5> kMagic{'S', 'S', 'T', 'K', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("truncated tensor header");
  return v;
}

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

template <typename Stored, typename T>
std::vector<T> read_buffer(std::istream& in, std::size_t count) {
  std::vector<Stored> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(Stored)));
  if (!in) throw FormatError("truncated tensor buffer");
  if constexpr (std::is_same_v<Stored, T>) {
    return raw;
  } else {
    return std::vector<T>(raw.begin(), raw.end());
  }
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(precision_of<T>()));
  put_u64(out, t.rank());
  for (auto e : t.shape()) put_u64(out, e);
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw FormatError("failed writing tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("bad tensor magic (expected SSTK1)");
  const int precision = in.get();
  if (!in) throw FormatError("truncated tensor header");
  const std::uint64_t rank = get_u64(in);
  if (rank == 0 || rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u64(in);
  const std::size_t count = num_elements(shape);
  switch (static_cast<Precision>(precision)) {
    case Precision::f32:
      return Tensor<T>(std::move(shape), read_buffer<float, T>(in, count));
    case Precision::f64:
      return Tensor<T>(std::move(shape), read_buffer<double, T>(in, count));
  }
  throw FormatError("unknown tensor precision byte " + std::to_string(precision));
}

template <typename T>
void save_tensors(const std::filesystem::path& path, const std::vector<Tensor<T>>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(out, t);
}

template <typename T>
std::vector<Tensor<T>> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Tensor<T>> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor<T>(in));
  return out;
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensors(const std::filesystem::path&, const std::vector<Tensor<float>>&);
template void save_tensors(const std::filesystem::path&, const std::vector<Tensor<double>>&);
template std::vector<Tensor<float>> load_tensors(const std::filesystem::path&);
template std::vector<Tensor<double>> load_tensors(const std::filesystem::path&);

}  // namespace scalestack
