#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace casdc {

// Single-file container for named tensors, used for dataset snapshots and
// model checkpoints.
//
// Layout (little-endian):
//   8 bytes   magic "CASDCTC1"
//   u32       entry count
//   per entry:
//     u32       name length, then name bytes
//     u32       dtype tag (0 = f64, 1 = u8, 2 = i64)
//     u32       ndim
//     u64*ndim  shape
//     payload   row-major, elem_size * prod(shape) bytes
//
// Readers validate sizes and throw FormatError on truncation or garbage;
// nothing partial is ever returned.

enum class DType : std::uint32_t { f64 = 0, u8 = 1, i64 = 2 };

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::variant<std::vector<double>, std::vector<std::uint8_t>,
               std::vector<std::int64_t>>
      data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::uint64_t element_count() const;

  const std::vector<double>& f64() const;
  const std::vector<std::uint8_t>& u8() const;
  const std::vector<std::int64_t>& i64() const;
};

void write_tensor_container(const std::filesystem::path& path,
                            const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> read_tensor_container(const std::filesystem::path& path);

// Lookup by name; throws FormatError if absent.
const TensorEntry& find_entry(const std::vector<TensorEntry>& entries,
                              std::string_view name);

}  // namespace casdc
