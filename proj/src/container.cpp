#include "casdc/container.hpp"

#include <cstring>
#include <fstream>

#include "casdc/errors.hpp"

namespace casdc {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'S', 'D', 'C', 'T', 'C', '1'};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f64:
      return 8;
    case DType::u8:
      return 1;
    case DType::i64:
      return 8;
  }
  throw FormatError("tensor container: unknown dtype tag");
}

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("tensor container: truncated file");
  return v;
}

}  // namespace

std::uint64_t TensorEntry::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) n *= d;
  return n;
}

const std::vector<double>& TensorEntry::f64() const {
  if (dtype() != DType::f64)
    throw FormatError("tensor entry '" + name + "' is not f64");
  return std::get<std::vector<double>>(data);
}

const std::vector<std::uint8_t>& TensorEntry::u8() const {
  if (dtype() != DType::u8)
    throw FormatError("tensor entry '" + name + "' is not u8");
  return std::get<std::vector<std::uint8_t>>(data);
}

const std::vector<std::int64_t>& TensorEntry::i64() const {
  if (dtype() != DType::i64)
    throw FormatError("tensor entry '" + name + "' is not i64");
  return std::get<std::vector<std::int64_t>>(data);
}

void write_tensor_container(const std::filesystem::path& path,
                            const std::vector<TensorEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());

  out.write(kMagic, sizeof(kMagic));
  write_raw(out, static_cast<std::uint32_t>(entries.size()));
  for (const TensorEntry& e : entries) {
    const std::uint64_t elems = e.element_count();
    std::uint64_t stored = 0;
    std::visit([&](const auto& v) { stored = v.size(); }, e.data);
    if (stored != elems)
      throw FormatError("tensor entry '" + e.name +
                        "': payload size does not match shape");

    write_raw(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_raw(out, static_cast<std::uint32_t>(e.dtype()));
    write_raw(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::uint64_t d : e.shape) write_raw(out, d);
    std::visit(
        [&](const auto& v) {
          using Elem = typename std::decay_t<decltype(v)>::value_type;
          out.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(v.size() * sizeof(Elem)));
        },
        e.data);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TensorEntry> read_tensor_container(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("tensor container: bad magic in " + path.string());

  const auto count = read_raw<std::uint32_t>(in);
  std::vector<TensorEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    const auto name_len = read_raw<std::uint32_t>(in);
    if (name_len > (1u << 20))
      throw FormatError("tensor container: implausible name length");
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    if (!in) throw FormatError("tensor container: truncated file");

    const auto tag = read_raw<std::uint32_t>(in);
    if (tag > 2) throw FormatError("tensor container: unknown dtype tag");
    const DType dtype = static_cast<DType>(tag);

    const auto ndim = read_raw<std::uint32_t>(in);
    if (ndim > 16) throw FormatError("tensor container: implausible rank");
    e.shape.resize(ndim);
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape[d] = read_raw<std::uint64_t>(in);
      elems *= e.shape[d];
    }
    const std::uint64_t bytes = elems * dtype_size(dtype);
    if (bytes > (1ull << 34))
      throw FormatError("tensor container: implausible payload size");

    auto read_payload = [&](auto& vec) {
      vec.resize(elems);
      in.read(reinterpret_cast<char*>(vec.data()),
              static_cast<std::streamsize>(bytes));
      if (!in) throw FormatError("tensor container: truncated payload");
    };
    switch (dtype) {
      case DType::f64: {
        std::vector<double> v;
        read_payload(v);
        e.data = std::move(v);
        break;
      }
      case DType::u8: {
        std::vector<std::uint8_t> v;
        read_payload(v);
        e.data = std::move(v);
        break;
      }
      case DType::i64: {
        std::vector<std::int64_t> v;
        read_payload(v);
        e.data = std::move(v);
        break;
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

const TensorEntry& find_entry(const std::vector<TensorEntry>& entries,
                              std::string_view name) {
  for (const TensorEntry& e : entries)
    if (e.name == name) return e;
  throw FormatError("tensor container: missing entry '" + std::string(name) +
                    "'");
}

}  // namespace casdc
