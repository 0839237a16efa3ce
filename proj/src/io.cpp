#include "lwta/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "lwta/errors.hpp"

namespace lwta {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "f32 payloads assume IEEE-754 floats");

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

void require(std::string_view bytes, std::size_t offset, std::size_t count, const char* field) {
  if (bytes.size() < offset || bytes.size() - offset < count) {
    throw ParseError(std::string("matrix file truncated while reading ") + field + " at byte " +
                         std::to_string(offset),
                     offset);
  }
}

}  // namespace

std::string encode_matrix(const MatrixFile& matrix) {
  if (matrix.dims.size() > kMaxMatrixRank) throw DimensionError("matrix rank exceeds " + std::to_string(kMaxMatrixRank));
  std::uint64_t count = 1;
  for (auto d : matrix.dims) count *= d;
  if (count != matrix.values.size()) {
    throw DimensionError("matrix dims hold " + std::to_string(count) + " values, got " +
                         std::to_string(matrix.values.size()));
  }
  std::string out;
  out.reserve(matrix_header_size(matrix.dims.size()) + 4 * matrix.values.size());
  out.append(kMatrixMagic, 4);
  put_le<std::uint16_t>(out, kMatrixVersion);
  put_u8(out, kDtypeF32);
  put_u8(out, static_cast<std::uint8_t>(matrix.dims.size()));
  for (auto d : matrix.dims) put_le<std::uint64_t>(out, d);
  for (std::size_t i = 0; i < matrix.values.size(); ++i) {
    const float v = matrix.values[i];
    if (!std::isfinite(v)) throw NumericError("matrix value " + std::to_string(i) + " is not finite");
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

MatrixFile decode_matrix(std::string_view bytes) {
  require(bytes, 0, 4, "magic");
  if (std::memcmp(bytes.data(), kMatrixMagic, 4) != 0) throw ParseError("bad matrix magic at byte 0", 0);
  require(bytes, 4, 2, "version");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kMatrixVersion) {
    throw ParseError("unsupported matrix format version " + std::to_string(version) + " at byte 4", 4);
  }
  require(bytes, 6, 1, "dtype");
  const auto dtype = static_cast<std::uint8_t>(bytes[6]);
  if (dtype != kDtypeF32) throw ParseError("unsupported dtype code " + std::to_string(dtype) + " at byte 6", 6);
  require(bytes, 7, 1, "rank");
  const auto rank = static_cast<std::uint8_t>(bytes[7]);
  if (rank > kMaxMatrixRank) throw ParseError("rank " + std::to_string(rank) + " too large at byte 7", 7);

  MatrixFile matrix;
  std::uint64_t count = 1;
  constexpr std::uint64_t kMaxCount = std::numeric_limits<std::uint64_t>::max() / 4;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t offset = 8 + 8 * r;
    require(bytes, offset, 8, "dims");
    const auto d = get_le<std::uint64_t>(bytes, offset);
    if (d != 0 && count > kMaxCount / d) {
      throw ParseError("dimension product overflows at byte " + std::to_string(offset), offset);
    }
    count *= d;
    matrix.dims.push_back(d);
  }
  const std::size_t header = matrix_header_size(rank);
  const std::uint64_t payload = bytes.size() - std::min(bytes.size(), header);
  if (bytes.size() < header || payload != 4 * count) {
    throw ParseError("payload holds " + std::to_string(payload) + " bytes but dims require " +
                         std::to_string(4 * count) + " (payload starts at byte " + std::to_string(header) + ")",
                     header);
  }
  matrix.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, header + 4 * i));
    if (!std::isfinite(v)) {
      throw ParseError("non-finite value at byte " + std::to_string(header + 4 * i), header + 4 * i);
    }
    matrix.values[i] = v;
  }
  return matrix;
}

void write_matrix(const std::filesystem::path& path, const MatrixFile& matrix) {
  write_file_atomic(path, encode_matrix(matrix));
}

MatrixFile read_matrix(const std::filesystem::path& path) {
  try {
    return decode_matrix(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

MatrixFile to_matrix_file(const RowMatrix<float>& matrix) {
  MatrixFile file{{static_cast<std::uint64_t>(matrix.rows()), static_cast<std::uint64_t>(matrix.cols())}, {}};
  file.values.assign(matrix.data(), matrix.data() + matrix.size());
  return file;
}

MatrixFile to_matrix_file(const Shape& shape, const Array<float>& values) {
  MatrixFile file;
  for (Index d : shape) file.dims.push_back(static_cast<std::uint64_t>(d));
  file.values.assign(values.data(), values.data() + values.size());
  return file;
}

RowMatrix<float> to_matrix(const MatrixFile& file) {
  if (file.dims.size() == 1) {
    return Eigen::Map<const RowMatrix<float>>(file.values.data(), static_cast<Index>(file.dims[0]), 1);
  }
  if (file.dims.size() != 2) {
    throw DimensionError("expected a rank-2 matrix, got rank " + std::to_string(file.dims.size()));
  }
  return Eigen::Map<const RowMatrix<float>>(file.values.data(), static_cast<Index>(file.dims[0]),
                                            static_cast<Index>(file.dims[1]));
}

std::vector<std::string> parse_concepts(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    const auto last = line.find_last_not_of(" \t");
    lines.emplace_back(first == std::string_view::npos ? "" : line.substr(first, last - first + 1));
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();

  std::vector<std::string> concepts;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) throw ParseError("concept line " + std::to_string(i + 1) + " is blank", 0);
    const auto [it, inserted] = seen.emplace(lines[i], i + 1);
    if (!inserted) {
      throw ParseError("duplicate concept '" + lines[i] + "' on lines " + std::to_string(it->second) + " and " +
                           std::to_string(i + 1),
                       0);
    }
    concepts.push_back(lines[i]);
  }
  if (concepts.empty()) throw ParseError("concept set is empty", 0);
  return concepts;
}

std::vector<std::string> load_concepts(const std::filesystem::path& path) {
  try {
    return parse_concepts(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot create " + temp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::filesystem::remove(temp);
      throw Error("failed writing " + temp.string());
    }
  }
  std::filesystem::rename(temp, path);
}

}  // namespace lwta
