#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lwta/tensor.hpp"

namespace lwta {

inline constexpr char kMatrixMagic[4] = {'D', 'S', 'C', 'V'};
inline constexpr std::uint16_t kMatrixVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kMaxMatrixRank = 8;

/// Dense row-major f32 array with arbitrary rank, as stored on disk.
struct MatrixFile {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t rows() const { return dims.empty() ? 1 : dims.front(); }
  friend bool operator==(const MatrixFile&, const MatrixFile&) = default;
};

/// Header bytes for `rank` dims: magic, version, dtype, rank, dims.
constexpr std::size_t matrix_header_size(std::size_t rank) { return 4 + 2 + 1 + 1 + 8 * rank; }

std::string encode_matrix(const MatrixFile& matrix);
/// Strict decoder: the buffer must hold exactly one matrix. Raises ParseError with the byte
/// offset of the first offending field.
MatrixFile decode_matrix(std::string_view bytes);

void write_matrix(const std::filesystem::path& path, const MatrixFile& matrix);
MatrixFile read_matrix(const std::filesystem::path& path);

MatrixFile to_matrix_file(const RowMatrix<float>& matrix);
MatrixFile to_matrix_file(const Shape& shape, const Array<float>& values);
/// Rank-2 view as an N x D matrix (rank 1 becomes a single column).
RowMatrix<float> to_matrix(const MatrixFile& file);

/// Concept list: one per line, CRLF normalized, surrounding whitespace trimmed. Blank lines
/// other than trailing ones and duplicates raise ParseError naming the line numbers.
std::vector<std::string> parse_concepts(std::string_view text);
std::vector<std::string> load_concepts(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lwta
