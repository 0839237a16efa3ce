#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lwta/models.hpp"

namespace lwta {

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class SectionKind : std::uint8_t { spec = 1, step = 2, rng_state = 3, tensor = 4 };

struct CheckpointState {
  std::uint64_t step = 0;
  std::string rng_state;
};

/// Layout: magic "DSCK", u16 version, u32 section count, then per section
/// [u8 kind][u32 name length][name][u64 payload length][u32 CRC-32 of payload][payload].
/// Tensor payloads are MatrixFile encodings. All integers little-endian.
std::string encode_checkpoint(const Model& model, const CheckpointState& state);
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointState& state);

/// Spec stored in a checkpoint. Bad magic or version raises ParseError; damaged sections raise
/// IntegrityError.
ModelSpec read_checkpoint_spec(std::string_view bytes);

/// Overwrites the weights of `model`. A stored spec different from model.spec() raises SpecError.
CheckpointState decode_checkpoint_into(std::string_view bytes, Model& model);
CheckpointState load_checkpoint(const std::filesystem::path& path, Model& model);

/// Builds a model from the stored spec and loads its weights.
Model load_model(const std::filesystem::path& path, CheckpointState* state = nullptr);

}  // namespace lwta
