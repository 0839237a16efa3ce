#include "lwta/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <map>

#include "lwta/errors.hpp"
#include "lwta/io.hpp"

namespace lwta {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t crc(std::string_view bytes) {
  uLong value = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints of this scale stay far below 4 GiB per section.
  value = crc32(value, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(value);
}

void put_section(std::string& out, SectionKind kind, std::string_view name, std::string_view payload) {
  out.push_back(static_cast<char>(kind));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_le<std::uint64_t>(out, payload.size());
  put_le<std::uint32_t>(out, crc(payload));
  out.append(payload);
}

struct Section {
  SectionKind kind;
  std::string name;
  std::string_view payload;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T read(const char* field) {
    need(sizeof(T), field);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::uint64_t count, const char* field) {
    need(count, field);
    auto view = bytes_.substr(pos_, static_cast<std::size_t>(count));
    pos_ += static_cast<std::size_t>(count);
    return view;
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t count, const char* field) const {
    if (bytes_.size() - pos_ < count) {
      throw IntegrityError(std::string("checkpoint truncated in ") + field + " at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::vector<Section> parse_sections(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ParseError("not a checkpoint file (bad magic at byte 0)", 0);
  }
  Reader reader(bytes.substr(4));
  const auto version = reader.read<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + " at byte 4", 4);
  }
  const auto count = reader.read<std::uint32_t>("section count");
  std::vector<Section> sections;
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::size_t at = 4 + reader.position();
    const auto kind = reader.read<std::uint8_t>("section kind");
    if (kind < 1 || kind > 4) {
      throw IntegrityError("unknown section kind " + std::to_string(kind) + " at byte " + std::to_string(at));
    }
    const auto name_length = reader.read<std::uint32_t>("section name length");
    const std::string name(reader.take(name_length, "section name"));
    const auto length = reader.read<std::uint64_t>("section length");
    const auto checksum = reader.read<std::uint32_t>("section checksum");
    const auto payload = reader.take(length, "section payload");
    if (crc(payload) != checksum) {
      throw IntegrityError("checksum mismatch in section '" + name + "' at byte " + std::to_string(at));
    }
    sections.push_back({static_cast<SectionKind>(kind), name, payload});
  }
  if (!reader.done()) throw IntegrityError("trailing bytes after the last checkpoint section");
  return sections;
}

std::string spec_text(const ModelSpec& spec) { return spec.to_config().to_text(); }

}  // namespace

std::string encode_checkpoint(const Model& model, const CheckpointState& state) {
  std::string out(kCheckpointMagic, 4);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(3 + model.parameters().size()));
  put_section(out, SectionKind::spec, "spec", spec_text(model.spec()));
  std::string step;
  put_le<std::uint64_t>(step, state.step);
  put_section(out, SectionKind::step, "step", step);
  put_section(out, SectionKind::rng_state, "rng", state.rng_state);
  for (const auto& p : model.parameters()) {
    put_section(out, SectionKind::tensor, p.name, encode_matrix(to_matrix_file(p.tensor.shape(), p.tensor.data())));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointState& state) {
  write_file_atomic(path, encode_checkpoint(model, state));
}

ModelSpec read_checkpoint_spec(std::string_view bytes) {
  for (const auto& s : parse_sections(bytes)) {
    if (s.kind == SectionKind::spec) return ModelSpec::from_config(Config::parse(s.payload));
  }
  throw IntegrityError("checkpoint has no spec section");
}

CheckpointState decode_checkpoint_into(std::string_view bytes, Model& model) {
  const auto sections = parse_sections(bytes);
  CheckpointState state;
  std::map<std::string, std::string_view> tensors;
  bool have_spec = false, have_step = false, have_rng = false;
  for (const auto& s : sections) {
    switch (s.kind) {
      case SectionKind::spec: {
        const std::string expected = spec_text(model.spec());
        if (s.payload != expected) {
          throw SpecError("checkpoint spec does not match the model:\n--- stored\n" + std::string(s.payload) +
                          "--- model\n" + expected);
        }
        have_spec = true;
        break;
      }
      case SectionKind::step:
        if (s.payload.size() != 8) throw IntegrityError("step section must hold 8 bytes");
        state.step = 0;
        for (std::size_t i = 0; i < 8; ++i) {
          state.step |= static_cast<std::uint64_t>(static_cast<unsigned char>(s.payload[i])) << (8 * i);
        }
        have_step = true;
        break;
      case SectionKind::rng_state:
        state.rng_state = std::string(s.payload);
        have_rng = true;
        break;
      case SectionKind::tensor:
        if (!tensors.emplace(s.name, s.payload).second) {
          throw IntegrityError("duplicate tensor section '" + s.name + "'");
        }
        break;
    }
  }
  if (!have_spec || !have_step || !have_rng) throw IntegrityError("checkpoint is missing a required section");
  if (tensors.size() != model.parameters().size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                         std::to_string(model.parameters().size()));
  }

  std::vector<MatrixFile> decoded;
  for (const auto& p : model.parameters()) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end()) throw IntegrityError("checkpoint lacks tensor '" + p.name + "'");
    MatrixFile file;
    try {
      file = decode_matrix(it->second);
    } catch (const ParseError& e) {
      throw IntegrityError("tensor section '" + p.name + "': " + e.what());
    }
    std::vector<std::uint64_t> dims(p.tensor.shape().begin(), p.tensor.shape().end());
    if (file.dims != dims) {
      throw IntegrityError("tensor section '" + p.name + "' has the wrong shape");
    }
    decoded.push_back(std::move(file));
  }
  // Only touch the model once every section has validated.
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    Tensor t = model.parameters()[i].tensor;
    t.mutable_data() = Eigen::Map<const Array<float>>(decoded[i].values.data(), t.size());
  }
  return state;
}

CheckpointState load_checkpoint(const std::filesystem::path& path, Model& model) {
  return decode_checkpoint_into(read_file(path), model);
}

Model load_model(const std::filesystem::path& path, CheckpointState* state) {
  const std::string bytes = read_file(path);
  Rng unused;
  Model model = build_model(read_checkpoint_spec(bytes), unused);
  const auto loaded = decode_checkpoint_into(bytes, model);
  if (state != nullptr) *state = loaded;
  return model;
}

}  // namespace lwta
