#include "fssuavl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <zlib.h>

#include "fssuavl/error.hpp"
#include "json_io.hpp"

namespace fssuavl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::uint32_t crc_of(const float* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n * sizeof(float))));
}

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const NamedTensors state = model.state();
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : state) {
    const std::uint64_t bytes = t.numel() * sizeof(float);
    dir.push_back({{"name", name},
                   {"dtype", "f32"},
                   {"shape", t.shape},
                   {"offset", offset},
                   {"bytes", bytes},
                   {"crc32", crc_of(t.data.data(), t.numel())}});
    offset += bytes;
  }
  json header = {{"encoder", model.config()}, {"round", meta.round}, {"seed", meta.seed}, {"tensors", dir}};
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : state)
    out.append(reinterpret_cast<const char*>(t.data.data()), t.numel() * sizeof(float));

  // Write to a sibling then rename so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("save_checkpoint: cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.close();
    if (!f) throw Error("save_checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(p, 0, "cannot open checkpoint");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t kPrefix = sizeof kCheckpointMagic + 4 + 8;
  if (buf.size() < kPrefix) throw FormatError(p, buf.size(), "truncated before the end of the fixed header");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError(p, 0, "bad magic bytes (not a checkpoint)");
  std::uint32_t version = 0;
  std::uint64_t header_bytes = 0;
  std::memcpy(&version, buf.data() + 8, 4);
  std::memcpy(&header_bytes, buf.data() + 12, 8);
  if (version != kCheckpointVersion)
    throw FormatError(p, 8, "unsupported version " + std::to_string(version) + " (expected " +
                                std::to_string(kCheckpointVersion) + ")");
  if (header_bytes > buf.size() - kPrefix) throw FormatError(p, 12, "header length runs past the end of the file");

  Checkpoint ck;
  ck.version = static_cast<int>(version);
  json header;
  try {
    header = json::parse(buf.begin() + kPrefix, buf.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_bytes));
  } catch (const json::parse_error& e) {
    throw FormatError(p, kPrefix + e.byte, std::string("header is not valid JSON: ") + e.what());
  }
  const std::uint64_t payload = kPrefix + header_bytes;
  try {
    ck.encoder = header.at("encoder").get<EncoderConfig>();
    ck.encoder.validate();
    ck.meta.round = header.at("round").get<int>();
    ck.meta.seed = header.at("seed").get<std::uint64_t>();
    std::uint64_t expect_offset = 0;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (e.at("dtype") != "f32") throw FormatError(p, kPrefix, "tensor '" + name + "' has unsupported dtype");
      Tensor t(e.at("shape").get<Shape>());
      const auto offset = e.at("offset").get<std::uint64_t>(), bytes = e.at("bytes").get<std::uint64_t>();
      if (offset != expect_offset || bytes != t.numel() * sizeof(float))
        throw FormatError(p, kPrefix, "tensor '" + name + "' has an inconsistent offset or length");
      if (payload + offset + bytes > buf.size())
        throw FormatError(p, buf.size(), "truncated inside tensor '" + name + "'");
      std::memcpy(t.data.data(), buf.data() + payload + offset, bytes);
      if (crc_of(t.data.data(), t.numel()) != e.at("crc32").get<std::uint32_t>())
        throw FormatError(p, payload + offset, "CRC mismatch in tensor '" + name + "' (payload bytes " +
                                                   std::to_string(payload + offset) + ".." +
                                                   std::to_string(payload + offset + bytes) + ")");
      expect_offset += bytes;
      if (!ck.tensors.emplace(name, std::move(t)).second)
        throw FormatError(p, kPrefix, "duplicate tensor '" + name + "'");
    }
    if (payload + expect_offset != buf.size())
      throw FormatError(p, payload + expect_offset, "trailing bytes after the last tensor");
  } catch (const json::exception& e) {
    throw FormatError(p, kPrefix, std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(p, kPrefix, std::string("bad encoder config in header: ") + e.what());
  }
  // Shapes and names must describe exactly the echoed architecture.
  try {
    model_from_checkpoint(ck);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(p, kPrefix, std::string("tensors do not match the encoder config: ") + e.what());
  }
  return ck;
}

EncoderModel model_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig* expected) {
  if (expected && !(*expected == ckpt.encoder))
    throw ContractError("checkpoint architecture " + json(ckpt.encoder).dump() + " differs from the configured " +
                        json(*expected).dump());
  EncoderModel m = EncoderModel::build(ckpt.encoder, 0);
  m.load_state(ckpt.tensors);
  return m;
}

}  // namespace fssuavl
