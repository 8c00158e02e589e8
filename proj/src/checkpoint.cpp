#include "cwt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cwt/hash.hpp"

namespace cwt {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("checkpoint: truncated header");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

std::size_t dtype_size(Precision p) { return p == Precision::f32 ? 4 : 8; }

std::vector<std::uint8_t> payload_of(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  for (const auto& e : ckpt.entries) {
    for (double v : e.tensor.data()) {
      if (ckpt.dtype == Precision::f32) put(out, static_cast<float>(v));
      else put(out, v);
    }
  }
  return out;
}

void copy_into(Tensor& target, const Checkpoint& ckpt, const std::string& name) {
  const Tensor& src = ckpt.entry(name).tensor;
  if (src.shape() != target.shape()) {
    throw Error("checkpoint: entry '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                shape_str(target.shape()));
  }
  auto dst = target.mutable_data();
  std::copy(src.data().begin(), src.data().end(), dst.begin());
}

}  // namespace

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw Error("checkpoint: no entry named '" + name + "'");
}

std::string checkpoint_content_hash(const Checkpoint& ckpt) { return sha256_hex(payload_of(ckpt)); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> payload = payload_of(ckpt);
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    const std::uint64_t length = e.tensor.numel() * dtype_size(ckpt.dtype);
    entries.push_back({{"name", e.name},
                       {"shape", e.tensor.shape()},
                       {"dtype", precision_name(ckpt.dtype)},
                       {"offset", offset},
                       {"length", length},
                       {"frozen", e.frozen}});
    offset += length;
  }
  const json manifest = {{"kind", ckpt.kind},
                         {"entries", entries},
                         {"config_fingerprint", ckpt.config_fingerprint},
                         {"content_hash", sha256_hex(payload)},
                         {"meta", ckpt.meta}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw Error("checkpoint: bad magic (expected CWT1)");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto manifest_len = take<std::uint64_t>(bytes, pos);
  if (pos + manifest_len > bytes.size()) throw Error("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + manifest_len));
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  pos += manifest_len;
  const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  if (sha256_hex(payload) != manifest.value("content_hash", "")) {
    throw Error("checkpoint: payload hash does not match manifest");
  }

  Checkpoint ckpt;
  try {
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.config_fingerprint = manifest.at("config_fingerprint").get<std::string>();
    ckpt.meta = manifest.at("meta");
    bool first = true;
    for (const auto& e : manifest.at("entries")) {
      const Precision dtype = parse_precision(e.at("dtype").get<std::string>());
      if (first) ckpt.dtype = dtype;
      if (dtype != ckpt.dtype) throw Error("checkpoint: mixed dtypes");
      first = false;
      const Shape shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto length = e.at("length").get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      if (length != n * dtype_size(dtype) || offset + length > payload.size()) {
        throw Error("checkpoint: entry '" + e.at("name").get<std::string>() + "' is out of bounds");
      }
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = payload.data() + offset + i * dtype_size(dtype);
        if (dtype == Precision::f32) {
          float f;
          std::memcpy(&f, p, 4);
          values[i] = f;
        } else {
          std::memcpy(&values[i], p, 8);
        }
      }
      ckpt.entries.push_back({e.at("name").get<std::string>(), Tensor(shape, std::move(values)),
                              e.at("frozen").get<bool>()});
    }
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint backbone_checkpoint(const BackboneParams& params, bool frozen, Precision dtype,
                               const std::string& config_fingerprint) {
  Checkpoint c;
  c.kind = "backbone";
  c.dtype = dtype;
  c.config_fingerprint = config_fingerprint;
  c.meta = {{"in_channels", params.arch.in_channels},
            {"hidden", params.arch.hidden},
            {"feature_dim", params.arch.feature_dim}};
  for (const auto& [name, t] : params.named_tensors()) c.entries.push_back({name, t.detach(), frozen});
  return c;
}

BackboneParams backbone_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "backbone") throw ConfigError("checkpoint holds a '" + ckpt.kind + "', expected a backbone");
  BackboneArch arch;
  try {
    arch.in_channels = ckpt.meta.at("in_channels").get<std::size_t>();
    arch.hidden = ckpt.meta.at("hidden").get<std::size_t>();
    arch.feature_dim = ckpt.meta.at("feature_dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: backbone meta incomplete: ") + e.what());
  }
  CounterRng rng(0);
  BackboneParams p = BackboneParams::init(arch, rng);
  for (auto& [name, t] : p.named_tensors()) copy_into(t, ckpt, name);
  return p;
}

Checkpoint cwt_checkpoint(const CwtParams& params, Precision dtype, const std::string& config_fingerprint,
                          const std::string& backbone_hash) {
  Checkpoint c;
  c.kind = "cwt";
  c.dtype = dtype;
  c.config_fingerprint = config_fingerprint;
  c.meta = {{"options", cwt_options_to_json(params.options)}, {"backbone_hash", backbone_hash}};
  for (const auto& [name, t] : params.named_tensors()) c.entries.push_back({name, t.detach(), false});
  return c;
}

CwtParams cwt_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "cwt") throw ConfigError("checkpoint holds a '" + ckpt.kind + "', expected a cwt");
  if (!ckpt.meta.contains("options")) throw Error("checkpoint: cwt meta has no options");
  const CwtOptions options = cwt_options_from_json(ckpt.meta.at("options"), CwtOptions{});
  CounterRng rng(0);
  CwtParams p = CwtParams::init(options, rng);
  for (auto& [name, t] : p.named_tensors()) copy_into(t, ckpt, name);
  return p;
}

}  // namespace cwt
