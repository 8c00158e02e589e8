#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwt/adaptation.hpp"
#include "cwt/backbone.hpp"
#include "cwt/config.hpp"
#include "cwt/tensor.hpp"

namespace cwt {

inline constexpr char kCheckpointMagic[4] = {'C', 'W', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

// File layout: "CWT1", u32 version, u64 manifest length, manifest JSON, then
// the payload of concatenated little-endian arrays in entry order. The
// manifest lists every entry's shape, dtype, byte offset, byte length and
// frozen flag, plus the config fingerprint and the payload SHA-256.
struct Checkpoint {
  std::string kind;  // "backbone" or "cwt"
  Precision dtype = Precision::f64;
  std::string config_fingerprint;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& entry(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws Error on bad magic, unknown version, malformed manifest or a payload
// hash mismatch.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// SHA-256 of the payload as stored in the manifest.
std::string checkpoint_content_hash(const Checkpoint& ckpt);

Checkpoint backbone_checkpoint(const BackboneParams& params, bool frozen, Precision dtype,
                               const std::string& config_fingerprint);
BackboneParams backbone_from_checkpoint(const Checkpoint& ckpt);

Checkpoint cwt_checkpoint(const CwtParams& params, Precision dtype, const std::string& config_fingerprint,
                          const std::string& backbone_hash);
CwtParams cwt_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cwt
