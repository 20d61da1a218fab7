#pragma once

// Checkpoint container: magic "BINOCKPT", u32 version, config echo string,
// string metadata, then named tensors (u32 rank, u32 dims, f32 data). All
// integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bino/params.hpp"

namespace bino {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_echo;
  std::vector<std::pair<std::string, std::string>> meta;
  ParamSet tensors;

  const std::string* find_meta(const std::string& key) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every tensor named "<prefix><name>" into a fresh set named <name>.
ParamSet extract_prefixed(const ParamSet& all, const std::string& prefix);
void insert_prefixed(ParamSet& all, const ParamSet& part, const std::string& prefix);

}  // namespace bino
