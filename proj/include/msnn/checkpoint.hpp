#pragma once

#include "msnn/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace msnn {

// MSNN checkpoint: "MSNN", u16 version, u32-length config block of
// key=value lines, "PARM", u32 block count, then per block a u16-prefixed
// name, u8 rank, u32 dims and f64 data; trailing CRC32. Blocks cover every
// trainable array, BN running statistics and, when present, the attached
// normalization statistics.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string config_to_text(const MsnnConfig& config);
// Parses the key=value lines produced by config_to_text. Unknown keys are an error.
MsnnConfig config_from_text(const std::string& text);

std::vector<std::uint8_t> encode_checkpoint(const MsnnModel& model);
MsnnModel decode_checkpoint(std::span<const std::uint8_t> bytes);
// Header and config block only; used for inspection and in tests.
std::vector<std::uint8_t> encode_config_only(const MsnnConfig& config);

void save(const MsnnModel& model, const std::filesystem::path& path);
MsnnModel load(const std::filesystem::path& path);

}  // namespace msnn
