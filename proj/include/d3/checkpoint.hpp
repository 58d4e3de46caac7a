#pragma once

#include <filesystem>
#include <string>

#include "d3/head.hpp"

namespace d3::head {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  HeadParams<double> params;  // widened from the stored 32-bit floats
  std::string provenance_json;
};

/// Binary "D3CK" file: u16 version, u8 head kind, u8 branch mode, u32 D, u64 count,
/// count little-endian f32 weights in layout order, u64 length + provenance JSON.
void save_checkpoint(const HeadParams<double>& params, const std::string& provenance_json,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every weight through f32, matching what a checkpoint round trip yields.
HeadParams<double> round_to_storage(const HeadParams<double>& params);

}  // namespace d3::head
