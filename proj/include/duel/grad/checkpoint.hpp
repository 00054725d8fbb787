#pragma once

#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "duel/grad/tensor.hpp"

namespace duel::grad {

/// Leading bytes of every checkpoint file.
inline constexpr std::string_view kCheckpointMagic = "DUELCKPT1";

/// Layout (all integers little-endian):
///   "DUELCKPT1" | u64 seed | u32 count |
///   count x ( u32 name_len | name (UTF-8) | u32 rank | rank x u32 dim | f32 payload )
/// Entries appear in ParamStore (lexicographic) order.
void write_checkpoint(std::ostream& out, const ParamStore& params);
ParamStore read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace duel::grad
