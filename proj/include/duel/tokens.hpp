#pragma once

namespace duel {

// Reserved vocabulary ids shared by the tokenizer and the model.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

}  // namespace duel
