#pragma once

namespace gaitkit {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCheckpointMagic = "GGKPT1";

}  // namespace gaitkit
