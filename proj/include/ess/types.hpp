#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace ess {

using ClassId = std::uint32_t;

/// Unannotated pixel. Excluded from losses, gradients and confusion counts.
inline constexpr ClassId kIgnoreLabel = std::numeric_limits<ClassId>::max();

using LabelBatch = std::vector<ClassId>;

}  // namespace ess
