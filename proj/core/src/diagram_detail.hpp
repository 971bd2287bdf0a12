#pragma once

// Helpers shared by the diagram builder, the artifact codec and the verifier.

#include <cstdint>
#include <optional>
#include <vector>

#include "foe/odometer.hpp"

namespace foe::detail {

/// The power of g on [x] when a single one applies, even if [x] is
/// covered by several finer pieces.
std::optional<std::int64_t> uniform_power(const Space& space, const GroupoidMap& g,
                                          const Word& x);
Word common_prefix(const std::vector<Word>& ws);
/// Points whose T-image lies in `d` but which are not in `d` themselves.
ClopenSet preimage_step(const Space& space, const ClopenSet& d);

}  // namespace foe::detail
