// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace rdet {

/// Train mode samples CFR features; eval mode is deterministic.
enum class Mode { Train, Eval };

}  // namespace rdet
