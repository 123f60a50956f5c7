#pragma once

// Text assets (prompt templates, mock corpus, reference rewards) compiled
// into the library so the binaries run from any working directory.

#include <span>
#include <string_view>

namespace cour::assets {

struct Asset {
    std::string_view name;  // path relative to assets/, e.g. "prompts/system_v1.txt"
    std::string_view text;
};

std::span<const Asset> all();

/// Throws cour::Error when the asset does not exist.
std::string_view get(std::string_view name);

}  // namespace cour::assets
