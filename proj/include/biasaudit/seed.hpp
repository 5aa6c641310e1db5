#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace biasaudit {

// FNV-1a over the canonical byte string, then a splitmix64 finisher for
// diffusion. Seeds derived from nearby tags ("fold=1" vs "fold=2") must not
// produce correlated engine states.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t mix64(std::uint64_t h) {
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

// Derive a child seed from a root seed and a human-readable tag. The tag is
// the audit trail: every stream a run consumes can be reproduced from the
// root seed plus the tag that names it.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
    std::string canon = std::to_string(root);
    canon.push_back('|');
    canon.append(tag);
    return mix64(fnv1a64(canon));
}

} // namespace biasaudit
