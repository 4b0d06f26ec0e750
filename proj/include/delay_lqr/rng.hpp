#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace delay_lqr {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11 constants).
// Stateless: every draw is a pure function of (key, counter), so per-path
// streams derived from (master_seed, path index) are reproducible no matter
// how paths are scheduled across threads.
namespace philox {

inline std::array<std::uint32_t, 4> block(std::uint64_t key, std::array<std::uint32_t, 4> ctr) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;

    std::uint32_t k0 = static_cast<std::uint32_t>(key);
    std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k0,
               static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k1,
               static_cast<std::uint32_t>(p0)};
        k0 += kW0;
        k1 += kW1;
    }
    return ctr;
}

}  // namespace philox

/// Standard normal draw indexed by (seed, path, draw index): one Philox block
/// per draw, Box-Muller on its two 53-bit uniforms.
inline double normal_draw(std::uint64_t master_seed, std::uint64_t path, std::uint64_t index) {
    const auto words = philox::block(
        master_seed, {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)});
    const std::uint64_t a = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(words[2]) << 32) | words[3];
    const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;  // in (0, 1]
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;        // in [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

}  // namespace delay_lqr
