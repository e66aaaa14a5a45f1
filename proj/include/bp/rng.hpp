#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace bp {

// Philox4x32-10 counter-based generator (Salmon et al., Random123). Every draw is a
// pure function of (key, counter), so simulations can be split across workers in
// any order and still produce the same bits.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter generate(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

// Independent streams sharing the (seed, path, step, index) key space.
enum class Stream : std::uint32_t {
    drivers = 0,
    bridge = 1,
};

// Standard normal draw addressed by (seed, stream, path, step, index).
// Box-Muller on two 53-bit uniforms taken from one Philox block.
inline double counter_normal(std::uint64_t seed, Stream stream, std::uint32_t path,
                             std::uint32_t step, std::uint32_t index) noexcept {
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed),
                              static_cast<std::uint32_t>(seed >> 32)};
    const Philox4x32::Counter ctr{index, step, path, static_cast<std::uint32_t>(stream)};
    const auto out = Philox4x32::generate(ctr, key);
    const std::uint64_t a = (std::uint64_t{out[0]} << 32) | out[1];
    const std::uint64_t b = (std::uint64_t{out[2]} << 32) | out[3];
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    const double u1 = (static_cast<double>(a >> 11) + 0.5) * kScale;
    const double u2 = (static_cast<double>(b >> 11) + 0.5) * kScale;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace bp
