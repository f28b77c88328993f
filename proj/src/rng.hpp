#pragma once

#include <cstdint>

namespace motlab {

/// Philox4x32-10 counter-based generator.
///
/// State is four 32-bit counter words plus a 64-bit key; every output block is
/// a pure function of (key, counter), so draws are reproducible across runs
/// and platforms from (seed, stream, index) alone. Uniform doubles use the
/// fixed 53-bit mapping bits >> 11 * 2^-53; normals are Box-Muller pairs over
/// those uniforms.
class Philox {
public:
    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal.
    double normal();
    /// Normal(0, std) resampled into [-2 std, 2 std].
    double truncated_normal(double std_dev);

    /// Stateless block function: the raw 4x32 output for a given counter.
    static void block(std::uint64_t key_lo, std::uint64_t key_hi, std::uint64_t counter,
                      std::uint32_t out[4]);

private:
    std::uint64_t key_lo_;
    std::uint64_t key_hi_;
    std::uint64_t counter_ = 0;
    std::uint32_t buf_[4]{};
    int buf_pos_ = 2;  // consumed; 2 u64 per block
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// Mixes a string into a 64-bit stream id (FNV-1a); used to give each named
/// parameter tensor its own independent Philox stream.
std::uint64_t fnv1a64(const char* data, std::size_t len);
std::uint64_t fnv1a64_str(const char* s);

}  // namespace motlab
