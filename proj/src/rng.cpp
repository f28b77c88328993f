#include "rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace motlab {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;  // golden ratio
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;  // sqrt(3) - 1

inline void philox_round(std::uint32_t ctr[4], const std::uint32_t key[2]) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    const std::uint32_t n0 = hi1 ^ ctr[1] ^ key[0];
    const std::uint32_t n2 = hi0 ^ ctr[3] ^ key[1];
    ctr[0] = n0;
    ctr[1] = lo1;
    ctr[2] = n2;
    ctr[3] = lo0;
}

}  // namespace

void Philox::block(std::uint64_t key_lo, std::uint64_t key_hi, std::uint64_t counter,
                   std::uint32_t out[4]) {
    std::uint32_t ctr[4] = {static_cast<std::uint32_t>(counter),
                            static_cast<std::uint32_t>(counter >> 32),
                            static_cast<std::uint32_t>(key_hi),
                            static_cast<std::uint32_t>(key_hi >> 32)};
    std::uint32_t key[2] = {static_cast<std::uint32_t>(key_lo),
                            static_cast<std::uint32_t>(key_lo >> 32)};
    for (int r = 0; r < 10; ++r) {
        philox_round(ctr, key);
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    std::memcpy(out, ctr, sizeof(ctr));
}

Philox::Philox(std::uint64_t seed, std::uint64_t stream) : key_lo_(seed), key_hi_(stream) {}

std::uint64_t Philox::next_u64() {
    if (buf_pos_ >= 2) {
        block(key_lo_, key_hi_, counter_++, buf_);
        buf_pos_ = 0;
    }
    const int i = buf_pos_++ * 2;
    return (static_cast<std::uint64_t>(buf_[i + 1]) << 32) | buf_[i];
}

double Philox::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Philox::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Philox::below(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; all our ranges are tiny.
    return next_u64() % n;
}

double Philox::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
}

double Philox::truncated_normal(double std_dev) {
    for (;;) {
        const double z = normal();
        if (std::abs(z) <= 2.0) return z * std_dev;
    }
}

std::uint64_t fnv1a64(const char* data, std::size_t len) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64_str(const char* s) { return fnv1a64(s, std::strlen(s)); }

}  // namespace motlab
