#pragma once

#include <cstdint>
#include <string_view>
#include <stdexcept>

#include <Eigen/Dense>

namespace murl {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

// Deterministic splittable stream (xoshiro256++ seeded via SplitMix64).
// child(tag) derives an independent stream from (key, tag); equal keys and
// tags always reproduce the same draws regardless of platform or stdlib.
class RngStream {
  public:
    explicit RngStream(std::uint64_t key) : key_(key) {
        std::uint64_t sm = key;
        for (auto& word : s_) word = detail::splitmix64(sm);
        have_spare_ = false;
        spare_ = 0.0;
    }

    RngStream child(std::uint64_t tag) const {
        std::uint64_t sm = key_ ^ detail::rotl(tag + 0x9E3779B97F4A7C15ULL, 17);
        std::uint64_t derived = detail::splitmix64(sm);
        return RngStream(derived);
    }

    RngStream child(std::string_view tag) const {
        return child(detail::fnv1a(tag));
    }

    std::uint64_t key() const { return key_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    int index(int n) { return static_cast<int>(uniform_int(static_cast<std::uint64_t>(n))); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    // sample from unnormalized nonnegative weights
    int categorical(const Eigen::Ref<const Eigen::VectorXd>& weights) {
        const double total = weights.sum();
        if (!(total > 0.0)) throw std::invalid_argument("categorical: weights must have positive sum");
        double u = uniform() * total;
        for (int i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return static_cast<int>(weights.size()) - 1;
    }

  private:
    std::uint64_t key_;
    std::uint64_t s_[4];
    bool have_spare_;
    double spare_;
};

} // namespace murl
