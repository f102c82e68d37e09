#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace normdae::rng {

// Counter-based randomness built on splitmix64. Every draw is a pure
// function of (key, counter), so generation order, batching and threading
// cannot change the stream.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Stable tag for labelled substreams ("eps", "perm", ...). FNV-1a.
inline uint64_t tag(std::string_view name) {
    uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

struct Key {
    uint64_t state;
    explicit Key(uint64_t seed) : state(splitmix64(seed)) {}
    Key with(uint64_t v) const {
        Key k = *this;
        k.state = mix(k.state, v);
        return k;
    }
    Key with(std::string_view name) const { return with(tag(name)); }
};

// Uniform in (0,1); never returns 0 or 1.
inline double uniform_at(const Key& key, uint64_t counter) {
    uint64_t bits = splitmix64(mix(key.state, counter));
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller; each counter consumes two uniforms.
inline double gaussian_at(const Key& key, uint64_t counter) {
    double u1 = uniform_at(key, 2 * counter);
    double u2 = uniform_at(key, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Sequential stream for weight init and shuffles.
class Stream {
public:
    explicit Stream(const Key& key) : key_(key) {}
    explicit Stream(uint64_t seed) : key_(seed) {}
    double uniform() { return uniform_at(key_, counter_++); }
    double gaussian() {
        uint64_t c = counter_;
        counter_ += 2;
        double u1 = uniform_at(key_, c);
        double u2 = uniform_at(key_, c + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    uint64_t bits() { return splitmix64(mix(key_.state, counter_++)); }
    // Uniform integer in [0, n) by rejection-free scaling (n << 2^64).
    uint64_t below(uint64_t n) { return bits() % n; }

private:
    Key key_;
    uint64_t counter_ = 0;
};

} // namespace normdae::rng
