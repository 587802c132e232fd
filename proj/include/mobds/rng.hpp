#pragma once
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace mobds {

// splitmix64 step; used for seed derivation and hashing.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic seed for a (base, path...) pair. Streams derived from
// distinct paths are treated as independent; this is what makes parallel
// runs independent of worker count and scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = base ^ 0x6a09e667f3bcc908ULL;
    splitmix64(s);
    for (std::uint64_t p : path) {
        s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        splitmix64(s);
    }
    std::uint64_t out = s;
    return splitmix64(out);
}

// mt19937_64 with portable uniform/normal/shuffle on top. The engine's
// output sequence is pinned by the standard; the distributions here avoid
// std::*_distribution, whose streams are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes exactly two uniforms per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // u1 == 0 would give log(0); nudge to the smallest positive value.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n) via 128-bit widening multiply.
    std::uint64_t bounded(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    // Fisher-Yates; uniform over all n! orderings given the stream.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mobds
