#pragma once

#include <cstdint>
#include <vector>

namespace a3sn {

// Small deterministic generator (splitmix64). Every random choice in the
// project flows through this so that a root seed fully determines all
// outputs, independent of the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform integer in [0, n). n must be > 0.
    std::size_t next_below(std::size_t n) {
        return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = next_below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream derived from a root seed and a stream id. Used to
    // split one experiment seed into init/shuffle/dropout/... streams.
    static Rng derive(std::uint64_t root_seed, std::uint64_t stream_id) {
        Rng mix(root_seed ^ (0xa0761d6478bd642fULL * (stream_id + 1)));
        return Rng(mix.next_u64());
    }

private:
    std::uint64_t state_;
};

} // namespace a3sn
