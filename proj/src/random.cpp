#include "nvp/random.hpp"

namespace nvp {

uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t step) {
    // splitmix64 finalizer over the combined words
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1) + 0xbf58476d1ce4e5b9ULL * (step + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace nvp
