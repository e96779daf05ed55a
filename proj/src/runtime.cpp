#include "neursplit/runtime.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace neursplit {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : stage) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t thread_budget() {
    if (const char* env = std::getenv("NEURSPLIT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace neursplit
