#include "mea/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace mea {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    Rng rng(base ^ (salt * 0x9E3779B97F4A7C15ull));
    return rng.next_u64();
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    return derive_seed(base, fnv1a64(label));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
    return derive_seed(derive_seed(base, fnv1a64(label)), index + 1);
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double round_sig9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
}

}  // namespace mea
