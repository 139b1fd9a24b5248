#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cfmd {

/// Broad failure class. The CLI maps these onto exit codes.
enum class ErrorCategory { validation, runtime };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

/// Bad input or violated precondition.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what)
        : Error(ErrorCategory::validation, what) {}
};

/// Something failed while the inputs themselves were acceptable.
class RuntimeError : public Error {
public:
    explicit RuntimeError(const std::string& what)
        : Error(ErrorCategory::runtime, what) {}
};

/// Malformed input record. `line` is 1-based, 0 when unknown.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline void require(bool cond, const std::string& message) {
    if (!cond) throw ValidationError(message);
}

// ---------------------------------------------------------------------------
// Seeding and random draws.
//
// std::mt19937_64 is bit-specified by the standard, but the std:: distributions
// are not, so every draw below goes through these helpers to keep outputs
// identical across standard libraries.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent child seed for (seed, stream, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t index = 0) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed ^ h) + index);
}

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) noexcept {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) noexcept {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[uniform_index(rng, i)]);
    }
}

/// Index drawn proportionally to non-negative weights. `total` is their sum.
inline std::size_t sample_weighted(std::span<const double> weights, double total, Rng& rng) {
    double target = uniform01(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        target -= weights[i];
        if (target < 0.0) return i;
    }
    // Rounding residue lands on the last positive weight.
    for (std::size_t i = weights.size(); i > 0; --i) {
        if (weights[i - 1] > 0.0) return i - 1;
    }
    return 0;
}

}  // namespace cfmd
