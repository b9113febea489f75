#ifndef MEA_COMMON_HPP
#define MEA_COMMON_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mea {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto its exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParameterError : Error { using Error::Error; };  // bad argument / config
struct InputError : Error { using Error::Error; };      // unusable data (too short, non-finite)
struct ParseError : Error { using Error::Error; };      // malformed file or wire body
struct IntegrityError : Error { using Error::Error; };  // stored metadata contradicts payload
struct IoError : Error { using Error::Error; };         // filesystem / network endpoint
struct BudgetError : Error { using Error::Error; };     // query budget exhausted
struct TransportError : Error { using Error::Error; };  // HTTP transport failure after retries
struct NumericError : Error { using Error::Error; };    // non-finite values mid-computation

// ---------------------------------------------------------------------------
// Deterministic PRNG: splitmix64. All randomness in the project flows through
// this generator so runs are reproducible across platforms. The mapping to
// doubles uses the top 53 bits, giving values in [0, 1).
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_in(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    // Uniform integer in [0, n). Multiply-shift; n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view s);

// Child seed derivation: mixes a salt into a base seed with one splitmix64
// round, so independent streams can be split off a single named seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index);

// Fisher-Yates shuffle driven by Rng.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// ---------------------------------------------------------------------------
// Dense row-major matrix of doubles. Small and unclever on purpose; the hot
// loops live in mea::kernels.
// ---------------------------------------------------------------------------

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }
    std::span<const double> row_span(std::size_t r) const { return {row(r), cols_}; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const;

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Rounds to 9 significant decimal digits; the wire encoding for
// representation matrices. Round-trips within 1e-6 absolute for the
// magnitudes the victim emits.
double round_sig9(double v);

}  // namespace mea

#endif
