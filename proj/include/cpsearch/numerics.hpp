#pragma once

// Dense row-major matrices, stable reductions and the splitmix64 generator.
// Training math runs in double; float only appears in persisted payloads.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpsearch/errors.hpp"

namespace cps {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v);
    /// True when every entry is finite.
    bool all_finite() const;

    Matrix transposed() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Throws NumericalError naming `what` when the matrix holds NaN or Inf.
void validate_finite(const Matrix& m, std::string_view what);

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a · bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// out += aᵀ · b (gradient accumulation for weight matrices).
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix l2_normalize_rows(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

std::vector<double> log_softmax_row(std::span<const double> v);

/// Round every entry to the nearest float so the value survives a 32-bit round trip.
void round_to_float(Matrix& m);

/// splitmix64 (Steele, Lea, Flood 2014; reference constants from Vigna's
/// public-domain splitmix64.c). One call: state += 0x9E3779B97F4A7C15, then the
/// output is state mixed by two xor-shift-multiply rounds and a final xor-shift.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : state_(seed) {}

    /// Independent stream derived from a base seed and a stream name.
    static SeededRng stream(std::uint64_t seed, std::string_view name);

    std::uint64_t next();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, bound) without modulo bias.
    std::uint64_t below(std::uint64_t bound);

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

template <typename T>
void shuffle(std::vector<T>& items, SeededRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// 64-bit FNV-1a, used for stream naming and content hashes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace cps
