#include "cpsearch/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cps {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw NumericalError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

void validate_finite(const Matrix& m, std::string_view what) {
    if (!m.all_finite()) throw NumericalError("non-finite value in " + std::string(what));
}

static void check_dims(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok) {
        throw NumericalError(std::string(op) + ": dimension mismatch " + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()));
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_dims(a.cols() == b.rows(), "matmul", a, b);
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = pa[i * inner + k];
            if (aik == 0.0) continue;
            const double* brow = pb + k * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check_dims(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
               "matmul_tn", a, b);
    const std::size_t n = a.rows(), p = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* arow = pa + r * p;
        const double* brow = pb + r * m;
        for (std::size_t i = 0; i < p; ++i) {
            const double ai = arow[i];
            if (ai == 0.0) continue;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += ai * brow[j];
        }
    }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    matmul_tn_acc(a, b, out);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_dims(a.cols() == b.cols(), "matmul_nt", a, b);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ar, b.row(j));
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Matrix l2_normalize_rows(const Matrix& a) {
    Matrix out = a;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double n = norm2(a.row(r));
        if (!(n >= 1e-12)) throw NumericalError("degenerate row " + std::to_string(r));
        for (double& v : out.row(r)) v /= n;
    }
    return out;
}

std::vector<double> log_softmax_row(std::span<const double> v) {
    if (v.empty()) throw NumericalError("log_softmax_row: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - mx);
    const double log_sum = std::log(sum);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mx) - log_sum;
    return out;
}

void round_to_float(Matrix& m) {
    for (double& v : m.data()) v = static_cast<double>(static_cast<float>(v));
}

std::uint64_t SeededRng::next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t SeededRng::below(std::uint64_t bound) {
    if (bound == 0) throw NumericalError("SeededRng::below: zero bound");
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = next();
    } while (x >= limit);
    return x % bound;
}

SeededRng SeededRng::stream(std::uint64_t seed, std::string_view name) {
    SeededRng mix(seed ^ fnv1a64(name));
    return SeededRng(mix.next());
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace cps
