#include "trackcentre/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include <omp.h>

namespace trackcentre::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("kernel shape mismatch: ") + what);
}

void prepare(Matrix& out, std::size_t r, std::size_t c) {
    if (out.rows != r || out.cols != c) out = Matrix(r, c);
}

// o[j] += sum_k a[k * a_step] * b[k * m + j] with k ascending for every j.
// Blocks of 16 outputs stay in registers across the k loop.
inline void accumulate_rows(const double* a, std::size_t a_step, std::size_t kn, const double* b, std::size_t m, double* o) {
    constexpr std::size_t W = 16;
    std::size_t j0 = 0;
    for (; j0 + W <= m; j0 += W) {
        double acc[W];
        for (std::size_t j = 0; j < W; ++j) acc[j] = o[j0 + j];
        for (std::size_t k = 0; k < kn; ++k) {
            const double av = a[k * a_step];
            const double* br = b + k * m + j0;
            for (std::size_t j = 0; j < W; ++j) acc[j] += av * br[j];
        }
        for (std::size_t j = 0; j < W; ++j) o[j0 + j] = acc[j];
    }
    for (std::size_t j = j0; j < m; ++j) {
        double s = o[j];
        for (std::size_t k = 0; k < kn; ++k) s += a[k * a_step] * b[k * m + j];
        o[j] = s;
    }
}

inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t i) {
    double* o = out.data.data() + i * b.cols;
    std::fill(o, o + b.cols, 0.0);
    accumulate_rows(a.data.data() + i * a.cols, 1, a.cols, b.data.data(), b.cols, o);
}

// b arrives transposed, so this is gemm_row against bt.
inline void gemm_bt_row(const Matrix& a, const std::vector<double>& bt, std::size_t m, Matrix& out, std::size_t i) {
    double* o = out.data.data() + i * m;
    std::fill(o, o + m, 0.0);
    accumulate_rows(a.data.data() + i * a.cols, 1, a.cols, bt.data(), m, o);
}

inline void gemm_at_row(const Matrix& a, const Matrix& b, Matrix& out, std::size_t k) {
    accumulate_rows(a.data.data() + k, a.cols, a.rows, b.data.data(), b.cols, out.data.data() + k * b.cols);
}

inline double row_distance(const Matrix& p, std::size_t i, std::size_t j) {
    const double* a = p.data.data() + i * p.cols;
    const double* b = p.data.data() + j * p.cols;
    double s = 0.0;
    for (std::size_t k = 0; k < p.cols; ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

void gemm(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.rows, "gemm");
    prepare(out, a.rows, b.cols);
    const auto n = static_cast<std::ptrdiff_t>(a.rows);
    if (a.rows * a.cols * b.cols < kParallelWork) {
        for (std::size_t i = 0; i < a.rows; ++i) gemm_row(a, b, out, i);
        return;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) gemm_row(a, b, out, static_cast<std::size_t>(i));
}

void gemm_bt(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.cols, "gemm_bt");
    prepare(out, a.rows, b.rows);
    const auto n = static_cast<std::ptrdiff_t>(a.rows);
    const std::size_t m = b.rows, k_dim = b.cols;
    thread_local std::vector<double> bt;
    bt.resize(m * k_dim);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < k_dim; ++k) bt[k * m + j] = b.data[j * k_dim + k];
    if (a.rows * a.cols * b.rows < kParallelWork) {
        for (std::size_t i = 0; i < a.rows; ++i) gemm_bt_row(a, bt, m, out, i);
        return;
    }
    const std::vector<double>& shared = bt;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) gemm_bt_row(a, shared, m, out, static_cast<std::size_t>(i));
}

void gemm_at_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols, "gemm_at_acc");
    const auto k_dim = static_cast<std::ptrdiff_t>(a.cols);
    if (a.rows * a.cols * b.cols < kParallelWork) {
        for (std::size_t k = 0; k < a.cols; ++k) gemm_at_row(a, b, out, k);
        return;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < k_dim; ++k) gemm_at_row(a, b, out, static_cast<std::size_t>(k));
}

void add_bias(Matrix& x, const Matrix& bias) { serial::add_bias(x, bias); }

void col_sum_acc(const Matrix& x, Matrix& out) { serial::col_sum_acc(x, out); }

Matrix pairwise_distances(const Matrix& points) {
    const std::size_t n = points.rows;
    Matrix d(n, n);
    const bool par = n * n * points.cols >= kParallelWork;
#pragma omp parallel for schedule(dynamic, 8) if (par)
    for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
        const auto i = static_cast<std::size_t>(si);
        for (std::size_t j = i + 1; j < n; ++j) d(i, j) = row_distance(points, i, j);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) d(i, j) = d(j, i);
    return d;
}

namespace serial {

void gemm(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.rows, "gemm");
    prepare(out, a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
}

void gemm_bt(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.cols == b.cols, "gemm_bt");
    prepare(out, a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
            out(i, j) = s;
        }
}

void gemm_at_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    check(a.rows == b.rows && out.rows == a.cols && out.cols == b.cols, "gemm_at_acc");
    for (std::size_t k = 0; k < a.cols; ++k)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = out(k, j);
            for (std::size_t i = 0; i < a.rows; ++i) s += a(i, k) * b(i, j);
            out(k, j) = s;
        }
}

void add_bias(Matrix& x, const Matrix& bias) {
    check(bias.rows == 1 && bias.cols == x.cols, "add_bias");
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) x(i, j) += bias(0, j);
}

void col_sum_acc(const Matrix& x, Matrix& out) {
    check(out.rows == 1 && out.cols == x.cols, "col_sum_acc");
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out(0, j) += x(i, j);
}

Matrix pairwise_distances(const Matrix& points) {
    const std::size_t n = points.rows;
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto [lo, hi] = std::minmax(i, j);
            d(i, j) = row_distance(points, lo, hi);
        }
    return d;
}

}  // namespace serial

void set_thread_cap(int threads) {
    if (threads >= 1) omp_set_num_threads(threads);
}

void apply_thread_env() {
    const char* env = std::getenv("TRACKCENTRE_THREADS");
    if (env == nullptr) return;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) set_thread_cap(static_cast<int>(v));
}

int thread_cap() { return omp_get_max_threads(); }

}  // namespace trackcentre::kernels
