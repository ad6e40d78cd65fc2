#pragma once

#include "trackcentre/matrix.hpp"

// Dense kernels used by the encoder, the baselines and the clustering code.
//
// Every kernel exists twice: an OpenMP version in `kernels` and a plain
// loop version in `kernels::serial`. Both accumulate each output element in
// the same order, so their results are bitwise identical for any thread
// count. The serial versions are the test reference.

namespace trackcentre::kernels {

/// out = a * b. Shapes (n x k)(k x m) -> (n x m).
void gemm(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a * b^T. Shapes (n x k)(m x k) -> (n x m).
void gemm_bt(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a^T * b. Shapes (n x k)(n x m) -> (k x m). Accumulates into out.
void gemm_at_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// Adds the 1 x m bias row to every row of x.
void add_bias(Matrix& x, const Matrix& bias);
/// out(0, j) += sum_i x(i, j).
void col_sum_acc(const Matrix& x, Matrix& out);
/// Symmetric Euclidean distance matrix between the rows of points.
Matrix pairwise_distances(const Matrix& points);

namespace serial {
void gemm(const Matrix& a, const Matrix& b, Matrix& out);
void gemm_bt(const Matrix& a, const Matrix& b, Matrix& out);
void gemm_at_acc(const Matrix& a, const Matrix& b, Matrix& out);
void add_bias(Matrix& x, const Matrix& bias);
void col_sum_acc(const Matrix& x, Matrix& out);
Matrix pairwise_distances(const Matrix& points);
}  // namespace serial

/// Caps the OpenMP team size. Values < 1 are ignored.
void set_thread_cap(int threads);
/// Reads TRACKCENTRE_THREADS and applies it when set to a positive integer.
void apply_thread_env();
int thread_cap();

}  // namespace trackcentre::kernels
