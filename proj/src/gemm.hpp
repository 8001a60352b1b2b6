#pragma once

#include <Eigen/Core>

namespace srf::detail {

/// Row-major C[m×n] (+)= op(A)[m×k] · op(B)[k×n], where op() optionally
/// transposes the stored matrix. `lda`/`ldb`/`ldc` are row strides of the
/// stored (untransposed) arrays.
template <class T>
void gemm(bool trans_a, bool trans_b, long m, long n, long k, const T* a, long lda, const T* b, long ldb,
          T* c, long ldc, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using Map = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  Map cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (!accumulate) cm.setZero();
  if (k == 0) return;
  ConstMap am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  ConstMap bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

}  // namespace srf::detail
