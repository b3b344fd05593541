#pragma once

#include <Eigen/Core>

namespace mlpmatch {

// C[m x n] = A[m x k] * B[k x n], all row-major contiguous.
template <typename T>
void gemm(int m, int k, int n, const T* a, const T* b, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a, m, k);
  Eigen::Map<const Mat> mb(b, k, n);
  Eigen::Map<Mat> mc(c, m, n);
  mc.noalias() = ma * mb;
}

// C[m x n] = A^T[m x k] * B[k x n] where A is stored as [k x m] row-major.
template <typename T>
void gemm_at(int m, int k, int n, const T* a, const T* b, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a, k, m);
  Eigen::Map<const Mat> mb(b, k, n);
  Eigen::Map<Mat> mc(c, m, n);
  mc.noalias() = ma.transpose() * mb;
}

// C[m x n] += A[m x k] * B^T[k x n] where B is stored as [n x k] row-major.
template <typename T>
void gemm_bt_acc(int m, int k, int n, const T* a, const T* b, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a, m, k);
  Eigen::Map<const Mat> mb(b, n, k);
  Eigen::Map<Mat> mc(c, m, n);
  mc.noalias() += ma * mb.transpose();
}

}  // namespace mlpmatch
