#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace dkt {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. Just enough surface for the LSTM
// kernels; anything fancier belongs to a real linear algebra library.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) { return data_[idx(r, c)]; }
  double operator()(int r, int c) const { return data_[idx(r, c)]; }

  std::span<double> row(int r) { return {data_.data() + idx(r, 0), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const {
    return {data_.data() + idx(r, 0), static_cast<std::size_t>(cols_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t idx(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return static_cast<std::size_t>(r) * cols_ + c;
  }
  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// out += m * x
inline void matvec_add(const Mat& m, const Vec& x, Vec& out) {
  assert(static_cast<int>(x.size()) == m.cols() && static_cast<int>(out.size()) == m.rows());
  for (int r = 0; r < m.rows(); ++r) out[r] += dot(m.row(r), x);
}

// out += m^T * y
inline void matvec_transpose_add(const Mat& m, const Vec& y, Vec& out) {
  assert(static_cast<int>(y.size()) == m.rows() && static_cast<int>(out.size()) == m.cols());
  for (int r = 0; r < m.rows(); ++r) {
    const double yr = y[r];
    auto row = m.row(r);
    for (int c = 0; c < m.cols(); ++c) out[c] += row[c] * yr;
  }
}

// out += column `col` of m. Covers m * x for a one-hot x.
inline void add_column(const Mat& m, int col, Vec& out) {
  assert(static_cast<int>(out.size()) == m.rows());
  for (int r = 0; r < m.rows(); ++r) out[r] += m(r, col);
}

// m += u * v^T
inline void add_outer(Mat& m, const Vec& u, const Vec& v) {
  assert(static_cast<int>(u.size()) == m.rows() && static_cast<int>(v.size()) == m.cols());
  for (int r = 0; r < m.rows(); ++r) {
    const double ur = u[r];
    auto row = m.row(r);
    for (int c = 0; c < m.cols(); ++c) row[c] += ur * v[c];
  }
}

// column `col` of m += u. Outer product against a one-hot v.
inline void add_to_column(Mat& m, int col, const Vec& u) {
  assert(static_cast<int>(u.size()) == m.rows());
  for (int r = 0; r < m.rows(); ++r) m(r, col) += u[r];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace dkt
