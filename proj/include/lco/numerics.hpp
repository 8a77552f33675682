#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace lco {

class Rng;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng);
    /// Xavier/Glorot uniform, limit sqrt(6 / (fan_in + fan_out)) with fan_in = cols.
    static Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    Matrix transposed() const;
    bool all_finite() const;
    void fill(double v);

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// a (m x k) * b (k x n).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (m x k) * b^T, where b is (n x k).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b, where a is (k x m) and b is (k x n).
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Adds `bias` (1 x cols) to every row.
void add_row_bias(Matrix& m, const Matrix& bias);
/// Column sums as a 1 x cols matrix.
Matrix column_sums(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> v);
/// u.v / (|u||v|); throws ValidationError on a zero-norm argument.
double cosine(std::span<const double> u, std::span<const double> v);

/// Row-wise L2 normalisation; throws on a zero row.
Matrix normalize_rows(const Matrix& m);

double log_sum_exp(std::span<const double> v);
std::vector<double> log_softmax(std::span<const double> v);

/// Maximum over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` is evaluated at params +/- h e_i. Throws if a probe value is not finite.
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> params, std::span<const double> analytic,
                  double h = 1e-5);

}  // namespace lco
