#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "delay_lqr/errors.hpp"

namespace delay_lqr {

/// Dense row-major matrix of doubles. Everything in this project is desk
/// scale (n up to ~20 on the continuous side, a few hundred in the discrete
/// oracle), so a plain heap-backed container is all we need.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix zero(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
    /// Column vector from entries.
    static Matrix column(std::initializer_list<double> entries);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool square() const { return rows_ == cols_ && rows_ > 0; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    Matrix transpose() const;
    Matrix& operator+=(const Matrix& rhs);
    Matrix& operator-=(const Matrix& rhs);
    Matrix& operator*=(double s);

    double frobenius_norm() const;
    double max_abs() const;
    bool all_finite() const;

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix lhs, const Matrix& rhs);
Matrix operator-(Matrix lhs, const Matrix& rhs);
Matrix operator-(const Matrix& m);
Matrix operator*(const Matrix& lhs, const Matrix& rhs);
Matrix operator*(double s, Matrix m);
Matrix operator*(Matrix m, double s);

/// C += s * A * B, shapes checked. Avoids temporaries in hot loops.
void add_product(Matrix& C, const Matrix& A, const Matrix& B, double s = 1.0);

/// e^{A t} by scaling-and-squaring with the degree-13 Pade approximant.
Matrix mat_exp(const Matrix& A, double t);

/// (M + M') / 2.
Matrix sym_part(const Matrix& M);

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi iteration.
/// Inputs asymmetric beyond 1e-10 are symmetrized first.
double min_eigenvalue(const Matrix& M);

/// Solve A X = B by LU with partial pivoting. Throws NumericError when A is
/// numerically singular.
Matrix solve(const Matrix& A, const Matrix& B);

/// x' M y for column vectors x, y.
double quadratic_form(const Matrix& x, const Matrix& M, const Matrix& y);

}  // namespace delay_lqr
