#include "delay_lqr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace delay_lqr {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch");
    }
}

void require_square(const Matrix& m, const char* op) {
    if (!m.square()) {
        throw DimensionError(std::string(op) + ": matrix must be square and nonempty");
    }
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Matrix init: ragged rows");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix I(n, n);
    for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

Matrix Matrix::column(std::initializer_list<double> entries) {
    Matrix v(entries.size(), 1);
    std::size_t i = 0;
    for (double e : entries) v(i++, 0) = e;
    return v;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix& Matrix::operator+=(const Matrix& rhs) {
    require_same_shape(*this, rhs, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& rhs) {
    require_same_shape(*this, rhs, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Matrix::frobenius_norm() const {
    double acc = 0.0;
    for (double v : data_) acc += v * v;
    return std::sqrt(acc);
}

double Matrix::max_abs() const {
    double acc = 0.0;
    for (double v : data_) acc = std::max(acc, std::abs(v));
    return acc;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix operator+(Matrix lhs, const Matrix& rhs) { return lhs += rhs; }
Matrix operator-(Matrix lhs, const Matrix& rhs) { return lhs -= rhs; }

Matrix operator-(const Matrix& m) {
    Matrix r = m;
    r *= -1.0;
    return r;
}

Matrix operator*(double s, Matrix m) { return m *= s; }
Matrix operator*(Matrix m, double s) { return m *= s; }

Matrix operator*(const Matrix& lhs, const Matrix& rhs) {
    if (lhs.cols() != rhs.rows()) throw DimensionError("operator*: inner dimensions differ");
    Matrix out(lhs.rows(), rhs.cols());
    add_product(out, lhs, rhs);
    return out;
}

void add_product(Matrix& C, const Matrix& A, const Matrix& B, double s) {
    if (A.cols() != B.rows() || C.rows() != A.rows() || C.cols() != B.cols()) {
        throw DimensionError("add_product: shape mismatch");
    }
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    const double* a = A.data();
    const double* b = B.data();
    double* c = C.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = s * a[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = b + p * m;
            double* crow = c + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
        }
    }
}

Matrix sym_part(const Matrix& M) {
    require_square(M, "sym_part");
    Matrix s(M.rows(), M.rows());
    for (std::size_t i = 0; i < M.rows(); ++i)
        for (std::size_t j = 0; j < M.rows(); ++j) s(i, j) = 0.5 * (M(i, j) + M(j, i));
    return s;
}

Matrix solve(const Matrix& A, const Matrix& B) {
    require_square(A, "solve");
    if (A.rows() != B.rows()) throw DimensionError("solve: rhs row count mismatch");
    const std::size_t n = A.rows(), m = B.cols();
    Matrix lu = A;
    Matrix x = B;
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::abs(lu(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::abs(lu(r, col));
            if (v > best) {
                best = v;
                piv = r;
            }
        }
        if (!(best > 0.0) || !std::isfinite(best)) {
            throw NumericError("solve: singular matrix");
        }
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu(col, j), lu(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(x(col, j), x(piv, j));
        }
        const double d = lu(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = lu(r, col) / d;
            if (f == 0.0) continue;
            lu(r, col) = f;
            for (std::size_t j = col + 1; j < n; ++j) lu(r, j) -= f * lu(col, j);
            for (std::size_t j = 0; j < m; ++j) x(r, j) -= f * x(col, j);
        }
    }
    for (std::size_t col = n; col-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) x(col, j) /= lu(col, col);
        for (std::size_t r = 0; r < col; ++r) {
            const double f = lu(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) x(r, j) -= f * x(col, j);
        }
    }
    return x;
}

// Pade-13 scaling and squaring, Higham's coefficients.
Matrix mat_exp(const Matrix& A, double t) {
    require_square(A, "mat_exp");
    if (!A.all_finite() || !std::isfinite(t)) throw NumericError("mat_exp: non-finite input");
    const std::size_t n = A.rows();

    Matrix M = A;
    M *= t;

    // 1-norm for scaling.
    double norm1 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += std::abs(M(i, j));
        norm1 = std::max(norm1, c);
    }
    const double theta13 = 5.371920351148152;
    int squarings = 0;
    if (norm1 > theta13) {
        squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
        M *= std::ldexp(1.0, -squarings);
    }

    static const double b[14] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};

    const Matrix I = Matrix::identity(n);
    const Matrix M2 = M * M;
    const Matrix M4 = M2 * M2;
    const Matrix M6 = M4 * M2;

    Matrix U = M * (M6 * (b[13] * M6 + b[11] * M4 + b[9] * M2) + b[7] * M6 + b[5] * M4 +
                    b[3] * M2 + b[1] * I);
    Matrix V = M6 * (b[12] * M6 + b[10] * M4 + b[8] * M2) + b[6] * M6 + b[4] * M4 + b[2] * M2 +
               b[0] * I;

    Matrix R = solve(V - U, V + U);
    for (int s = 0; s < squarings; ++s) R = R * R;
    return R;
}

double min_eigenvalue(const Matrix& M) {
    require_square(M, "min_eigenvalue");
    const std::size_t n = M.rows();
    Matrix S = sym_part(M);

    if (n == 1) return S(0, 0);

    // Cyclic Jacobi sweeps; fine for the small symmetric matrices used here.
    const double scale = std::max(S.max_abs(), 1.0);
    const double tol = 1e-15 * scale;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(S(p, q)));
        if (off <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = S(p, q);
                if (std::abs(apq) <= tol * 1e-2) continue;
                const double app = S(p, p), aqq = S(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double sgn = tau >= 0.0 ? 1.0 : -1.0;
                const double tt = sgn / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + tt * tt);
                const double s = tt * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double skp = S(k, p), skq = S(k, q);
                    S(k, p) = c * skp - s * skq;
                    S(k, q) = s * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double spk = S(p, k), sqk = S(q, k);
                    S(p, k) = c * spk - s * sqk;
                    S(q, k) = s * spk + c * sqk;
                }
            }
        }
    }
    double mn = S(0, 0);
    for (std::size_t i = 1; i < n; ++i) mn = std::min(mn, S(i, i));
    return mn;
}

double quadratic_form(const Matrix& x, const Matrix& M, const Matrix& y) {
    if (x.cols() != 1 || y.cols() != 1 || M.rows() != x.rows() || M.cols() != y.rows()) {
        throw DimensionError("quadratic_form: shape mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < M.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < M.cols(); ++j) row += M(i, j) * y(j, 0);
        acc += x(i, 0) * row;
    }
    return acc;
}

}  // namespace delay_lqr
