#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <utility>
#include <vector>

#include "abw/errors.hpp"
#include "abw/tolerances.hpp"

// Dense linear algebra used by every other module: thin SVD, similarity
// measures, span projection and weight-matrix component removal. All
// functions are pure; inputs are never mutated.
namespace abw {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// How a direction is removed from a weight matrix.
//   project: the direction is normalized first; W' = W - scale * (d^ d^T) W.
//            At scale 1 every row of W' is orthogonal to d^.
//   scaled:  the direction is used raw; W' = W - scale * (d d^T) W, so the
//            perturbation grows with the squared direction norm.
enum class RemoveMode { project, scaled };

// Thin SVD m = left * diag(singular_values) * right^T with r = min(rows, cols)
// columns on each side. Singular values are nonincreasing.
struct SvdResult {
    Matrix left;
    Vector singular_values;
    Matrix right;

    Matrix reconstruct() const {
        return left * singular_values.asDiagonal() * right.transpose();
    }
};

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

inline SvdResult svd_thin(const Matrix& m) {
    if (m.rows() < 1 || m.cols() < 1) {
        throw InvalidInputError("svd_thin: empty matrix");
    }
    if (!m.allFinite()) {
        throw InvalidInputError("svd_thin: non-finite entries");
    }
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return SvdResult{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    if (a.size() != b.size()) {
        throw InvalidInputError("cosine: dimension mismatch");
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateInputError("cosine: zero-norm input");
    }
    const double c = a.dot(b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

struct SpanProjection {
    Vector projection;
    double fraction; // |projection| / |v|, in [0, 1]
};

// Projects v onto span(basis). The basis is orthonormalized internally
// (modified Gram-Schmidt, near-zero columns dropped), so linearly dependent
// or unnormalized bases are fine.
inline SpanProjection project_onto_span(const Vector& v, const std::vector<Vector>& basis) {
    if (basis.empty()) {
        throw InvalidInputError("project_onto_span: empty basis");
    }
    const double vn = v.norm();
    if (vn == 0.0) {
        throw DegenerateInputError("project_onto_span: zero-norm vector");
    }
    std::vector<Vector> ortho;
    ortho.reserve(basis.size());
    for (const Vector& b : basis) {
        if (b.size() != v.size()) {
            throw InvalidInputError("project_onto_span: basis dimension mismatch");
        }
        Vector u = b;
        for (const Vector& q : ortho) {
            u -= q.dot(u) * q;
        }
        // second pass for numerical stability
        for (const Vector& q : ortho) {
            u -= q.dot(u) * q;
        }
        const double un = u.norm();
        if (un > 1e-12 * std::max(1.0, b.norm())) {
            ortho.push_back(u / un);
        }
    }
    if (ortho.empty()) {
        throw DegenerateInputError("project_onto_span: basis spans nothing");
    }
    Vector proj = Vector::Zero(v.size());
    for (const Vector& q : ortho) {
        proj += q.dot(v) * q;
    }
    double fraction = proj.norm() / vn;
    fraction = std::clamp(fraction, 0.0, 1.0);
    return SpanProjection{std::move(proj), fraction};
}

// Removes the component of W aligned with direction d from the output side:
// rows of W lose their d-aligned part. d must match the output dimension
// (W.rows()). scale >= 0; scale > 1 over-rotates deliberately.
inline Matrix remove_component(const Matrix& w, const Vector& d, double scale, RemoveMode mode) {
    if (d.size() != w.rows()) {
        throw InvalidInputError("remove_component: direction does not match output rows");
    }
    if (!(scale >= 0.0) || !std::isfinite(scale)) {
        throw InvalidInputError("remove_component: bad scale");
    }
    if (!d.allFinite() || !w.allFinite()) {
        throw InvalidInputError("remove_component: non-finite input");
    }
    if (scale == 0.0) {
        return w;
    }
    Vector dir = d;
    if (mode == RemoveMode::project) {
        const double n = dir.norm();
        if (n == 0.0) {
            throw DegenerateInputError("remove_component: zero direction in project mode");
        }
        dir /= n;
    }
    // W - scale * dir (dir^T W), evaluated as a rank-1 update
    return w - scale * dir * (dir.transpose() * w);
}

} // namespace abw
