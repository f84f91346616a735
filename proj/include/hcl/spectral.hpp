#pragma once

#include "hcl/core.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace hcl {

/// Symmetric eigendecomposition, eigenvalues descending.
struct SymEig {
	Vector values;
	Matrix vectors;
};

namespace detail {

// Flip each column so that its largest-magnitude coordinate is positive (first one on ties).
inline void fix_signs(Matrix& U)
{
	for (Index j = 0; j < U.cols(); ++j) {
		Index arg = 0;
		double best = -1.0;
		for (Index i = 0; i < U.rows(); ++i)
			if (std::abs(U(i, j)) > best) {
				best = std::abs(U(i, j));
				arg = i;
			}
		if (U.rows() > 0 && U(arg, j) < 0)
			U.col(j) *= -1.0;
	}
}

} // namespace detail

inline void check_symmetric(const Matrix& S, const char* who, double rel_tol = 1e-10)
{
	if (S.rows() != S.cols())
		throw ShapeError(std::string(who) + ": matrix is not square");
	const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
	if ((S - S.transpose()).cwiseAbs().maxCoeff() > rel_tol * scale)
		throw PreconditionError(std::string(who) + ": matrix is not symmetric");
}

inline SymEig sym_eig(const Matrix& S)
{
	if (S.rows() != S.cols())
		throw ShapeError("sym_eig: matrix is not square");
	Eigen::SelfAdjointEigenSolver<Matrix> es(S);
	if (es.info() != Eigen::Success)
		throw NumericalError("sym_eig: eigendecomposition failed");
	SymEig out;
	out.values = es.eigenvalues().reverse();
	out.vectors = es.eigenvectors().rowwise().reverse();
	detail::fix_signs(out.vectors);
	return out;
}

struct CovarianceEstimate {
	Matrix S_n;
	Index n = 0;
	SymEig eig;
	std::optional<double> sigma_eps_hat_sq;
	std::optional<Matrix> S_tilde;
};

/**
 * S_n = (1/(n−1)) Σ x_i x_iᵀ over the rows of X.
 *
 * With center = true the column means are removed first. Accumulated as a
 * symmetric rank update, so S_n is exactly symmetric.
 */
inline CovarianceEstimate sample_covariance(const Matrix& X, bool center = false)
{
	const Index n = X.rows();
	if (n < 2)
		throw PreconditionError("sample_covariance: need n >= 2");
	const Index d = X.cols();
	Matrix S = Matrix::Zero(d, d);
	if (center) {
		const Matrix Xc = X.rowwise() - X.colwise().mean();
		S.selfadjointView<Eigen::Lower>().rankUpdate(Xc.transpose(), 1.0 / static_cast<double>(n - 1));
	} else {
		S.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), 1.0 / static_cast<double>(n - 1));
	}
	CovarianceEstimate out;
	out.S_n = S.selfadjointView<Eigen::Lower>();
	out.n = n;
	return out;
}

/// Wrap an externally supplied (e.g. population) covariance.
inline CovarianceEstimate covariance_from_matrix(const Matrix& S, Index n = 0)
{
	check_symmetric(S, "covariance_from_matrix");
	CovarianceEstimate out;
	out.S_n = S;
	out.n = n;
	return out;
}

/**
 * σ̂_ε² = mean of the trailing d − r eigenvalues of S_n; S̃_n = S_n − σ̂_ε² I.
 *
 * Negative eigenvalues of S̃_n are left as they are.
 */
inline CovarianceEstimate denoise_covariance(CovarianceEstimate cov, Index r)
{
	const Index d = cov.S_n.rows();
	if (r < 0 || r >= d)
		throw PreconditionError("denoise_covariance: need 0 <= r < d (r = " + std::to_string(r) +
					", d = " + std::to_string(d) + ")");
	if (cov.eig.values.size() != d)
		cov.eig = sym_eig(cov.S_n);
	const double s2 = cov.eig.values.tail(d - r).mean();
	cov.sigma_eps_hat_sq = s2;
	Matrix St = cov.S_n;
	St.diagonal().array() -= s2;
	cov.S_tilde = std::move(St);
	return cov;
}

/// Eigendecomposition of S̃ = S_n − σ̂² I reusing that of S_n.
inline SymEig denoised_eig(const CovarianceEstimate& cov)
{
	if (!cov.sigma_eps_hat_sq)
		throw PreconditionError("denoised_eig: covariance has not been denoised");
	SymEig out = cov.eig;
	out.values.array() -= *cov.sigma_eps_hat_sq;
	return out;
}

struct TruncatedSvd {
	Matrix U;
	Vector sigma;
	Matrix V;
};

/// Top-k singular triplets; U columns sign-normalized and V adjusted to match.
inline TruncatedSvd truncated_svd(const Matrix& A, Index k)
{
	if (k < 0 || k > std::min(A.rows(), A.cols()))
		throw PreconditionError("truncated_svd: rank " + std::to_string(k) + " exceeds block dimension " +
					std::to_string(std::min(A.rows(), A.cols())));
	Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
	TruncatedSvd out;
	out.U = svd.matrixU().leftCols(k);
	out.sigma = svd.singularValues().head(k);
	out.V = svd.matrixV().leftCols(k);
	for (Index j = 0; j < k; ++j) {
		Index arg = 0;
		for (Index i = 1; i < out.U.rows(); ++i)
			if (std::abs(out.U(i, j)) > std::abs(out.U(arg, j)))
				arg = i;
		if (out.U(arg, j) < 0) {
			out.U.col(j) *= -1.0;
			out.V.col(j) *= -1.0;
		}
	}
	return out;
}

/**
 * Orthogonal H minimizing ‖VH − W‖_F: H = A Bᵀ where VᵀW = A Σ Bᵀ.
 */
inline Matrix procrustes_align(const Matrix& V, const Matrix& W)
{
	if (V.rows() != W.rows() || V.cols() != W.cols())
		throw ShapeError("procrustes_align: shape mismatch");
	const Index k = V.cols();
	if (k < 1)
		throw PreconditionError("procrustes_align: need at least one column");
	Eigen::JacobiSVD<Matrix> svd(V.transpose() * W, Eigen::ComputeFullU | Eigen::ComputeFullV);
	return svd.matrixU() * svd.matrixV().transpose();
}

/// Orthogonal polar factor of a square matrix.
inline Matrix polar_orthogonal(const Matrix& X)
{
	if (X.rows() != X.cols())
		throw ShapeError("polar_orthogonal: matrix is not square");
	Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeFullU | Eigen::ComputeFullV);
	return svd.matrixU() * svd.matrixV().transpose();
}

/// Symmetric PSD square root with eigenvalues floored at `floor`.
inline Matrix psd_sqrt(const Matrix& A, double floor = 0.0)
{
	const Matrix As = 0.5 * (A + A.transpose());
	const SymEig e = sym_eig(As);
	const Vector s = e.values.cwiseMax(floor).cwiseMax(0.0).cwiseSqrt();
	return e.vectors * s.asDiagonal() * e.vectors.transpose();
}

inline double spectral_norm(const Matrix& A)
{
	if (A.size() == 0)
		return 0.0;
	Eigen::JacobiSVD<Matrix> svd(A);
	return svd.singularValues()(0);
}

/// Largest row-wise Euclidean norm.
inline double two_inf_norm(const Matrix& A)
{
	if (A.size() == 0)
		return 0.0;
	return A.rowwise().norm().maxCoeff();
}

/// Moore–Penrose pseudo-inverse with relative cutoff.
inline Matrix pinv(const Matrix& A, double rel_cut = 1e-12)
{
	Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
	const Vector& s = svd.singularValues();
	const double cut = s.size() ? rel_cut * s(0) : 0.0;
	Vector inv(s.size());
	for (Index i = 0; i < s.size(); ++i)
		inv(i) = s(i) > cut ? 1.0 / s(i) : 0.0;
	return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

} // namespace hcl
