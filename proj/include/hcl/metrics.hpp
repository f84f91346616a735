#pragma once

#include "hcl/core.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/spectral.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace hcl {

struct NormTriple {
	double spectral = 0.0;
	double frobenius = 0.0;
	double two_inf = 0.0;
};

inline NormTriple norms_of(const Matrix& E)
{
	return {spectral_norm(E), E.norm(), two_inf_norm(E)};
}

struct RecoveryReport {
	double global_err = 0.0;
	std::vector<double> block_err; ///< indexed by structure position
	NormTriple aligned_global;
	std::vector<NormTriple> aligned_block;
};

/// ‖VVᵀ − WWᵀ‖_F.
inline double projection_error(const Matrix& V, const Matrix& W)
{
	if (V.rows() != W.rows())
		throw ShapeError("projection_error: row counts differ");
	return (V * V.transpose() - W * W.transpose()).norm();
}

/// Global Err plus per-structure Err on the stacked member rows.
inline RecoveryReport projection_errors(const Matrix& V, const Matrix& W, const Hierarchy& h)
{
	check_shape(h.layout, V, "projection_errors");
	check_shape(h.layout, W, "projection_errors");
	RecoveryReport out;
	out.global_err = projection_error(V, W);
	out.block_err.resize(static_cast<std::size_t>(h.num_structures()));
	for (int s = 0; s < h.num_structures(); ++s)
		out.block_err[static_cast<std::size_t>(s)] = projection_error(stacked_block(h, V, s), stacked_block(h, W, s));
	return out;
}

/// Block-diagonal H̃ of per-structure Procrustes rotations aligning V_s to W_s.
inline Matrix structure_alignment(const Matrix& V, const Matrix& W, const Hierarchy& h)
{
	check_shape(h.layout, V, "structure_alignment");
	check_shape(h.layout, W, "structure_alignment");
	Matrix H = Matrix::Zero(h.r(), h.r());
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		if (cc.size == 0)
			continue;
		H.block(cc.offset, cc.offset, cc.size, cc.size) =
			procrustes_align(stacked_block(h, V, s), stacked_block(h, W, s));
	}
	return H;
}

/**
 * Procrustes-aligned errors: ‖VH − W‖ globally (H over all r columns) and
 * ‖V_sH_s − W_s‖ per structure, in spectral, Frobenius and 2→∞ norms.
 */
inline RecoveryReport aligned_errors(const Matrix& V, const Matrix& W, const Hierarchy& h)
{
	RecoveryReport out = projection_errors(V, W, h);
	const Matrix H = procrustes_align(V, W);
	out.aligned_global = norms_of(V * H - W);
	out.aligned_block.resize(static_cast<std::size_t>(h.num_structures()));
	for (int s = 0; s < h.num_structures(); ++s) {
		if (h.structure(s).dim == 0)
			continue;
		const Matrix Vs = stacked_block(h, V, s);
		const Matrix Ws = stacked_block(h, W, s);
		out.aligned_block[static_cast<std::size_t>(s)] = norms_of(Vs * procrustes_align(Vs, Ws) - Ws);
	}
	return out;
}

/// Rotate an unstructured estimate onto W's columns (global Procrustes) and mask it.
inline Matrix align_and_mask(const Matrix& V, const Matrix& W, const Hierarchy& h)
{
	return apply_mask(h.layout, V * procrustes_align(V, W));
}

struct RegressionMetrics {
	double rmse = 0.0;
	double smape = 0.0;
	std::optional<double> r2; ///< empty when y has zero variance
};

/**
 * RMSE, SMAPE (percent, denominator (|y|+|ŷ|)/2, 0/0 terms count as 0) and R².
 */
inline RegressionMetrics regression_metrics(const Vector& y, const Vector& yhat)
{
	if (y.size() != yhat.size())
		throw ShapeError("regression_metrics: length mismatch");
	const Index m = y.size();
	if (m < 2)
		throw PreconditionError("regression_metrics: need at least two observations");
	RegressionMetrics out;
	const double sse = (y - yhat).squaredNorm();
	out.rmse = std::sqrt(sse / static_cast<double>(m));
	double sm = 0.0;
	for (Index i = 0; i < m; ++i) {
		const double den = 0.5 * (std::abs(y(i)) + std::abs(yhat(i)));
		if (den > 0.0)
			sm += std::abs(yhat(i) - y(i)) / den;
	}
	out.smape = 100.0 * sm / static_cast<double>(m);
	const double sst = (y.array() - y.mean()).square().sum();
	if (sst > 0.0)
		out.r2 = 1.0 - sse / sst;
	return out;
}

} // namespace hcl
