#pragma once

#include "hcl/core.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/metrics.hpp"
#include "hcl/simulate.hpp"
#include "hcl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace hcl {

/// Ĉ = (VᵀV)⁻¹Vᵀ, the left inverse of V.
struct RecoveryOperator {
	Matrix C;

	Index r() const { return C.rows(); }
	Index d() const { return C.cols(); }

	/// Embeddings Ĉx_i as rows (m×r).
	Matrix embed(const Matrix& X) const
	{
		if (X.cols() != C.cols())
			throw ShapeError("RecoveryOperator::embed: data dimension mismatch");
		return X * C.transpose();
	}
};

inline RecoveryOperator recovery_operator(const Matrix& V)
{
	if (V.cols() < 1 || V.rows() < V.cols())
		throw PreconditionError("recovery_operator: V must be tall with at least one column");
	Eigen::JacobiSVD<Matrix> svd(V);
	const Vector& s = svd.singularValues();
	if (!(s(s.size() - 1) > 1e-8 * s(0)))
		throw NumericalError("recovery_operator: V is rank deficient (smallest singular value " +
				     std::to_string(s(s.size() - 1)) + ")");
	const Matrix G = V.transpose() * V;
	return RecoveryOperator{G.ldlt().solve(V.transpose())};
}

struct RegressionFit {
	Vector beta;
	double lambda_m = 0.0;
	double sigma_eps_hat_sq = 0.0;
	int iterations = 0;
	double objective = 0.0;
	bool converged = true;
	std::vector<int> active; ///< structure positions with β_s ≠ 0
	std::vector<double> objective_trace;
	double kkt_residual = 0.0;
	double min_gram_eigenvalue = 0.0;
};

namespace detail {

struct DebiasedProblem {
	Matrix Z;     // m×r embeddings
	Matrix A;     // ZᵀZ/m − σ̂² ĈĈᵀ
	Vector b;     // Zᵀy/m
	Matrix ZtZ_m; // ZᵀZ/m
	double yy_m = 0.0;
};

inline DebiasedProblem debiased_problem(const DownstreamDataset& data, const RecoveryOperator& C, double s2)
{
	if (data.y.size() != data.m())
		throw ShapeError("downstream: response length does not match sample count");
	DebiasedProblem p;
	p.Z = C.embed(data.Xtilde);
	const double m = static_cast<double>(data.m());
	p.ZtZ_m = (p.Z.transpose() * p.Z) / m;
	p.A = p.ZtZ_m - s2 * (C.C * C.C.transpose());
	p.A = 0.5 * (p.A + p.A.transpose());
	p.b = p.Z.transpose() * data.y / m;
	p.yy_m = data.y.squaredNorm() / m;
	return p;
}

// (1/2m)‖y − Zβ‖² − (σ̂²/2) βᵀĈĈᵀβ = ½ βᵀAβ − bᵀβ + ½‖y‖²/m
inline double smooth_objective(const DebiasedProblem& p, const Vector& beta)
{
	return 0.5 * beta.dot(p.A * beta) - p.b.dot(beta) + 0.5 * p.yy_m;
}

inline double group_penalty(const Hierarchy& h, const Vector& beta)
{
	double acc = 0.0;
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		acc += beta.segment(cc.offset, cc.size).norm();
	}
	return acc;
}

inline std::vector<int> active_set(const Hierarchy& h, const Vector& beta)
{
	std::vector<int> out;
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		if (cc.size > 0 && (beta.segment(cc.offset, cc.size).array() != 0.0).any())
			out.push_back(s);
	}
	return out;
}

} // namespace detail

/**
 * Debiased OLS: solves (ZᵀZ/m − σ̂²ĈĈᵀ)β = Zᵀy/m with Z = X̃Ĉᵀ.
 *
 * Throws NumericalError when the debiased Gram matrix is singular or indefinite.
 */
inline RegressionFit fit_debiased_ols(const DownstreamDataset& data, const RecoveryOperator& C, double s2,
				      const Hierarchy* h = nullptr)
{
	if (data.m() <= C.r())
		throw PreconditionError("fit_debiased_ols: need m > r");
	if (!(s2 >= 0.0))
		throw PreconditionError("fit_debiased_ols: noise variance must be nonnegative");
	const detail::DebiasedProblem p = detail::debiased_problem(data, C, s2);
	const SymEig e = sym_eig(p.A);
	const double top = std::max(std::abs(e.values(0)), std::abs(e.values(e.values.size() - 1)));
	const double low = e.values(e.values.size() - 1);
	if (!(low > 1e-12 * std::max(top, 1e-300)))
		throw NumericalError("fit_debiased_ols: debiased Gram matrix is not positive definite (smallest "
				     "eigenvalue " +
				     std::to_string(low) +
				     "); the noise variance estimate is too large for this sample size, increase m");
	RegressionFit out;
	out.beta = e.vectors * (e.vectors.transpose() * p.b).cwiseQuotient(e.values);
	out.sigma_eps_hat_sq = s2;
	out.objective = detail::smooth_objective(p, out.beta);
	out.min_gram_eigenvalue = low;
	if (h) {
		out.active.clear();
		for (int s = 0; s < h->num_structures(); ++s)
			out.active.push_back(s);
	}
	return out;
}

struct GroupLassoParams {
	int max_iters = 20000;
	double tol = 1e-8;	     ///< stop when ‖β_{k+1} − β_k‖ < tol
	double safeguard = 1e-10;    ///< added to L, relative to max(1, σ₁)
	double kkt_tol = 1e-6;
};

/**
 * Proximal gradient for
 *   (1/2m)‖y − Zβ‖² − (σ̂²/2)βᵀĈĈᵀβ + λ_m Σ_s ‖β_s‖
 * with step 1/L, L = σ₁(ZᵀZ/m) + safeguard.
 */
inline RegressionFit fit_group_lasso(const DownstreamDataset& data, const RecoveryOperator& C, double s2,
				     double lambda_m, const Hierarchy& h, const GroupLassoParams& params = {},
				     const Vector* warm_start = nullptr)
{
	if (!(lambda_m >= 0.0))
		throw PreconditionError("fit_group_lasso: lambda_m must be nonnegative");
	if (data.m() < 2)
		throw PreconditionError("fit_group_lasso: need m > 1");
	if (C.r() != h.r())
		throw ShapeError("fit_group_lasso: recovery operator does not match hierarchy");
	const detail::DebiasedProblem p = detail::debiased_problem(data, C, s2);
	const double sigma1 = sym_eig(p.ZtZ_m).values(0);
	const double L = sigma1 + params.safeguard * std::max(1.0, sigma1);
	const double eta = 1.0 / L;

	RegressionFit out;
	out.lambda_m = lambda_m;
	out.sigma_eps_hat_sq = s2;
	out.min_gram_eigenvalue = sym_eig(p.A).values(h.r() - 1);
	Vector beta = warm_start && warm_start->size() == h.r() ? *warm_start : Vector::Zero(h.r());
	auto objective = [&](const Vector& b) {
		return detail::smooth_objective(p, b) + lambda_m * detail::group_penalty(h, b);
	};
	double obj = objective(beta);
	out.objective_trace.push_back(obj);
	Vector best = beta;
	double best_obj = obj;
	out.converged = false;
	for (int k = 1; k <= params.max_iters; ++k) {
		const Vector grad = p.A * beta - p.b;
		Vector next = beta - eta * grad;
		for (int s = 0; s < h.num_structures(); ++s) {
			const auto& cc = h.layout.cols(s);
			if (cc.size == 0)
				continue;
			auto seg = next.segment(cc.offset, cc.size);
			const double nrm = seg.norm();
			const double shrink = nrm > 0.0 ? std::max(0.0, 1.0 - eta * lambda_m / nrm) : 0.0;
			if (shrink == 0.0)
				seg.setZero();
			else
				seg *= shrink;
		}
		const double change = (next - beta).norm();
		beta = std::move(next);
		obj = objective(beta);
		out.objective_trace.push_back(obj);
		out.iterations = k;
		if (obj < best_obj) {
			best_obj = obj;
			best = beta;
		}
		if (change < params.tol) {
			out.converged = true;
			break;
		}
	}
	out.beta = out.converged ? beta : best;
	out.objective = objective(out.beta);
	out.active = detail::active_set(h, out.beta);

	// KKT: active blocks g_s + λ β_s/‖β_s‖ = 0, inactive blocks ‖g_s‖ ≤ λ
	const Vector g = p.A * out.beta - p.b;
	double kkt = 0.0;
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		if (cc.size == 0)
			continue;
		const Vector bs = out.beta.segment(cc.offset, cc.size);
		const Vector gs = g.segment(cc.offset, cc.size);
		const double nb = bs.norm();
		if (nb > 0.0)
			kkt = std::max(kkt, (gs + lambda_m * bs / nb).norm());
		else
			kkt = std::max(kkt, std::max(0.0, gs.norm() - lambda_m));
	}
	out.kkt_residual = kkt;
	return out;
}

/// Smallest λ_m at which β = 0 is optimal: max_s ‖(Zᵀy/m)_s‖.
inline double group_lasso_lambda_max(const DownstreamDataset& data, const RecoveryOperator& C, const Hierarchy& h)
{
	const Matrix Z = C.embed(data.Xtilde);
	const Vector b = Z.transpose() * data.y / static_cast<double>(data.m());
	double mx = 0.0;
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		mx = std::max(mx, b.segment(cc.offset, cc.size).norm());
	}
	return mx;
}

/// `count` log-spaced values from hi·ratio up to hi, ascending.
inline std::vector<double> log_grid(double hi, double ratio, int count)
{
	if (count < 1 || !(hi > 0.0) || !(ratio > 0.0) || ratio > 1.0)
		throw PreconditionError("log_grid: invalid arguments");
	std::vector<double> out(static_cast<std::size_t>(count));
	if (count == 1) {
		out[0] = hi;
		return out;
	}
	const double lo = std::log(hi * ratio);
	const double step = (std::log(hi) - lo) / (count - 1);
	for (int i = 0; i < count; ++i)
		out[static_cast<std::size_t>(i)] = std::exp(lo + step * i);
	out.back() = hi;
	return out;
}

/// Held-out debiased squared-error loss: mean (y − βᵀĈx̃)² − σ̂²‖Ĉᵀβ‖².
inline double debiased_validation_loss(const DownstreamDataset& val, const RecoveryOperator& C, double s2,
				       const Vector& beta)
{
	const Vector resid = val.y - C.embed(val.Xtilde) * beta;
	return resid.squaredNorm() / static_cast<double>(val.m()) - s2 * (C.C.transpose() * beta).squaredNorm();
}

/// Debiased validation loss together with the standard error of its mean.
inline std::pair<double, double> debiased_validation_loss_se(const DownstreamDataset& val, const RecoveryOperator& C,
							      double s2, const Vector& beta)
{
	const Eigen::ArrayXd sq = (val.y - C.embed(val.Xtilde) * beta).array().square();
	const double m = static_cast<double>(sq.size());
	const double mean = sq.mean();
	const double var = m > 1 ? (sq - mean).square().sum() / (m - 1) : 0.0;
	return {mean - s2 * (C.C.transpose() * beta).squaredNorm(), std::sqrt(var / m)};
}

/// Debiased OLS restricted to the blocks in `active`; other coordinates are zero.
inline Vector refit_on_blocks(const DownstreamDataset& train, const RecoveryOperator& C, double s2,
			      const Hierarchy& h, const std::vector<int>& active)
{
	Vector beta = Vector::Zero(h.r());
	std::vector<Index> idx;
	for (int s : active) {
		const auto& cc = h.layout.cols(s);
		for (Index k = 0; k < cc.size; ++k)
			idx.push_back(cc.offset + k);
	}
	if (idx.empty())
		return beta;
	const detail::DebiasedProblem p = detail::debiased_problem(train, C, s2);
	const Index k = static_cast<Index>(idx.size());
	Matrix A(k, k);
	Vector b(k);
	for (Index i = 0; i < k; ++i) {
		b(i) = p.b(idx[static_cast<std::size_t>(i)]);
		for (Index j = 0; j < k; ++j)
			A(i, j) = p.A(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
	}
	const SymEig e = sym_eig(A);
	if (!(e.values(k - 1) > 0.0))
		throw NumericalError("refit_on_blocks: restricted debiased Gram matrix is not positive definite");
	const Vector x = e.vectors * (e.vectors.transpose() * b).cwiseQuotient(e.values);
	for (Index i = 0; i < k; ++i)
		beta(idx[static_cast<std::size_t>(i)]) = x(i);
	return beta;
}

/// Inputs to the λ_m rate; every quantity is a plug-in estimate.
struct LambdaRateInputs {
	Index n = 0;		///< representation sample size
	Index m = 0;		///< downstream sample size
	Index d = 0;
	Index r = 0;
	double s2 = 0.0;	///< σ̂_ε²
	double sigma_min = 0.0; ///< smallest nonzero eigenvalue of S̃
	double beta_norm = 0.0;
	double sigma_xi = 0.0;
};

/**
 * Rate for λ_m with unit constant and the optimization term dropped:
 *   √((r+log n)/n) + (σ̂/√σ_min + σ̂²/σ_min)√((d+log n)/n) + (‖β‖ + σ_ξ)√((r+log m)/m)
 */
inline double lambda_rate(const LambdaRateInputs& in)
{
	if (in.n < 2 || in.m < 2 || in.d < 1 || in.r < 1 || !(in.sigma_min > 0.0) || !(in.s2 >= 0.0))
		throw PreconditionError("lambda_rate: invalid inputs");
	const double n = static_cast<double>(in.n);
	const double m = static_cast<double>(in.m);
	const double d = static_cast<double>(in.d);
	const double r = static_cast<double>(in.r);
	const double se = std::sqrt(in.s2);
	return std::sqrt((r + std::log(n)) / n) +
	       (se / std::sqrt(in.sigma_min) + in.s2 / in.sigma_min) * std::sqrt((d + std::log(n)) / n) +
	       (in.beta_norm + in.sigma_xi) * std::sqrt((r + std::log(m)) / m);
}

/// Plug-in rate using the debiased OLS fit on `train` for ‖β‖ and σ_ξ.
inline double lambda_rate_plugin(const DownstreamDataset& train, const RecoveryOperator& C, double s2, Index n,
				 double sigma_min)
{
	const RegressionFit ols = fit_debiased_ols(train, C, s2);
	const double xi2 = debiased_validation_loss(train, C, s2, ols.beta);
	return lambda_rate({n, train.m(), C.d(), C.r(), s2, sigma_min, ols.beta.norm(), std::sqrt(std::max(xi2, 0.0))});
}

/// `count` log-spaced values spanning `decades` on each side of `center`.
inline std::vector<double> centered_log_grid(double center, double decades, int count)
{
	if (!(center > 0.0) || !(decades > 0.0))
		throw PreconditionError("centered_log_grid: invalid arguments");
	return log_grid(center * std::pow(10.0, decades), std::pow(10.0, -2.0 * decades), count);
}

struct LassoSelection {
	bool refit = true;    ///< score each λ by the debiased refit on its active blocks
	double se_rule = 1.0; ///< pick the largest λ within se_rule standard errors of the minimum
};

struct LassoPath {
	std::vector<double> grid;
	std::vector<double> validation_loss;
	std::vector<double> validation_se;
	std::vector<RegressionFit> fits;
	std::size_t selected = 0;
	std::size_t minimizer = 0;

	const RegressionFit& best() const { return fits.at(selected); }
};

/**
 * Fit the group lasso along a λ grid (largest first, warm started) and score
 * each λ on held-out data with the debiased loss. With `refit` the score uses
 * the debiased OLS refit on the active blocks. The selected λ is the largest
 * one whose score is within se_rule standard errors of the minimum. An empty
 * grid means 10 points from 1e-3·λ_max to λ_max.
 */
inline LassoPath tune_group_lasso(const DownstreamDataset& train, const DownstreamDataset& val,
				  const RecoveryOperator& C, double s2, const Hierarchy& h,
				  std::vector<double> grid = {}, const GroupLassoParams& params = {},
				  const LassoSelection& sel = {})
{
	if (!(sel.se_rule >= 0.0))
		throw PreconditionError("tune_group_lasso: se_rule must be nonnegative");
	if (grid.empty())
		grid = log_grid(group_lasso_lambda_max(train, C, h), 1e-3, 10);
	std::sort(grid.begin(), grid.end());
	LassoPath path;
	path.grid = grid;
	path.fits.resize(grid.size());
	path.validation_loss.resize(grid.size());
	path.validation_se.resize(grid.size());
	Vector warm = Vector::Zero(h.r());
	for (std::size_t i = grid.size(); i-- > 0;) {
		path.fits[i] = fit_group_lasso(train, C, s2, grid[i], h, params, &warm);
		warm = path.fits[i].beta;
		const Vector scored = sel.refit ? refit_on_blocks(train, C, s2, h, path.fits[i].active) : path.fits[i].beta;
		std::tie(path.validation_loss[i], path.validation_se[i]) = debiased_validation_loss_se(val, C, s2, scored);
	}
	// ties resolve toward the larger λ
	double best = std::numeric_limits<double>::infinity();
	for (std::size_t i = grid.size(); i-- > 0;)
		if (path.validation_loss[i] < best) {
			best = path.validation_loss[i];
			path.minimizer = i;
		}
	const double cut = best + sel.se_rule * path.validation_se[path.minimizer];
	path.selected = path.minimizer;
	for (std::size_t i = grid.size(); i-- > path.minimizer;)
		if (path.validation_loss[i] <= cut) {
			path.selected = i;
			break;
		}
	return path;
}

/**
 * E(y − βᵀĈx)² − E(y − β*ᵀC_*x)² under the linear-Gaussian model, where
 * E(y − βᵀĈx)² = ‖β* − WᵀĈᵀβ‖² + σ_ε²‖Ĉᵀβ‖² + σ_ξ² and C_* = recovery_operator(W).
 */
inline double excess_risk(const Vector& beta, const GroundTruth& truth, const Vector& beta_star,
			  const RecoveryOperator& C)
{
	const Matrix& W = truth.W;
	if (beta.size() != C.r() || beta_star.size() != W.cols() || C.d() != W.rows() || C.r() != W.cols())
		throw ShapeError("excess_risk: dimension mismatch");
	const double s2 = truth.noise_variance();
	const Vector u = C.C.transpose() * beta;
	const double risk = (beta_star - W.transpose() * u).squaredNorm() + s2 * u.squaredNorm();
	const RecoveryOperator Cs = recovery_operator(W);
	const Vector us = Cs.C.transpose() * beta_star;
	const double oracle = (beta_star - W.transpose() * us).squaredNorm() + s2 * us.squaredNorm();
	return risk - oracle;
}

/// ‖H̃ᵀβ̂ − β*‖ with H̃ the block-diagonal per-structure Procrustes alignment of V to W.
inline double aligned_beta_error(const Vector& beta_hat, const Vector& beta_star, const Matrix& V, const Matrix& W,
				 const Hierarchy& h)
{
	const Matrix H = structure_alignment(V, W, h);
	return (H.transpose() * beta_hat - beta_star).norm();
}

/// Support-recovery check: active set equals the true support exactly.
inline bool exact_support(const std::vector<int>& active, std::vector<int> support)
{
	std::sort(support.begin(), support.end());
	return active == support;
}

} // namespace hcl
