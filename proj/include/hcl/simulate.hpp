#pragma once

#include "hcl/core.hpp"
#include "hcl/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace hcl {

/// Coordinate distribution of the latent variables (unit variance in every case).
enum class LatentDistribution { gaussian, rademacher, uniform };

struct GroundTruth {
	Hierarchy hierarchy;
	Matrix W;
	double sigma_eps = 0.0;

	double noise_variance() const { return sigma_eps * sigma_eps; }
};

struct MultimodalDataset {
	Matrix X;
	std::optional<Matrix> Z;
	std::uint64_t seed = 0;
	std::shared_ptr<const GroundTruth> truth;

	Index n() const { return X.rows(); }
};

struct DownstreamDataset {
	Matrix Xtilde;
	Matrix Ztilde;
	Vector y;
	Vector beta_star;
	double sigma_xi = 0.0;

	Index m() const { return Xtilde.rows(); }
};

/**
 * Haar-distributed d×k matrix with orthonormal columns.
 *
 * QR of a standard Gaussian matrix with the signs of diag(R) forced positive.
 */
inline Matrix sample_haar_orthonormal(Index d, Index k, Rng& rng)
{
	if (k < 1 || d < k)
		throw PreconditionError("sample_haar_orthonormal: need d >= k >= 1");
	std::normal_distribution<double> normal;
	Matrix G(d, k);
	for (Index i = 0; i < d; ++i)
		for (Index j = 0; j < k; ++j)
			G(i, j) = normal(rng);
	Eigen::HouseholderQR<Matrix> qr(G);
	Matrix Q = qr.householderQ() * Matrix::Identity(d, k);
	const Matrix& R = qr.matrixQR();
	for (Index j = 0; j < k; ++j)
		if (R(j, j) < 0)
			Q.col(j) *= -1.0;
	return Q;
}

/**
 * Draw block loadings W_s^(m) = U Σ Vᵀ for every active (m, s).
 *
 * U is d_m×r_s and V is r_s×r_s Haar; Σ has i.i.d. Uniform(lo, hi) entries
 * sorted descending. Blocks are drawn in structure order, then member order.
 */
inline GroundTruth generate_ground_truth(const Hierarchy& h, std::pair<double, double> sv_range, double sigma_eps,
					 Rng& rng)
{
	const auto [lo, hi] = sv_range;
	if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi))
		throw PreconditionError("generate_ground_truth: singular value range must satisfy 0 < lo <= hi");
	if (!(sigma_eps >= 0.0) || !std::isfinite(sigma_eps))
		throw PreconditionError("generate_ground_truth: sigma_eps must be finite and nonnegative");
	// re-validate in case the caller assembled the hierarchy by hand
	build_hierarchy(h.spec.ambient_dims, h.spec.structures);

	std::uniform_real_distribution<double> unif(lo, hi);
	Matrix W = Matrix::Zero(h.d(), h.r());
	for (int s = 0; s < h.num_structures(); ++s) {
		const Index rs = h.structure(s).dim;
		if (rs == 0)
			continue;
		for (int m : h.structure(s).members) {
			const Index dm = h.layout.rows(m).size;
			Matrix U = sample_haar_orthonormal(dm, rs, rng);
			Vector sig(rs);
			for (Index k = 0; k < rs; ++k)
				sig(k) = lo == hi ? lo : unif(rng);
			std::sort(sig.data(), sig.data() + rs, std::greater<>());
			Matrix Vr = sample_haar_orthonormal(rs, rs, rng);
			block(h.layout, W, m, s) = U * sig.asDiagonal() * Vr.transpose();
		}
	}
	return GroundTruth{h, std::move(W), sigma_eps};
}

/// Noise parameterized by variance c, σ_ε = √c.
inline GroundTruth generate_ground_truth_c(const Hierarchy& h, std::pair<double, double> sv_range, double noise_c,
					   Rng& rng)
{
	if (!(noise_c >= 0.0))
		throw PreconditionError("generate_ground_truth: noise variance must be nonnegative");
	return generate_ground_truth(h, sv_range, std::sqrt(noise_c), rng);
}

namespace detail {

inline double draw_latent(LatentDistribution dist, Rng& rng)
{
	switch (dist) {
	case LatentDistribution::gaussian:
		return std::normal_distribution<double>{}(rng);
	case LatentDistribution::rademacher:
		return std::bernoulli_distribution{0.5}(rng) ? 1.0 : -1.0;
	case LatentDistribution::uniform: {
		const double a = std::sqrt(3.0);
		return std::uniform_real_distribution<double>{-a, a}(rng);
	}
	}
	return 0.0;
}

// Row-wise draw: z_i then ε_i for i = 0..n-1, so a shorter sample is a prefix of a longer one.
inline void draw_rows(const Matrix& W, double sigma_eps, Index n, LatentDistribution dist, Rng& rng, Matrix& Z,
		      Matrix& X)
{
	const Index d = W.rows();
	const Index r = W.cols();
	Z.resize(n, r);
	X.resize(n, d);
	std::normal_distribution<double> normal;
	Vector eps(d);
	for (Index i = 0; i < n; ++i) {
		for (Index k = 0; k < r; ++k)
			Z(i, k) = draw_latent(dist, rng);
		for (Index j = 0; j < d; ++j)
			eps(j) = normal(rng);
		X.row(i).noalias() = Z.row(i) * W.transpose();
		if (sigma_eps != 0.0)
			X.row(i) += sigma_eps * eps.transpose();
	}
}

} // namespace detail

/// n samples x_i = W z_i + ε_i stored row-major in X (n×d); latents kept in Z.
inline MultimodalDataset simulate_dataset(std::shared_ptr<const GroundTruth> truth, Index n, Rng& rng,
					  LatentDistribution dist = LatentDistribution::gaussian)
{
	if (!truth)
		throw PreconditionError("simulate_dataset: null ground truth");
	if (n < 2)
		throw PreconditionError("simulate_dataset: need n >= 2");
	MultimodalDataset out;
	Matrix Z;
	detail::draw_rows(truth->W, truth->sigma_eps, n, dist, rng, Z, out.X);
	out.Z = std::move(Z);
	out.truth = std::move(truth);
	return out;
}

inline MultimodalDataset simulate_dataset(const GroundTruth& truth, Index n, Rng& rng,
					  LatentDistribution dist = LatentDistribution::gaussian)
{
	return simulate_dataset(std::make_shared<const GroundTruth>(truth), n, rng, dist);
}

/// Uniform draw from the unit sphere in R^k.
inline Vector draw_unit_sphere(Index k, Rng& rng)
{
	if (k < 1)
		throw PreconditionError("draw_unit_sphere: dimension must be positive");
	std::normal_distribution<double> normal;
	Vector v(k);
	double nrm = 0.0;
	do {
		for (Index i = 0; i < k; ++i)
			v(i) = normal(rng);
		nrm = v.norm();
	} while (nrm == 0.0);
	return v / nrm;
}

/// Unit-norm β* whose nonzero blocks are exactly the listed structures (uniform on that sphere).
inline Vector draw_beta_on_support(const Hierarchy& h, const std::vector<int>& support, Rng& rng)
{
	Index k = 0;
	for (int s : support) {
		if (s < 0 || s >= h.num_structures())
			throw PreconditionError("draw_beta_on_support: structure index out of range");
		k += h.structure(s).dim;
	}
	if (k == 0)
		throw PreconditionError("draw_beta_on_support: support has no latent columns");
	const Vector v = draw_unit_sphere(k, rng);
	Vector beta = Vector::Zero(h.r());
	Index off = 0;
	std::vector<int> sorted = support;
	std::sort(sorted.begin(), sorted.end());
	for (int s : sorted) {
		const auto& cc = h.layout.cols(s);
		beta.segment(cc.offset, cc.size) = v.segment(off, cc.size);
		off += cc.size;
	}
	return beta;
}

/// Fresh (x̃, z̃) pairs from the same model plus y = β*ᵀz̃ + ξ, ξ ~ N(0, σ_ξ²).
inline DownstreamDataset simulate_downstream(const GroundTruth& truth, const Vector& beta_star, double sigma_xi,
					     Index m, Rng& rng,
					     LatentDistribution dist = LatentDistribution::gaussian)
{
	if (m < 2)
		throw PreconditionError("simulate_downstream: need m >= 2");
	if (beta_star.size() != truth.W.cols())
		throw ShapeError("simulate_downstream: beta_star has length " + std::to_string(beta_star.size()) +
				 ", expected " + std::to_string(truth.W.cols()));
	if (!(sigma_xi >= 0.0))
		throw PreconditionError("simulate_downstream: sigma_xi must be nonnegative");
	DownstreamDataset out;
	detail::draw_rows(truth.W, truth.sigma_eps, m, dist, rng, out.Ztilde, out.Xtilde);
	out.y = out.Ztilde * beta_star;
	if (sigma_xi != 0.0) {
		std::normal_distribution<double> normal;
		for (Index i = 0; i < m; ++i)
			out.y(i) += sigma_xi * normal(rng);
	}
	out.beta_star = beta_star;
	out.sigma_xi = sigma_xi;
	return out;
}

/// Overload drawing β* uniformly from the unit sphere in R^r.
inline DownstreamDataset simulate_downstream(const GroundTruth& truth, double sigma_xi, Index m, Rng& rng)
{
	Vector beta = draw_unit_sphere(truth.W.cols(), rng);
	return simulate_downstream(truth, beta, sigma_xi, m, rng);
}

} // namespace hcl
