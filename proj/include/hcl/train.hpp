#pragma once

#include "hcl/core.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/simulate.hpp"
#include "hcl/spectral.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hcl {

/**
 * Literal double-sum loss over n samples (rows of X):
 *
 *   1/(2n(n−1)) Σ_{i≠j} φ_ij − 1/(2n) Σ_i φ_ii + (λ/4)‖VᵀV‖_F²,
 *   φ_ij = Σ_s Σ_{m,m'} ⟨(V_s^(m))ᵀ x_i^(m), (V_s^(m'))ᵀ x_j^(m')⟩.
 *
 * O(n²); meant as a reference only.
 */
inline double loss_pairwise(const Matrix& V, const Matrix& X, const Hierarchy& h, double lambda)
{
	check_shape(h.layout, V, "loss_pairwise");
	if (X.cols() != h.d())
		throw ShapeError("loss_pairwise: data has " + std::to_string(X.cols()) + " columns, expected " +
				 std::to_string(h.d()));
	if (!is_mask_compliant(h.layout, V))
		throw PreconditionError("loss_pairwise: V violates the structural mask");
	const Index n = X.rows();
	if (n < 2)
		throw PreconditionError("loss_pairwise: need n >= 2");

	// emb[s][m-1] is n×r_s: row i holds h_s^(m)(x_i^(m))
	const int S = h.num_structures();
	const int M = h.modalities();
	std::vector<std::vector<Matrix>> emb(static_cast<std::size_t>(S));
	for (int s = 0; s < S; ++s) {
		emb[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(M));
		for (int m : h.structure(s).members) {
			const auto& rr = h.layout.rows(m);
			emb[static_cast<std::size_t>(s)][static_cast<std::size_t>(m) - 1] =
				X.middleCols(rr.offset, rr.size) * block(h.layout, V, m, s);
		}
	}
	auto phi = [&](Index i, Index j) {
		double acc = 0.0;
		for (int s = 0; s < S; ++s)
			for (int m : h.structure(s).members)
				for (int mp : h.structure(s).members) {
					const auto& a = emb[static_cast<std::size_t>(s)][static_cast<std::size_t>(m) - 1];
					const auto& b = emb[static_cast<std::size_t>(s)][static_cast<std::size_t>(mp) - 1];
					for (Index k = 0; k < a.cols(); ++k)
						acc += a(i, k) * b(j, k);
				}
		return acc;
	};
	double off = 0.0;
	double diag = 0.0;
	for (Index i = 0; i < n; ++i)
		for (Index j = 0; j < n; ++j) {
			if (i == j)
				diag += phi(i, i);
			else
				off += phi(i, j);
		}
	const double nn = static_cast<double>(n);
	const double reg = (V.transpose() * V).squaredNorm();
	return off / (2.0 * nn * (nn - 1.0)) - diag / (2.0 * nn) + 0.25 * lambda * reg;
}

/**
 * (λ/4)‖VVᵀ − S/λ‖_F² − ‖S‖_F²/(4λ), evaluated as (λ/4)‖VᵀV‖_F² − ½ tr(VᵀSV).
 */
inline double loss_covariance(const Matrix& V, const Matrix& S, double lambda)
{
	if (!(lambda > 0.0))
		throw PreconditionError("loss_covariance: lambda must be positive");
	if (S.rows() != V.rows())
		throw ShapeError("loss_covariance: covariance and V have different row counts");
	check_symmetric(S, "loss_covariance", 1e-9);
	const Matrix G = V.transpose() * V;
	const double quad = (V.transpose() * S * V).trace();
	return 0.25 * lambda * G.squaredNorm() - 0.5 * quad;
}

/// mask((λVVᵀ − S̃)V); λ = 1 gives the gradient of ¼‖VVᵀ − S̃‖_F² on the active blocks.
inline Matrix loss_gradient(const Matrix& V, const Matrix& S_tilde, const BlockLayout& layout, double lambda = 1.0)
{
	check_shape(layout, V, "loss_gradient");
	if (S_tilde.rows() != layout.d() || S_tilde.cols() != layout.d())
		throw ShapeError("loss_gradient: covariance shape does not match layout");
	if (!is_mask_compliant(layout, V))
		throw PreconditionError("loss_gradient: V violates the structural mask");
	const Matrix G = V.transpose() * V;
	Matrix grad = lambda * (V * G) - S_tilde * V;
	return apply_mask(layout, std::move(grad));
}

/// V₀ = U_r Λ_r^{1/2} from the top-r eigenpairs of S̃. Not mask-compliant.
inline Matrix init_global(const SymEig& eig_tilde, Index r)
{
	if (r < 1 || r > eig_tilde.values.size())
		throw PreconditionError("init_global: invalid rank");
	// eigenvalues at roundoff level relative to the top one count as zero
	const double floor = 1e-12 * std::max(eig_tilde.values(0), 0.0);
	for (Index k = 0; k < r; ++k)
		if (!(eig_tilde.values(k) > floor))
			throw NumericalError("init_global: eigenvalue " + std::to_string(k + 1) +
					     " of the denoised covariance is not positive (SNR too low or r too large)");
	return eig_tilde.vectors.leftCols(r) * eig_tilde.values.head(r).cwiseSqrt().asDiagonal();
}

inline Matrix init_global(const Matrix& S_tilde, Index r)
{
	return init_global(sym_eig(S_tilde), r);
}

struct StructuredInit {
	Matrix V;
	std::string chosen; ///< "projected" or "oblique"
	double loss_projected = std::numeric_limits<double>::quiet_NaN();
	double loss_oblique = std::numeric_limits<double>::quiet_NaN();
	std::vector<std::string> warnings;
};

namespace detail {

inline Matrix orthonormalize(const Matrix& B)
{
	if (B.cols() == 0)
		return B;
	return truncated_svd(B, std::min(B.rows(), B.cols())).U;
}

// Orthonormal basis of range(Q) ⊖ span(B); Q has orthonormal columns.
inline Matrix complement_within(const Matrix& Q, const Matrix& B)
{
	if (B.cols() == 0)
		return Q;
	const Index kb = std::min(B.cols(), Q.cols());
	Eigen::JacobiSVD<Matrix> svd(Q.transpose() * B, Eigen::ComputeFullU);
	return Q * svd.matrixU().rightCols(Q.cols() - kb);
}

struct PeelState {
	const Hierarchy* h = nullptr;
	const Matrix* St = nullptr;
	int full = -1;				      // index of the all-modality structure
	Index r_full = 0;
	std::map<std::pair<int, int>, Matrix> cross; // step-1 bases, key (m, other)
	std::vector<Matrix> global;		      // per modality, d_m × r_full
	std::map<std::pair<int, int>, Matrix> basis;  // key (m, s)
};

inline Matrix S_block(const PeelState& st, int a, int b)
{
	return modality_block(st.h->layout, *st.St, a, b);
}

inline Index pair_dim(const Hierarchy& h, int a, int b)
{
	if (h.modalities() != 3)
		return 0;
	const int s = h.find({std::min(a, b), std::max(a, b)});
	return s < 0 ? 0 : h.structure(s).dim;
}

// Steps 1-2: cross-block bases and the globally shared subspace.
inline void peel_shared(PeelState& st, std::vector<std::string>& warnings)
{
	const Hierarchy& h = *st.h;
	const int M = h.modalities();
	std::vector<int> all(static_cast<std::size_t>(M));
	for (int m = 1; m <= M; ++m)
		all[static_cast<std::size_t>(m) - 1] = m;
	st.full = h.find(std::span<const int>(all));
	st.r_full = st.full < 0 ? 0 : h.structure(st.full).dim;

	for (int a = 1; a <= M; ++a)
		for (int b = a + 1; b <= M; ++b) {
			const Index k = st.r_full + pair_dim(h, a, b);
			if (k == 0)
				continue;
			auto t = truncated_svd(S_block(st, a, b), k);
			st.cross[{a, b}] = std::move(t.U);
			st.cross[{b, a}] = std::move(t.V);
		}

	st.global.assign(static_cast<std::size_t>(M), Matrix());
	for (int m = 1; m <= M; ++m) {
		const Index dm = h.layout.rows(m).size;
		if (st.r_full == 0) {
			st.global[static_cast<std::size_t>(m) - 1] = Matrix(dm, 0);
			continue;
		}
		Matrix P = Matrix::Zero(dm, dm);
		for (int b = 1; b <= M; ++b)
			if (b != m) {
				const Matrix& U = st.cross.at({m, b});
				P.noalias() += U * U.transpose();
			}
		const SymEig e = sym_eig(P);
		const double floor = static_cast<double>(M - 2) + 1e-3;
		if (e.values(st.r_full - 1) < floor)
			warnings.push_back("init_structured: weak global structure at modality " + std::to_string(m) +
					   " (intersection eigenvalue " + std::to_string(e.values(st.r_full - 1)) + ")");
		st.global[static_cast<std::size_t>(m) - 1] = e.vectors.leftCols(st.r_full);
		st.basis[{m, st.full}] = st.global[static_cast<std::size_t>(m) - 1];
	}
}

inline Matrix complement_projector(const Matrix& G, Index dm)
{
	Matrix P = Matrix::Identity(dm, dm);
	if (G.cols())
		P.noalias() -= G * G.transpose();
	return P;
}

inline Matrix shared_basis(const PeelState& st, int m)
{
	const Hierarchy& h = *st.h;
	std::vector<const Matrix*> parts;
	Index cols = 0;
	for (int s = 0; s < h.num_structures(); ++s) {
		if (h.structure(s).members.size() < 2 || !h.structure(s).contains(m))
			continue;
		auto it = st.basis.find({m, s});
		if (it == st.basis.end())
			continue;
		parts.push_back(&it->second);
		cols += it->second.cols();
	}
	Matrix B(h.layout.rows(m).size, cols);
	Index off = 0;
	for (const Matrix* p : parts) {
		B.middleCols(off, p->cols()) = *p;
		off += p->cols();
	}
	return orthonormalize(B);
}

// Steps 1-4 of the projected variant: per-(m, s) orthonormal bases.
inline void bases_projected(PeelState& st)
{
	const Hierarchy& h = *st.h;
	const int M = h.modalities();
	for (int a = 1; a <= M; ++a)
		for (int b = a + 1; b <= M; ++b) {
			const Index k = pair_dim(h, a, b);
			if (k == 0)
				continue;
			const int s = h.find({a, b});
			for (auto [m, o] : {std::pair{a, b}, std::pair{b, a}}) {
				const Index dm = h.layout.rows(m).size;
				const Matrix P = complement_projector(st.global[static_cast<std::size_t>(m) - 1], dm);
				st.basis[{m, s}] = truncated_svd(P * st.cross.at({m, o}), k).U;
			}
		}
	for (int m = 1; m <= M; ++m) {
		const int s = h.find({m});
		if (s < 0 || h.structure(s).dim == 0)
			continue;
		const Index dm = h.layout.rows(m).size;
		const Matrix B = shared_basis(st, m);
		const Matrix P = complement_projector(B, dm);
		const Matrix R = P * S_block(st, m, m) * P;
		st.basis[{m, s}] = sym_eig(0.5 * (R + R.transpose())).vectors.leftCols(h.structure(s).dim);
	}
}

// Steps 3-4 of the oblique variant.
inline void bases_oblique(PeelState& st)
{
	const Hierarchy& h = *st.h;
	const int M = h.modalities();
	for (int a = 1; a <= M; ++a)
		for (int b = a + 1; b <= M; ++b) {
			const Index k = pair_dim(h, a, b);
			if (k == 0)
				continue;
			const int s = h.find({a, b});
			for (auto [m, o] : {std::pair{a, b}, std::pair{b, a}}) {
				const Index d_o = h.layout.rows(o).size;
				const Matrix P = complement_projector(st.global[static_cast<std::size_t>(o) - 1], d_o);
				st.basis[{m, s}] = truncated_svd(S_block(st, m, o) * P, k).U;
			}
		}
	for (int m = 1; m <= M; ++m) {
		const int s = h.find({m});
		if (s < 0 || h.structure(s).dim == 0)
			continue;
		Index load = 0;
		for (const auto& st_ : h.spec.structures)
			if (st_.contains(m))
				load += st_.dim;
		const Matrix Smm = S_block(st, m, m);
		const Matrix Q = sym_eig(Smm).vectors.leftCols(load);
		const Matrix N = complement_within(Q, shared_basis(st, m));
		st.basis[{m, s}] = truncated_svd(Smm * N, h.structure(s).dim).U;
	}
}

// Steps 5-6, projected: anchor rotation then diagonal scaling.
inline Matrix assemble_projected(PeelState& st, double delta)
{
	const Hierarchy& h = *st.h;
	Matrix V = Matrix::Zero(h.d(), h.r());
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& mem = h.structure(s).members;
		if (h.structure(s).dim == 0)
			continue;
		const int a = mem.front();
		const Matrix& Ua = st.basis.at({a, s});
		for (std::size_t i = 1; i < mem.size(); ++i) {
			const int b = mem[i];
			Matrix& Ub = st.basis.at({b, s});
			const Matrix C = Ua.transpose() * S_block(st, a, b) * Ub;
			Eigen::JacobiSVD<Matrix> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
			Ub = Ub * svd.matrixV() * svd.matrixU().transpose();
		}
		for (int m : mem) {
			const Matrix& U = st.basis.at({m, s});
			const Vector dg = (U.transpose() * S_block(st, m, m) * U).diagonal();
			block(h.layout, V, m, s) = U * dg.cwiseMax(delta).cwiseSqrt().asDiagonal();
		}
	}
	return V;
}

// Steps 5-6, oblique: coefficients through the left inverse of the stacked per-modality basis.
inline bool assemble_oblique(PeelState& st, double delta, Matrix& V, std::vector<std::string>& warnings)
{
	const Hierarchy& h = *st.h;
	const int M = h.modalities();
	std::vector<Matrix> L(static_cast<std::size_t>(M));
	std::map<std::pair<int, int>, Index> offs;
	for (int m = 1; m <= M; ++m) {
		std::vector<int> ts;
		Index cols = 0;
		for (int s = 0; s < h.num_structures(); ++s)
			if (h.structure(s).contains(m) && h.structure(s).dim > 0) {
				ts.push_back(s);
				cols += h.structure(s).dim;
			}
		Matrix U(h.layout.rows(m).size, cols);
		Index o = 0;
		for (int s : ts) {
			offs[{m, s}] = o;
			U.middleCols(o, h.structure(s).dim) = st.basis.at({m, s});
			o += h.structure(s).dim;
		}
		if (cols > 0) {
			Eigen::JacobiSVD<Matrix> svd(U);
			const Vector& sv = svd.singularValues();
			if (sv(sv.size() - 1) <= 1e-8 * sv(0)) {
				warnings.push_back("init_structured: oblique candidate skipped, basis of modality " +
						   std::to_string(m) + " is rank deficient");
				return false;
			}
			L[static_cast<std::size_t>(m) - 1] = pinv(U);
		}
	}
	auto comp = [&](int a, int b, int s) {
		const Index k = h.structure(s).dim;
		const Matrix& La = L[static_cast<std::size_t>(a) - 1];
		const Matrix& Lb = L[static_cast<std::size_t>(b) - 1];
		const Matrix C = La.middleRows(offs.at({a, s}), k) * S_block(st, a, b) *
				 Lb.middleRows(offs.at({b, s}), k).transpose();
		return C;
	};
	V = Matrix::Zero(h.d(), h.r());
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& mem = h.structure(s).members;
		const Index k = h.structure(s).dim;
		if (k == 0)
			continue;
		const int a = mem.front();
		const Matrix Daa = comp(a, a, s);
		const Matrix Aa = psd_sqrt(0.5 * (Daa + Daa.transpose()), delta);
		block(h.layout, V, a, s) = st.basis.at({a, s}) * Aa;
		const Matrix Aa_inv = Aa.inverse();
		for (std::size_t i = 1; i < mem.size(); ++i) {
			const int b = mem[i];
			const Matrix Dbb = comp(b, b, s);
			const Matrix Ab = psd_sqrt(0.5 * (Dbb + Dbb.transpose()), delta);
			const Matrix X = Aa_inv * comp(a, b, s) * Ab.inverse();
			block(h.layout, V, b, s) = st.basis.at({b, s}) * Ab * polar_orthogonal(X).transpose();
		}
	}
	if (!V.allFinite()) {
		warnings.push_back("init_structured: oblique candidate skipped, non-finite coefficients");
		return false;
	}
	return true;
}

} // namespace detail

/**
 * Mask-compliant initializer built by hierarchical peeling of S̃.
 *
 * Two candidates are assembled from the same cross-block bases: "projected"
 * (orthogonal complements, anchor rotation, diagonal scaling) and "oblique"
 * (complements taken against the partner modality, coefficients through the
 * left inverse of the stacked per-modality basis). The candidate with the
 * lower loss_covariance(·, S̃, 1) is returned. Supports M ∈ {2, 3}.
 */
inline StructuredInit init_structured(const Matrix& S_tilde, const Hierarchy& h, double delta = 1e-6)
{
	if (h.modalities() < 2 || h.modalities() > 3)
		throw PreconditionError("init_structured: only two or three modalities are supported");
	if (S_tilde.rows() != h.d() || S_tilde.cols() != h.d())
		throw ShapeError("init_structured: covariance shape does not match hierarchy");

	StructuredInit out;
	detail::PeelState base;
	base.h = &h;
	base.St = &S_tilde;
	detail::peel_shared(base, out.warnings);

	detail::PeelState proj = base;
	detail::bases_projected(proj);
	Matrix Vp = detail::assemble_projected(proj, delta);
	out.loss_projected = loss_covariance(Vp, S_tilde, 1.0);

	detail::PeelState obl = base;
	Matrix Vo;
	bool have_oblique = false;
	try {
		detail::bases_oblique(obl);
		have_oblique = detail::assemble_oblique(obl, delta, Vo, out.warnings);
	} catch (const PreconditionError& e) {
		out.warnings.push_back(std::string("init_structured: oblique candidate skipped, ") + e.what());
	}
	if (have_oblique)
		out.loss_oblique = loss_covariance(Vo, S_tilde, 1.0);

	if (have_oblique && out.loss_oblique < out.loss_projected) {
		out.V = std::move(Vo);
		out.chosen = "oblique";
	} else {
		out.V = std::move(Vp);
		out.chosen = "projected";
	}
	return out;
}

enum class StepRule { spectral, schedule };
enum class InitKind { global_svd, masked_global, structured };

inline std::string to_string(StepRule s)
{
	return s == StepRule::spectral ? "spectral" : "schedule";
}

inline std::string to_string(InitKind k)
{
	switch (k) {
	case InitKind::global_svd:
		return "global-svd";
	case InitKind::masked_global:
		return "masked-global";
	case InitKind::structured:
		return "structured";
	}
	return "?";
}

inline StepRule parse_step_rule(const std::string& s)
{
	if (s == "spectral")
		return StepRule::spectral;
	if (s == "schedule")
		return StepRule::schedule;
	throw ConfigError("unknown step rule '" + s + "' (expected spectral or schedule)");
}

inline InitKind parse_init_kind(const std::string& s)
{
	if (s == "global-svd")
		return InitKind::global_svd;
	if (s == "masked-global")
		return InitKind::masked_global;
	if (s == "structured")
		return InitKind::structured;
	throw ConfigError("unknown init '" + s + "' (expected global-svd, masked-global or structured)");
}

struct FitConfig {
	double lambda = 1.0;
	StepRule step = StepRule::spectral;
	double eta0 = 1e-4;
	double decay = 0.1;
	int interval = 10;
	int max_iters = 1000;
	double tol = 1e-6;
	InitKind init = InitKind::structured;
	double init_noise = 0.0; ///< std. dev. of Gaussian perturbation added to V₀ on active entries
	std::uint64_t seed = 0;	 ///< stream for the V₀ perturbation

	void validate() const
	{
		if (!(lambda > 0.0))
			throw ConfigError("fit: lambda must be positive");
		if (max_iters < 1)
			throw ConfigError("fit: max_iters must be at least 1");
		if (!(tol >= 0.0))
			throw ConfigError("fit: tol must be nonnegative");
		if (step == StepRule::schedule) {
			if (!(eta0 > 0.0))
				throw ConfigError("fit: eta0 must be positive");
			if (!(decay > 0.0) || decay > 1.0)
				throw ConfigError("fit: decay must lie in (0, 1]");
			if (interval < 1)
				throw ConfigError("fit: decay interval must be at least 1");
		}
		if (!(init_noise >= 0.0))
			throw ConfigError("fit: init_noise must be nonnegative");
	}
};

struct FitDiagnostics {
	std::string init_candidate;
	double step_size = 0.0; ///< initial η
	int monotonicity_violations = 0;
	std::vector<std::string> warnings;
};

struct FitResult {
	Matrix V;
	double sigma_eps_hat_sq = 0.0;
	double sigma_min_tilde = 0.0;	///< r-th eigenvalue of S̃
	Index n = 0;			///< samples behind S̃ (0 when S̃ was supplied directly)
	std::vector<double> loss_trace; ///< loss at V₀ followed by one entry per iteration
	int iters_run = 0;
	bool converged = false;
	FitDiagnostics diagnostics;

	double final_loss() const { return loss_trace.empty() ? 0.0 : loss_trace.back(); }
};

/// Encoder hook. The identity encoder has nothing to update.
struct IdentityEncoder {
	const Matrix& encode(const Matrix& X) const { return X; }
	void update(const Matrix& /*V*/) {}
};

/**
 * Masked gradient descent on a given denoised covariance.
 *
 * V_t = mask(V_{t−1} − η_t (λ V_{t−1}V_{t−1}ᵀ − S̃) V_{t−1}); stops when the
 * absolute loss change drops below tol or after max_iters steps. With the
 * "global-svd" init the mask is not applied.
 */
inline FitResult fit_covariance(const Matrix& S_tilde, double sigma_eps_hat_sq, const Hierarchy& h,
				const FitConfig& cfg, const SymEig* eig_tilde = nullptr)
{
	cfg.validate();
	if (S_tilde.rows() != h.d() || S_tilde.cols() != h.d())
		throw ShapeError("fit: covariance shape does not match hierarchy");
	check_symmetric(S_tilde, "fit", 1e-9);

	FitResult res;
	res.sigma_eps_hat_sq = sigma_eps_hat_sq;
	const bool masked = cfg.init != InitKind::global_svd;

	SymEig local;
	if (!eig_tilde) {
		local = sym_eig(S_tilde);
		eig_tilde = &local;
	}
	Matrix V;
	switch (cfg.init) {
	case InitKind::global_svd:
		V = init_global(*eig_tilde, h.r());
		res.diagnostics.init_candidate = "global-svd";
		break;
	case InitKind::masked_global:
		V = apply_mask(h.layout, init_global(*eig_tilde, h.r()));
		res.diagnostics.init_candidate = "masked-global";
		break;
	case InitKind::structured: {
		StructuredInit si = init_structured(S_tilde, h);
		V = std::move(si.V);
		res.diagnostics.init_candidate = si.chosen;
		res.diagnostics.warnings = std::move(si.warnings);
		break;
	}
	}
	if (cfg.init_noise > 0.0) {
		Rng rng{cfg.seed};
		std::normal_distribution<double> normal(0.0, cfg.init_noise);
		for (Index j = 0; j < V.cols(); ++j)
			for (Index i = 0; i < V.rows(); ++i)
				V(i, j) += normal(rng);
		if (masked)
			V = apply_mask(h.layout, std::move(V));
	}

	res.sigma_min_tilde = eig_tilde->values(h.r() - 1);
	const double sigma1 = std::max(eig_tilde->values(0), 0.0);
	double eta = cfg.eta0;
	if (cfg.step == StepRule::spectral) {
		const double v2 = spectral_norm(V);
		const double scale = std::max(sigma1, cfg.lambda * v2 * v2);
		if (!(scale > 0.0))
			throw NumericalError("fit: denoised covariance has no positive spectrum");
		eta = 1.0 / (2.0 * scale);
	}
	res.diagnostics.step_size = eta;

	double prev = loss_covariance(V, S_tilde, cfg.lambda);
	res.loss_trace.push_back(prev);
	int rising = 0;
	IdentityEncoder encoder;
	for (int t = 1; t <= cfg.max_iters; ++t) {
		if (cfg.step == StepRule::schedule)
			eta = cfg.eta0 * std::pow(cfg.decay, static_cast<double>((t - 1) / cfg.interval));
		const Matrix G = V.transpose() * V;
		Matrix step = cfg.lambda * (V * G) - S_tilde * V;
		V -= eta * step;
		if (masked)
			V = apply_mask(h.layout, std::move(V));
		encoder.update(V);
		const double cur = loss_covariance(V, S_tilde, cfg.lambda);
		res.loss_trace.push_back(cur);
		res.iters_run = t;
		if (!std::isfinite(cur))
			throw NumericalError("fit: loss became non-finite at iteration " + std::to_string(t));
		if (cur > prev + 1e-12 * std::max(1.0, std::abs(prev)))
			++res.diagnostics.monotonicity_violations;
		if (cur > prev) {
			if (++rising >= 5 && cfg.step == StepRule::schedule)
				throw NumericalError("fit: loss increased for 5 consecutive iterations (iteration " +
						     std::to_string(t) + "); lower eta0");
		} else {
			rising = 0;
		}
		if (std::abs(cur - prev) < cfg.tol) {
			res.converged = true;
			prev = cur;
			break;
		}
		prev = cur;
	}
	res.V = std::move(V);
	return res;
}

/// Full pipeline: S_n, denoising with r = Σ r_s, init, descent.
template <class Encoder = IdentityEncoder>
FitResult fit(const MultimodalDataset& data, const Hierarchy& h, const FitConfig& cfg, const Encoder& enc = Encoder{})
{
	cfg.validate();
	if (data.n() < 2)
		throw PreconditionError("fit: need n >= 2");
	if (data.X.cols() != h.d())
		throw ShapeError("fit: data has " + std::to_string(data.X.cols()) + " columns, expected " +
				 std::to_string(h.d()));
	const CovarianceEstimate cov = denoise_covariance(sample_covariance(enc.encode(data.X)), h.r());
	const SymEig et = denoised_eig(cov);
	FitResult res = fit_covariance(*cov.S_tilde, *cov.sigma_eps_hat_sq, h, cfg, &et);
	res.n = data.n();
	return res;
}

} // namespace hcl
