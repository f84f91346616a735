#pragma once

#include "hcl/core.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace hcl {

/// A latent structure: the (1-indexed, ascending) modalities sharing it and its latent dimension r_s.
struct Structure {
	std::vector<int> members;
	Index dim = 0;

	bool contains(int modality) const
	{
		return std::binary_search(members.begin(), members.end(), modality);
	}

	/// "1_2_3" style label, used as CSV target key.
	std::string label() const
	{
		std::string out;
		for (std::size_t i = 0; i < members.size(); ++i) {
			if (i)
				out += '_';
			out += std::to_string(members[i]);
		}
		return out;
	}
};

struct HierarchySpec {
	int modalities = 0;
	std::vector<Index> ambient_dims;
	std::vector<Structure> structures;

	Index total_latent() const
	{
		return std::accumulate(structures.begin(), structures.end(), Index{0},
				       [](Index acc, const Structure& s) { return acc + s.dim; });
	}

	Index total_ambient() const
	{
		return std::accumulate(ambient_dims.begin(), ambient_dims.end(), Index{0});
	}
};

/// Half-open range [offset, offset + size).
struct Range {
	Index offset = 0;
	Index size = 0;

	Index end() const { return offset + size; }
};

/**
 * Row/column block decomposition of the d×r loading matrix.
 *
 * Rows are grouped by modality (1-indexed), columns by structure (0-based
 * position in the canonical structure list). active(m, s) holds iff m ∈ s.
 */
class BlockLayout {
public:
	BlockLayout() = default;

	explicit BlockLayout(const HierarchySpec& spec)
	{
		const auto M = static_cast<std::size_t>(spec.modalities);
		rows_.reserve(M);
		Index off = 0;
		for (Index dm : spec.ambient_dims) {
			rows_.push_back({off, dm});
			off += dm;
		}
		d_ = off;
		off = 0;
		cols_.reserve(spec.structures.size());
		active_.assign(M * spec.structures.size(), false);
		for (std::size_t s = 0; s < spec.structures.size(); ++s) {
			cols_.push_back({off, spec.structures[s].dim});
			off += spec.structures[s].dim;
			for (int m : spec.structures[s].members)
				active_[(static_cast<std::size_t>(m) - 1) * spec.structures.size() + s] = true;
		}
		r_ = off;
	}

	Index d() const { return d_; }
	Index r() const { return r_; }
	int num_modalities() const { return static_cast<int>(rows_.size()); }
	int num_structures() const { return static_cast<int>(cols_.size()); }

	/// Row range of modality m (1-indexed).
	const Range& rows(int m) const { return rows_.at(static_cast<std::size_t>(m) - 1); }

	/// Column range of the structure at position s.
	const Range& cols(int s) const { return cols_.at(static_cast<std::size_t>(s)); }

	bool active(int m, int s) const
	{
		return active_.at((static_cast<std::size_t>(m) - 1) * cols_.size() + static_cast<std::size_t>(s));
	}

private:
	std::vector<Range> rows_;
	std::vector<Range> cols_;
	std::vector<bool> active_;
	Index d_ = 0;
	Index r_ = 0;
};

struct Hierarchy {
	HierarchySpec spec;
	BlockLayout layout;

	Index d() const { return layout.d(); }
	Index r() const { return layout.r(); }
	int modalities() const { return spec.modalities; }
	int num_structures() const { return layout.num_structures(); }
	const Structure& structure(int s) const { return spec.structures.at(static_cast<std::size_t>(s)); }

	/// Position of the structure with exactly these members, or -1.
	int find(std::span<const int> members) const
	{
		for (int s = 0; s < num_structures(); ++s) {
			const auto& mem = structure(s).members;
			if (std::equal(mem.begin(), mem.end(), members.begin(), members.end()))
				return s;
		}
		return -1;
	}

	int find(std::initializer_list<int> members) const
	{
		return find(std::span<const int>(members.begin(), members.size()));
	}
};

/// Decreasing cardinality, then lexicographic.
inline bool canonical_less(const std::vector<int>& a, const std::vector<int>& b)
{
	if (a.size() != b.size())
		return a.size() > b.size();
	return a < b;
}

/// All 2^M − 1 nonempty subsets of {1..M} in canonical order.
inline std::vector<std::vector<int>> canonical_lattice(int M)
{
	if (M < 1 || M > 20)
		throw PreconditionError("canonical_lattice: modality count out of range");
	std::vector<std::vector<int>> out;
	for (unsigned mask = 1; mask < (1u << M); ++mask) {
		std::vector<int> members;
		for (int m = 0; m < M; ++m)
			if (mask & (1u << m))
				members.push_back(m + 1);
		out.push_back(std::move(members));
	}
	std::sort(out.begin(), out.end(), canonical_less);
	return out;
}

/**
 * Validate a structure list and assemble the hierarchy.
 *
 * Structures are sorted into canonical order; r_s = 0 entries are kept with
 * empty column ranges.
 */
inline Hierarchy build_hierarchy(std::vector<Index> ambient_dims, std::vector<Structure> structures)
{
	const int M = static_cast<int>(ambient_dims.size());
	if (M < 2)
		throw PreconditionError("build_hierarchy: need at least two modalities");
	for (Index dm : ambient_dims)
		if (dm < 1)
			throw PreconditionError("build_hierarchy: ambient dimensions must be positive");
	if (structures.empty())
		throw PreconditionError("build_hierarchy: no structures");

	for (auto& s : structures) {
		if (s.dim < 0)
			throw PreconditionError("build_hierarchy: negative latent dimension for structure " + s.label());
		if (s.members.empty())
			throw PreconditionError("build_hierarchy: empty structure");
		std::sort(s.members.begin(), s.members.end());
		if (std::adjacent_find(s.members.begin(), s.members.end()) != s.members.end())
			throw PreconditionError("build_hierarchy: repeated modality in structure " + s.label());
		if (s.members.front() < 1 || s.members.back() > M)
			throw PreconditionError("build_hierarchy: structure " + s.label() + " references unknown modality");
	}
	std::stable_sort(structures.begin(), structures.end(),
			 [](const Structure& a, const Structure& b) { return canonical_less(a.members, b.members); });
	for (std::size_t i = 1; i < structures.size(); ++i)
		if (structures[i].members == structures[i - 1].members)
			throw PreconditionError("build_hierarchy: duplicate structure " + structures[i].label());

	HierarchySpec spec{M, std::move(ambient_dims), std::move(structures)};
	if (spec.total_latent() <= 0)
		throw PreconditionError("build_hierarchy: total latent dimension must be positive");

	for (int m = 1; m <= M; ++m) {
		Index load = 0;
		for (const auto& s : spec.structures)
			if (s.contains(m))
				load += s.dim;
		if (load > spec.ambient_dims[static_cast<std::size_t>(m) - 1])
			throw RankConditionError("build_hierarchy: modality " + std::to_string(m) + " carries " +
						 std::to_string(load) + " latent columns but has dimension " +
						 std::to_string(spec.ambient_dims[static_cast<std::size_t>(m) - 1]));
	}

	BlockLayout layout(spec);
	return Hierarchy{std::move(spec), std::move(layout)};
}

/// Full lattice with the same r_s for every structure.
inline Hierarchy build_hierarchy(std::vector<Index> ambient_dims, Index uniform_dim)
{
	std::vector<Structure> structures;
	for (auto& members : canonical_lattice(static_cast<int>(ambient_dims.size())))
		structures.push_back({std::move(members), uniform_dim});
	return build_hierarchy(std::move(ambient_dims), std::move(structures));
}

inline void check_shape(const BlockLayout& layout, const Matrix& V, const char* who)
{
	if (V.rows() != layout.d() || V.cols() != layout.r())
		throw ShapeError(std::string(who) + ": expected " + std::to_string(layout.d()) + "x" +
				 std::to_string(layout.r()) + " matrix, got " + std::to_string(V.rows()) + "x" +
				 std::to_string(V.cols()));
}

/// Zero every inactive block (m ∉ s). Linear, idempotent.
inline Matrix apply_mask(const BlockLayout& layout, Matrix V)
{
	check_shape(layout, V, "apply_mask");
	for (int m = 1; m <= layout.num_modalities(); ++m)
		for (int s = 0; s < layout.num_structures(); ++s)
			if (!layout.active(m, s)) {
				const auto& rr = layout.rows(m);
				const auto& cc = layout.cols(s);
				V.block(rr.offset, cc.offset, rr.size, cc.size).setZero();
			}
	return V;
}

/// True iff every inactive block is exactly zero.
inline bool is_mask_compliant(const BlockLayout& layout, const Matrix& V)
{
	check_shape(layout, V, "is_mask_compliant");
	for (int m = 1; m <= layout.num_modalities(); ++m)
		for (int s = 0; s < layout.num_structures(); ++s)
			if (!layout.active(m, s)) {
				const auto& rr = layout.rows(m);
				const auto& cc = layout.cols(s);
				if ((V.block(rr.offset, cc.offset, rr.size, cc.size).array() != 0.0).any())
					return false;
			}
	return true;
}

/// Rows of the member modalities stacked, columns of structure s: the d_s × r_s matrix V_s.
inline Matrix stacked_block(const Hierarchy& h, const Matrix& V, int s)
{
	const auto& st = h.structure(s);
	const auto& cc = h.layout.cols(s);
	Index rows = 0;
	for (int m : st.members)
		rows += h.layout.rows(m).size;
	Matrix out(rows, cc.size);
	Index off = 0;
	for (int m : st.members) {
		const auto& rr = h.layout.rows(m);
		out.middleRows(off, rr.size) = V.block(rr.offset, cc.offset, rr.size, cc.size);
		off += rr.size;
	}
	return out;
}

/// Block V_s^(m).
inline auto block(const BlockLayout& layout, const Matrix& V, int m, int s)
{
	const auto& rr = layout.rows(m);
	const auto& cc = layout.cols(s);
	return V.block(rr.offset, cc.offset, rr.size, cc.size);
}

inline auto block(const BlockLayout& layout, Matrix& V, int m, int s)
{
	const auto& rr = layout.rows(m);
	const auto& cc = layout.cols(s);
	return V.block(rr.offset, cc.offset, rr.size, cc.size);
}

/// Modality block S^(a,b) of a d×d matrix.
inline auto modality_block(const BlockLayout& layout, const Matrix& S, int a, int b)
{
	const auto& ra = layout.rows(a);
	const auto& rb = layout.rows(b);
	return S.block(ra.offset, rb.offset, ra.size, rb.size);
}

} // namespace hcl
