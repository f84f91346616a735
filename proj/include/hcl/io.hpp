#pragma once

#include "hcl/core.hpp"
#include "hcl/downstream.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/train.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace hcl {

using json = nlohmann::json;

/// Named matrices in the "HCLD" binary container.
///
/// Layout: "HCLD", version byte (1), u32 entry count; per entry u16 name
/// length, name bytes, u64 rows, u64 cols, rows·cols f64 row-major. All
/// integers and floats little-endian.
using MatrixBundle = std::map<std::string, Matrix>;

inline constexpr char hcld_magic[4] = {'H', 'C', 'L', 'D'};
inline constexpr std::uint8_t hcld_version = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v)
{
	unsigned char buf[sizeof(T)];
	std::uint64_t bits = 0;
	if constexpr (std::is_same_v<T, double>)
		bits = std::bit_cast<std::uint64_t>(v);
	else
		bits = static_cast<std::uint64_t>(v);
	for (std::size_t i = 0; i < sizeof(T); ++i)
		buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
	os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is)
{
	unsigned char buf[sizeof(T)];
	if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
		throw ConfigError("HCLD: truncated file");
	std::uint64_t bits = 0;
	for (std::size_t i = 0; i < sizeof(T); ++i)
		bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
	if constexpr (std::is_same_v<T, double>)
		return std::bit_cast<double>(bits);
	else
		return static_cast<T>(bits);
}

} // namespace detail

inline void write_hcld(std::ostream& os, const MatrixBundle& bundle)
{
	os.write(hcld_magic, 4);
	detail::put_le<std::uint8_t>(os, hcld_version);
	detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.size()));
	for (const auto& [name, M] : bundle) {
		if (name.size() > 0xffff)
			throw PreconditionError("HCLD: entry name too long");
		detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
		os.write(name.data(), static_cast<std::streamsize>(name.size()));
		detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(M.rows()));
		detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(M.cols()));
		for (Index i = 0; i < M.rows(); ++i)
			for (Index j = 0; j < M.cols(); ++j)
				detail::put_le<double>(os, M(i, j));
	}
}

inline MatrixBundle read_hcld(std::istream& is)
{
	char magic[4];
	if (!is.read(magic, 4) || std::memcmp(magic, hcld_magic, 4) != 0)
		throw ConfigError("HCLD: bad magic");
	const auto version = detail::get_le<std::uint8_t>(is);
	if (version != hcld_version)
		throw ConfigError("HCLD: unsupported version " + std::to_string(version));
	const auto count = detail::get_le<std::uint32_t>(is);
	MatrixBundle out;
	for (std::uint32_t e = 0; e < count; ++e) {
		const auto len = detail::get_le<std::uint16_t>(is);
		std::string name(len, '\0');
		if (len && !is.read(name.data(), len))
			throw ConfigError("HCLD: truncated entry name");
		const auto rows = detail::get_le<std::uint64_t>(is);
		const auto cols = detail::get_le<std::uint64_t>(is);
		if (rows > (1ULL << 32) || cols > (1ULL << 32))
			throw ConfigError("HCLD: implausible matrix shape");
		Matrix M(static_cast<Index>(rows), static_cast<Index>(cols));
		for (Index i = 0; i < M.rows(); ++i)
			for (Index j = 0; j < M.cols(); ++j)
				M(i, j) = detail::get_le<double>(is);
		out.emplace(std::move(name), std::move(M));
	}
	return out;
}

inline void save_hcld(const std::filesystem::path& path, const MatrixBundle& bundle)
{
	std::ofstream os(path, std::ios::binary);
	if (!os)
		throw ConfigError("cannot open " + path.string() + " for writing");
	write_hcld(os, bundle);
	if (!os)
		throw ConfigError("write failed: " + path.string());
}

inline MatrixBundle load_hcld(const std::filesystem::path& path)
{
	std::ifstream is(path, std::ios::binary);
	if (!is)
		throw ConfigError("cannot open " + path.string());
	return read_hcld(is);
}

inline const Matrix& bundle_get(const MatrixBundle& b, const std::string& key)
{
	auto it = b.find(key);
	if (it == b.end())
		throw ConfigError("HCLD: missing entry '" + key + "'");
	return it->second;
}

/// Shortest decimal that round-trips a double.
inline std::string fmt_double(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

/// CSV with header z_1..z_r, x_1..x_d (latents omitted when absent).
inline void write_dataset_csv(std::ostream& os, const Matrix& X, const Matrix* Z)
{
	bool first = true;
	auto sep = [&] {
		if (!first)
			os << ',';
		first = false;
	};
	if (Z)
		for (Index k = 0; k < Z->cols(); ++k) {
			sep();
			os << "z_" << k + 1;
		}
	for (Index j = 0; j < X.cols(); ++j) {
		sep();
		os << "x_" << j + 1;
	}
	os << '\n';
	for (Index i = 0; i < X.rows(); ++i) {
		first = true;
		if (Z)
			for (Index k = 0; k < Z->cols(); ++k) {
				sep();
				os << fmt_double((*Z)(i, k));
			}
		for (Index j = 0; j < X.cols(); ++j) {
			sep();
			os << fmt_double(X(i, j));
		}
		os << '\n';
	}
}

inline json hierarchy_to_json(const HierarchySpec& spec)
{
	json j;
	j["modalities"] = spec.modalities;
	j["ambient_dims"] = spec.ambient_dims;
	j["structures"] = json::array();
	for (const auto& s : spec.structures)
		j["structures"].push_back({{"members", s.members}, {"dim", s.dim}});
	return j;
}

/**
 * Parse {"modalities", "ambient_dims", "structures": [{"members", "dim"}]}.
 * "structures" may be replaced by "uniform_dim" for the full lattice.
 */
inline Hierarchy hierarchy_from_json(const json& j)
{
	try {
		auto dims = j.at("ambient_dims").get<std::vector<Index>>();
		if (j.contains("modalities") && j.at("modalities").get<int>() != static_cast<int>(dims.size()))
			throw ConfigError("hierarchy: 'modalities' disagrees with length of 'ambient_dims'");
		if (j.contains("structures")) {
			std::vector<Structure> st;
			for (const auto& e : j.at("structures"))
				st.push_back({e.at("members").get<std::vector<int>>(), e.at("dim").get<Index>()});
			return build_hierarchy(std::move(dims), std::move(st));
		}
		return build_hierarchy(std::move(dims), j.at("uniform_dim").get<Index>());
	} catch (const json::exception& e) {
		throw ConfigError(std::string("hierarchy: ") + e.what());
	}
}

inline json fit_config_to_json(const FitConfig& c)
{
	return {{"lambda", c.lambda},     {"step", to_string(c.step)}, {"eta0", c.eta0},
		{"decay", c.decay},	  {"interval", c.interval},    {"max_iters", c.max_iters},
		{"tol", c.tol},		  {"init", to_string(c.init)}, {"init_noise", c.init_noise},
		{"seed", c.seed}};
}

inline FitConfig fit_config_from_json(const json& j)
{
	FitConfig c;
	try {
		c.lambda = j.value("lambda", c.lambda);
		c.step = parse_step_rule(j.value("step", to_string(c.step)));
		c.eta0 = j.value("eta0", c.eta0);
		c.decay = j.value("decay", c.decay);
		c.interval = j.value("interval", c.interval);
		c.max_iters = j.value("max_iters", c.max_iters);
		c.tol = j.value("tol", c.tol);
		c.init = parse_init_kind(j.value("init", to_string(c.init)));
		c.init_noise = j.value("init_noise", c.init_noise);
		c.seed = j.value("seed", c.seed);
	} catch (const json::exception& e) {
		throw ConfigError(std::string("fit config: ") + e.what());
	}
	c.validate();
	return c;
}

inline json fit_result_sidecar(const FitResult& r, const FitConfig& c)
{
	return {{"sigma_eps_hat_sq", r.sigma_eps_hat_sq},
		{"iters_run", r.iters_run},
		{"converged", r.converged},
		{"final_loss", r.final_loss()},
		{"init_candidate", r.diagnostics.init_candidate},
		{"step_size", r.diagnostics.step_size},
		{"monotonicity_violations", r.diagnostics.monotonicity_violations},
		{"warnings", r.diagnostics.warnings},
		{"config", fit_config_to_json(c)}};
}

inline json regression_fit_to_json(const RegressionFit& f, const Hierarchy& h)
{
	json blocks = json::array();
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto& cc = h.layout.cols(s);
		std::vector<double> v(f.beta.data() + cc.offset, f.beta.data() + cc.end());
		blocks.push_back({{"members", h.structure(s).members}, {"beta", v}});
	}
	json active = json::array();
	for (int s : f.active)
		active.push_back(h.structure(s).members);
	return {{"blocks", blocks},
		{"lambda", f.lambda_m},
		{"sigma_eps_hat_sq", f.sigma_eps_hat_sq},
		{"active", active},
		{"iterations", f.iterations},
		{"objective", f.objective},
		{"converged", f.converged},
		{"kkt_residual", f.kkt_residual}};
}

inline json load_json(const std::filesystem::path& path)
{
	std::ifstream is(path);
	if (!is)
		throw ConfigError("cannot open " + path.string());
	try {
		return json::parse(is);
	} catch (const json::exception& e) {
		throw ConfigError(path.string() + ": " + e.what());
	}
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
	std::ofstream os(path, std::ios::binary);
	if (!os)
		throw ConfigError("cannot open " + path.string() + " for writing");
	os << text;
}

} // namespace hcl
