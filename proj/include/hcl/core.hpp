#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hcl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Matrix or vector dimensions disagree with the hierarchy / each other.
class ShapeError : public Error {
public:
	using Error::Error;
};

/// An operation's documented precondition does not hold.
class PreconditionError : public Error {
public:
	using Error::Error;
};

/// Σ_{s ∋ m} r_s > d_m for some modality.
class RankConditionError : public PreconditionError {
public:
	using PreconditionError::PreconditionError;
};

/// Numerical failure: rank deficiency, indefinite systems, divergence.
class NumericalError : public Error {
public:
	using Error::Error;
};

/// Malformed configuration or file.
class ConfigError : public Error {
public:
	using Error::Error;
};

using Rng = std::mt19937_64;

/// Stream tags used when deriving per-replication RNG seeds.
enum class Stage : std::uint64_t {
	truth = 1,
	data = 2,
	downstream_train = 3,
	downstream_validation = 4,
	downstream_test = 5,
	beta = 6,
	perturb = 7,
	unlabeled = 8,
};

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
	z += 0x9e3779b97f4a7c15ULL;
	z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
	z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
	return z ^ (z >> 31);
}

} // namespace detail

/**
 * Derive the seed of an independent stream from (master seed, replication, stage).
 *
 * seed = mix(mix(mix(master) ^ replication) ^ stage), with mix the SplitMix64
 * finalizer. Streams depend only on these three values, never on which worker
 * runs the cell or in which order cells complete.
 */
constexpr std::uint64_t split_seed(std::uint64_t master, std::uint64_t replication, Stage stage) noexcept
{
	std::uint64_t h = detail::mix64(master);
	h = detail::mix64(h ^ replication);
	return detail::mix64(h ^ static_cast<std::uint64_t>(stage));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t replication, Stage stage)
{
	return Rng{split_seed(master, replication, stage)};
}

} // namespace hcl
