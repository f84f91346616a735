#pragma once

#include "hcl/core.hpp"
#include "hcl/downstream.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/io.hpp"
#include "hcl/metrics.hpp"
#include "hcl/plot.hpp"
#include "hcl/simulate.hpp"
#include "hcl/spectral.hpp"
#include "hcl/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace hcl {

inline const std::vector<std::string>& known_methods()
{
	static const std::vector<std::string> m{"naive-svd", "hcl-svd", "hcl-gd"};
	return m;
}

struct BetaSpec {
	enum class Kind { sphere, support, explicit_blocks } kind = Kind::sphere;
	std::vector<std::vector<int>> support; ///< member lists
	Vector beta;			       ///< for explicit_blocks
};

struct DownstreamConfig {
	bool enabled = false;
	BetaSpec beta;
	double sigma_xi = 0.1;
	std::vector<Index> m_values{2000};
	Index validation_m = 0; ///< 0 means same as m
	Index test_m = 2000;
	std::vector<double> lambda_grid; ///< explicit grid; overrides lambda_center
	std::string lambda_center = "rate"; ///< "rate" or "lambda-max"
	int lambda_count = 10;
	double lambda_decades = 1.0; ///< "rate": half-width of the grid in decades
	double lambda_ratio = 1e-3;  ///< "lambda-max": lowest point relative to λ_max
	LassoSelection selection;
};

struct ExperimentConfig {
	std::string name = "custom";
	Hierarchy hierarchy;
	double sv_lo = 0.5;
	double sv_hi = 1.5;
	double noise_c = 10.0;
	std::uint64_t seed = 1;
	int replications = 20;
	std::vector<Index> n_values;
	std::vector<std::string> methods = known_methods();
	FitConfig fit;
	DownstreamConfig downstream;
	std::string output = "out";
	bool long_running = false;

	void validate() const
	{
		if (replications < 1)
			throw ConfigError("replications must be at least 1");
		if (n_values.empty())
			throw ConfigError("sweep must list at least one n");
		for (Index n : n_values)
			if (n < 2)
				throw ConfigError("every n in the sweep must be at least 2");
		if (methods.empty())
			throw ConfigError("methods must be nonempty");
		for (const auto& m : methods)
			if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
				throw ConfigError("unknown method '" + m + "'");
		if (!(noise_c >= 0.0))
			throw ConfigError("noise_c must be nonnegative");
		if (!(sv_lo > 0.0) || sv_hi < sv_lo)
			throw ConfigError("sv_range must satisfy 0 < lo <= hi");
		if (hierarchy.r() >= hierarchy.d())
			throw ConfigError("total latent dimension must be below total ambient dimension");
		fit.validate();
		if (downstream.enabled) {
			if (downstream.m_values.empty())
				throw ConfigError("downstream.m must be nonempty");
			for (Index m : downstream.m_values)
				if (m <= hierarchy.r())
					throw ConfigError("downstream sample sizes must exceed r");
			if (downstream.test_m < 2)
				throw ConfigError("downstream.test_m must be at least 2");
			if (downstream.lambda_center != "rate" && downstream.lambda_center != "lambda-max")
				throw ConfigError("downstream.lambda_center must be \"rate\" or \"lambda-max\"");
			if (downstream.lambda_count < 1 || !(downstream.lambda_decades > 0.0) ||
			    !(downstream.lambda_ratio > 0.0) || downstream.lambda_ratio > 1.0)
				throw ConfigError("downstream lambda grid settings are invalid");
			if (!(downstream.selection.se_rule >= 0.0))
				throw ConfigError("downstream.se_rule must be nonnegative");
			if (!(downstream.sigma_xi >= 0.0))
				throw ConfigError("downstream.sigma_xi must be nonnegative");
			if (downstream.beta.kind == BetaSpec::Kind::explicit_blocks &&
			    downstream.beta.beta.size() != hierarchy.r())
				throw ConfigError("downstream.beta blocks do not cover r coordinates");
		}
	}
};

inline json experiment_to_json(const ExperimentConfig& c)
{
	json ds = {{"enabled", c.downstream.enabled},
		   {"sigma_xi", c.downstream.sigma_xi},
		   {"m", c.downstream.m_values},
		   {"validation_m", c.downstream.validation_m},
		   {"test_m", c.downstream.test_m},
		   {"lambda_center", c.downstream.lambda_center},
		   {"lambda_count", c.downstream.lambda_count},
		   {"lambda_decades", c.downstream.lambda_decades},
		   {"lambda_ratio", c.downstream.lambda_ratio},
		   {"refit", c.downstream.selection.refit},
		   {"se_rule", c.downstream.selection.se_rule}};
	if (!c.downstream.lambda_grid.empty())
		ds["lambda_grid"] = c.downstream.lambda_grid;
	switch (c.downstream.beta.kind) {
	case BetaSpec::Kind::sphere:
		ds["beta"] = "sphere";
		break;
	case BetaSpec::Kind::support:
		ds["beta"] = {{"support", c.downstream.beta.support}};
		break;
	case BetaSpec::Kind::explicit_blocks: {
		json blocks = json::array();
		for (int s = 0; s < c.hierarchy.num_structures(); ++s) {
			const auto& cc = c.hierarchy.layout.cols(s);
			std::vector<double> v(c.downstream.beta.beta.data() + cc.offset,
					      c.downstream.beta.beta.data() + cc.end());
			blocks.push_back({{"members", c.hierarchy.structure(s).members}, {"beta", v}});
		}
		ds["beta"] = {{"blocks", blocks}};
		break;
	}
	}
	json j = {{"name", c.name},
		  {"hierarchy", hierarchy_to_json(c.hierarchy.spec)},
		  {"total_latent_dim", c.hierarchy.r()},
		  {"total_ambient_dim", c.hierarchy.d()},
		  {"sim",
		   {{"sv_range", {c.sv_lo, c.sv_hi}},
		    {"noise_c", c.noise_c},
		    {"seed", c.seed},
		    {"replications", c.replications}}},
		  {"sweep", {{"n", c.n_values}}},
		  {"methods", c.methods},
		  {"fit", fit_config_to_json(c.fit)},
		  {"downstream", ds},
		  {"output", c.output}};
	if (c.long_running)
		j["long_running"] = true;
	return j;
}

inline ExperimentConfig experiment_from_json(const json& j)
{
	ExperimentConfig c;
	try {
		c.name = j.value("name", c.name);
		c.hierarchy = hierarchy_from_json(j.at("hierarchy"));
		if (j.contains("sim")) {
			const auto& s = j.at("sim");
			if (s.contains("sv_range")) {
				auto r = s.at("sv_range").get<std::vector<double>>();
				if (r.size() != 2)
					throw ConfigError("sim.sv_range must have two entries");
				c.sv_lo = r[0];
				c.sv_hi = r[1];
			}
			c.noise_c = s.value("noise_c", c.noise_c);
			c.seed = s.value("seed", c.seed);
			c.replications = s.value("replications", c.replications);
		}
		const auto& sw = j.at("sweep");
		c.n_values = sw.at("n").get<std::vector<Index>>();
		if (j.contains("methods"))
			c.methods = j.at("methods").get<std::vector<std::string>>();
		if (j.contains("fit"))
			c.fit = fit_config_from_json(j.at("fit"));
		if (j.contains("downstream")) {
			const auto& d = j.at("downstream");
			auto& ds = c.downstream;
			ds.enabled = d.value("enabled", true);
			ds.sigma_xi = d.value("sigma_xi", ds.sigma_xi);
			if (d.contains("m"))
				ds.m_values = d.at("m").get<std::vector<Index>>();
			else if (sw.contains("m"))
				ds.m_values = sw.at("m").get<std::vector<Index>>();
			ds.validation_m = d.value("validation_m", ds.validation_m);
			ds.test_m = d.value("test_m", ds.test_m);
			ds.lambda_count = d.value("lambda_count", ds.lambda_count);
			ds.lambda_ratio = d.value("lambda_ratio", ds.lambda_ratio);
			ds.lambda_center = d.value("lambda_center", ds.lambda_center);
			ds.lambda_decades = d.value("lambda_decades", ds.lambda_decades);
			ds.selection.refit = d.value("refit", ds.selection.refit);
			ds.selection.se_rule = d.value("se_rule", ds.selection.se_rule);
			if (d.contains("lambda_grid"))
				ds.lambda_grid = d.at("lambda_grid").get<std::vector<double>>();
			if (d.contains("beta")) {
				const auto& b = d.at("beta");
				if (b.is_string()) {
					if (b.get<std::string>() != "sphere")
						throw ConfigError("downstream.beta: expected \"sphere\" or an object");
					ds.beta.kind = BetaSpec::Kind::sphere;
				} else if (b.contains("support")) {
					ds.beta.kind = BetaSpec::Kind::support;
					ds.beta.support = b.at("support").get<std::vector<std::vector<int>>>();
					for (auto& mem : ds.beta.support) {
						std::sort(mem.begin(), mem.end());
						if (c.hierarchy.find(std::span<const int>(mem)) < 0)
							throw ConfigError("downstream.beta.support names an unknown structure");
					}
				} else if (b.contains("blocks")) {
					ds.beta.kind = BetaSpec::Kind::explicit_blocks;
					ds.beta.beta = Vector::Zero(c.hierarchy.r());
					for (const auto& e : b.at("blocks")) {
						auto mem = e.at("members").get<std::vector<int>>();
						std::sort(mem.begin(), mem.end());
						const int s = c.hierarchy.find(std::span<const int>(mem));
						if (s < 0)
							throw ConfigError("downstream.beta.blocks names an unknown structure");
						auto v = e.at("beta").get<std::vector<double>>();
						const auto& cc = c.hierarchy.layout.cols(s);
						if (static_cast<Index>(v.size()) != cc.size)
							throw ConfigError("downstream.beta.blocks: wrong block length");
						for (Index k = 0; k < cc.size; ++k)
							ds.beta.beta(cc.offset + k) = v[static_cast<std::size_t>(k)];
					}
				} else {
					throw ConfigError("downstream.beta: expected \"sphere\", {support} or {blocks}");
				}
			}
		}
		if (j.contains("output"))
			c.output = j.at("output").get<std::string>();
		c.long_running = j.value("long_running", false);
	} catch (const json::exception& e) {
		throw ConfigError(std::string("experiment config: ") + e.what());
	} catch (const PreconditionError& e) {
		throw ConfigError(std::string("experiment config: ") + e.what());
	}
	c.validate();
	return c;
}

inline const std::vector<std::string>& preset_names()
{
	static const std::vector<std::string> p{"fig-recovery-desk", "fig-downstream-desk", "paper-scale-recovery"};
	return p;
}

/// Paper optimizer settings: η₀ = 1e-4, ×0.1 every 10 epochs, stop below 1e-6 loss change.
inline FitConfig schedule_fit_config()
{
	FitConfig f;
	f.step = StepRule::schedule;
	f.eta0 = 1e-4;
	f.decay = 0.1;
	f.interval = 10;
	f.tol = 1e-6;
	f.max_iters = 1000;
	f.init = InitKind::structured;
	return f;
}

inline ExperimentConfig make_preset(const std::string& name)
{
	ExperimentConfig c;
	c.name = name;
	c.fit = schedule_fit_config();
	if (name == "fig-recovery-desk") {
		c.hierarchy = build_hierarchy({30, 50, 80}, 2);
		c.noise_c = 10.0;
		c.replications = 20;
		c.n_values = {1000, 2000, 4000, 8000};
		c.output = "out/fig-recovery-desk";
	} else if (name == "fig-downstream-desk") {
		c.hierarchy = build_hierarchy({30, 50, 80}, 2);
		c.noise_c = 0.1;
		c.replications = 20;
		c.n_values = {1000, 2000, 4000};
		c.downstream.enabled = true;
		c.downstream.sigma_xi = 0.1;
		c.downstream.beta.kind = BetaSpec::Kind::sphere;
		c.downstream.m_values = {4000};
		c.downstream.test_m = 2000;
		c.output = "out/fig-downstream-desk";
	} else if (name == "paper-scale-recovery") {
		c.hierarchy = build_hierarchy({300, 500, 800}, 10);
		c.noise_c = 10.0;
		c.replications = 100;
		c.n_values = {5000, 10000, 15000, 20000, 25000, 30000};
		c.output = "out/paper-scale-recovery";
		c.long_running = true;
	} else {
		std::string msg = "unknown preset '" + name + "'; available presets:";
		for (const auto& p : preset_names())
			msg += " " + p;
		throw ConfigError(msg);
	}
	c.validate();
	return c;
}

struct Record {
	int replication = 0;
	Index n = 0;
	std::optional<Index> m;
	std::string method;
	std::string target;
	std::string metric;
	double value = 0.0;
};

struct CellFailure {
	int replication = 0;
	Index n = 0;
	std::string error;
};

struct Aggregate {
	Index n = 0;
	std::optional<Index> m;
	std::string method;
	std::string target;
	std::string metric;
	int count = 0;
	double mean = 0.0;
	double se = std::numeric_limits<double>::quiet_NaN();
};

struct SweepResult {
	std::vector<Record> records;
	std::vector<Aggregate> aggregates;
	std::vector<CellFailure> failures;

	int exit_code() const { return failures.empty() ? 0 : 2; }
};

namespace detail {

struct CellOutput {
	std::vector<Record> records;
	std::optional<std::string> error;
};

inline Vector make_beta_star(const ExperimentConfig& c, int rep)
{
	const auto& ds = c.downstream;
	Rng rng = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::beta);
	switch (ds.beta.kind) {
	case BetaSpec::Kind::sphere:
		return draw_unit_sphere(c.hierarchy.r(), rng);
	case BetaSpec::Kind::support: {
		std::vector<int> sup;
		for (const auto& mem : ds.beta.support)
			sup.push_back(c.hierarchy.find(std::span<const int>(mem)));
		return draw_beta_on_support(c.hierarchy, sup, rng);
	}
	case BetaSpec::Kind::explicit_blocks:
		return ds.beta.beta;
	}
	return {};
}

inline std::vector<int> beta_support(const Hierarchy& h, const Vector& beta)
{
	return active_set(h, beta);
}

inline void push_recovery(std::vector<Record>& out, int rep, Index n, const std::string& method,
			  const Hierarchy& h, double global_err, const RecoveryReport& rep_blocks)
{
	out.push_back({rep, n, std::nullopt, method, "global", "err", global_err});
	out.push_back({rep, n, std::nullopt, method, "global", "aligned_spectral", rep_blocks.aligned_global.spectral});
	out.push_back({rep, n, std::nullopt, method, "global", "aligned_frobenius", rep_blocks.aligned_global.frobenius});
	out.push_back({rep, n, std::nullopt, method, "global", "aligned_two_inf", rep_blocks.aligned_global.two_inf});
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto su = static_cast<std::size_t>(s);
		const std::string t = h.structure(s).label();
		out.push_back({rep, n, std::nullopt, method, t, "err", rep_blocks.block_err[su]});
		out.push_back({rep, n, std::nullopt, method, t, "aligned_spectral", rep_blocks.aligned_block[su].spectral});
		out.push_back({rep, n, std::nullopt, method, t, "aligned_frobenius", rep_blocks.aligned_block[su].frobenius});
		out.push_back({rep, n, std::nullopt, method, t, "aligned_two_inf", rep_blocks.aligned_block[su].two_inf});
	}
}

inline std::vector<double> lambda_grid_for(const DownstreamConfig& ds, const DownstreamDataset& train,
					   const RecoveryOperator& C, double s2, const Hierarchy& h, Index n,
					   double sigma_min)
{
	if (!ds.lambda_grid.empty())
		return ds.lambda_grid;
	if (ds.lambda_center == "rate")
		return centered_log_grid(lambda_rate_plugin(train, C, s2, n, sigma_min), ds.lambda_decades,
					 ds.lambda_count);
	return log_grid(group_lasso_lambda_max(train, C, h), ds.lambda_ratio, ds.lambda_count);
}

inline void push_downstream(std::vector<Record>& out, const ExperimentConfig& c, int rep, Index n,
			    const std::string& method, const Matrix& V, double s2, double sigma_min,
			    const GroundTruth& truth, const Vector& beta_star)
{
	const Hierarchy& h = c.hierarchy;
	const auto& ds = c.downstream;
	const RecoveryOperator C = recovery_operator(V);
	const std::vector<int> support = beta_support(h, beta_star);
	for (Index m : ds.m_values) {
		// data streams depend on (rep, stage) only, so every method and n sees the same samples
		Rng rtrain = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::downstream_train);
		Rng rval = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::downstream_validation);
		Rng rtest = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::downstream_test);
		const DownstreamDataset train = simulate_downstream(truth, beta_star, ds.sigma_xi, m, rtrain);
		const DownstreamDataset val =
			simulate_downstream(truth, beta_star, ds.sigma_xi, ds.validation_m ? ds.validation_m : m, rval);
		const DownstreamDataset test = simulate_downstream(truth, beta_star, ds.sigma_xi, ds.test_m, rtest);
		const Matrix Ztest = C.embed(test.Xtilde);
		auto rec = [&](const std::string& metric, double v) {
			out.push_back({rep, n, m, method, "y", metric, v});
		};
		auto prediction = [&](const std::string& prefix, const Vector& beta) {
			const RegressionMetrics pm = regression_metrics(test.y, Ztest * beta);
			rec(prefix + "rmse", pm.rmse);
			rec(prefix + "smape", pm.smape);
			rec(prefix + "r2", pm.r2 ? *pm.r2 : std::numeric_limits<double>::quiet_NaN());
		};

		const RegressionFit deb = fit_debiased_ols(train, C, s2, &h);
		prediction("debiased_", deb.beta);
		rec("debiased_beta_err", aligned_beta_error(deb.beta, beta_star, V, truth.W, h));
		rec("debiased_excess_risk", excess_risk(deb.beta, truth, beta_star, C));

		const RegressionFit naive = fit_debiased_ols(train, C, 0.0, &h);
		prediction("naive_ols_", naive.beta);
		rec("naive_ols_beta_err", aligned_beta_error(naive.beta, beta_star, V, truth.W, h));
		rec("naive_ols_excess_risk", excess_risk(naive.beta, truth, beta_star, C));

		const LassoPath path = tune_group_lasso(train, val, C, s2, h, lambda_grid_for(ds, train, C, s2, h, n, sigma_min),
							{}, ds.selection);
		const RegressionFit& gl = path.best();
		prediction("lasso_", gl.beta);
		rec("lasso_beta_err", aligned_beta_error(gl.beta, beta_star, V, truth.W, h));
		rec("lasso_excess_risk", excess_risk(gl.beta, truth, beta_star, C));
		rec("lasso_lambda", gl.lambda_m);
		rec("lasso_active_count", static_cast<double>(gl.active.size()));
		rec("lasso_support_exact", exact_support(gl.active, support) ? 1.0 : 0.0);
		rec("lasso_converged", gl.converged ? 1.0 : 0.0);
	}
}

inline CellOutput run_cell(const ExperimentConfig& c, int rep, Index n)
{
	CellOutput out;
	const Hierarchy& h = c.hierarchy;
	Rng rtruth = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::truth);
	auto truth = std::make_shared<const GroundTruth>(
		generate_ground_truth_c(h, {c.sv_lo, c.sv_hi}, c.noise_c, rtruth));
	Rng rdata = make_rng(c.seed, static_cast<std::uint64_t>(rep), Stage::data);
	const MultimodalDataset data = simulate_dataset(truth, n, rdata);

	const CovarianceEstimate cov = denoise_covariance(sample_covariance(data.X), h.r());
	const SymEig et = denoised_eig(cov);
	const Matrix& St = *cov.S_tilde;
	const double s2 = *cov.sigma_eps_hat_sq;
	const Matrix& W = truth->W;
	out.records.push_back({rep, n, std::nullopt, "denoise", "global", "sigma_eps_hat_sq", s2});

	Vector beta_star;
	if (c.downstream.enabled)
		beta_star = make_beta_star(c, rep);

	std::optional<StructuredInit> si;
	auto structured = [&]() -> const StructuredInit& {
		if (!si)
			si = init_structured(St, h);
		return *si;
	};

	for (const auto& method : c.methods) {
		Matrix Vd; // mask-compliant estimate for block metrics and downstream use
		if (method == "naive-svd") {
			const Matrix V = init_global(et, h.r());
			Vd = align_and_mask(V, W, h);
			push_recovery(out.records, rep, n, method, h, projection_error(V, W), aligned_errors(Vd, W, h));
		} else if (method == "hcl-svd") {
			Vd = structured().V;
			const RecoveryReport rr = aligned_errors(Vd, W, h);
			push_recovery(out.records, rep, n, method, h, rr.global_err, rr);
			out.records.push_back({rep, n, std::nullopt, method, "global", "init_oblique",
					       structured().chosen == "oblique" ? 1.0 : 0.0});
		} else {
			const FitResult fr = fit_covariance(St, s2, h, c.fit, &et);
			Vd = fr.V;
			if (c.fit.init == InitKind::global_svd)
				Vd = align_and_mask(fr.V, W, h);
			const RecoveryReport rr = aligned_errors(Vd, W, h);
			push_recovery(out.records, rep, n, method, h, projection_error(fr.V, W), rr);
			out.records.push_back({rep, n, std::nullopt, method, "global", "iterations",
					       static_cast<double>(fr.iters_run)});
			out.records.push_back({rep, n, std::nullopt, method, "global", "converged", fr.converged ? 1.0 : 0.0});
			out.records.push_back({rep, n, std::nullopt, method, "global", "final_loss", fr.final_loss()});
		}
		if (c.downstream.enabled)
			push_downstream(out.records, c, rep, n, method, Vd, s2, et.values(h.r() - 1), *truth, beta_star);
	}
	return out;
}

inline std::string m_field(const std::optional<Index>& m)
{
	return m ? std::to_string(*m) : std::string("NA");
}

inline std::string value_field(double v)
{
	return std::isfinite(v) ? fmt_double(v) : std::string("NA");
}

} // namespace detail

/// Mean and standard error (sample sd / √count) per (n, m, method, target, metric), NaN values skipped.
inline std::vector<Aggregate> aggregate(const std::vector<Record>& records)
{
	using Key = std::tuple<Index, Index, std::string, std::string, std::string>;
	std::map<Key, std::vector<double>> groups;
	std::map<Key, std::optional<Index>> mvals;
	for (const auto& r : records) {
		Key k{r.n, r.m ? *r.m : -1, r.method, r.target, r.metric};
		auto& g = groups[k];
		mvals[k] = r.m;
		if (std::isfinite(r.value))
			g.push_back(r.value);
	}
	std::vector<Aggregate> out;
	for (const auto& [k, vals] : groups) {
		Aggregate a;
		a.n = std::get<0>(k);
		a.m = mvals[k];
		a.method = std::get<2>(k);
		a.target = std::get<3>(k);
		a.metric = std::get<4>(k);
		a.count = static_cast<int>(vals.size());
		if (a.count > 0) {
			double sum = 0.0;
			for (double v : vals)
				sum += v;
			a.mean = sum / a.count;
			if (a.count > 1) {
				double ss = 0.0;
				for (double v : vals)
					ss += (v - a.mean) * (v - a.mean);
				a.se = std::sqrt(ss / (a.count - 1) / a.count);
			}
		} else {
			a.mean = std::numeric_limits<double>::quiet_NaN();
		}
		out.push_back(std::move(a));
	}
	return out;
}

inline std::string records_csv(const std::vector<Record>& records)
{
	std::ostringstream os;
	os << "replication,n,m,method,target,metric,value\n";
	for (const auto& r : records)
		os << r.replication << ',' << r.n << ',' << detail::m_field(r.m) << ',' << r.method << ',' << r.target
		   << ',' << r.metric << ',' << detail::value_field(r.value) << '\n';
	return os.str();
}

inline std::string aggregates_csv(const std::vector<Aggregate>& aggs)
{
	std::ostringstream os;
	os << "# smape: percent, denominator (|y|+|yhat|)/2, 0/0 terms counted as 0; se = sd/sqrt(count)\n";
	os << "n,m,method,target,metric,count,mean,se\n";
	for (const auto& a : aggs)
		os << a.n << ',' << detail::m_field(a.m) << ',' << a.method << ',' << a.target << ',' << a.metric << ','
		   << a.count << ',' << detail::value_field(a.mean) << ',' << detail::value_field(a.se) << '\n';
	return os.str();
}

/**
 * Run every (replication, n) cell on a pool of `workers` threads.
 *
 * Records are collected per cell and concatenated in (replication, n) order,
 * so the output does not depend on the worker count.
 */
inline SweepResult run_sweep(const ExperimentConfig& c, int workers = 1)
{
	c.validate();
	struct Cell {
		int rep;
		Index n;
	};
	std::vector<Cell> cells;
	for (int rep = 0; rep < c.replications; ++rep)
		for (Index n : c.n_values)
			cells.push_back({rep, n});
	std::vector<detail::CellOutput> outputs(cells.size());
	std::atomic<std::size_t> next{0};
	auto work = [&] {
		for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
			try {
				outputs[i] = detail::run_cell(c, cells[i].rep, cells[i].n);
			} catch (const std::exception& e) {
				outputs[i].records.clear();
				outputs[i].error = e.what();
			}
		}
	};
	const int k = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
	std::vector<std::thread> pool;
	for (int t = 1; t < k; ++t)
		pool.emplace_back(work);
	work();
	for (auto& t : pool)
		t.join();

	SweepResult res;
	for (std::size_t i = 0; i < cells.size(); ++i) {
		if (outputs[i].error) {
			res.failures.push_back({cells[i].rep, cells[i].n, *outputs[i].error});
			continue;
		}
		for (auto& r : outputs[i].records)
			res.records.push_back(std::move(r));
	}
	res.aggregates = aggregate(res.records);
	return res;
}

/// One SVG per metric over target "global": mean ± se against n, one series per method (and m).
inline std::map<std::string, std::string> sweep_plots(const SweepResult& res)
{
	std::map<std::string, std::map<std::string, PlotSeries>> by_metric;
	for (const auto& a : res.aggregates) {
		if (a.target != "global" && a.target != "y")
			continue;
		if (a.method == "denoise" && a.metric != "sigma_eps_hat_sq")
			continue;
		std::string series = a.method;
		if (a.m)
			series += " m=" + std::to_string(*a.m);
		auto& s = by_metric[a.metric][series];
		s.name = series;
		s.x.push_back(static_cast<double>(a.n));
		s.y.push_back(a.mean);
		s.err.push_back(a.se);
	}
	std::map<std::string, std::string> out;
	for (const auto& [metric, series] : by_metric) {
		std::vector<PlotSeries> v;
		for (const auto& [_, s] : series)
			v.push_back(s);
		out["plot_" + metric + ".svg"] = render_line_plot(metric + " vs n (mean +/- se)", "n", metric, v);
	}
	return out;
}

inline void write_sweep_outputs(const SweepResult& res, const ExperimentConfig& c, const std::filesystem::path& dir)
{
	std::filesystem::create_directories(dir);
	write_text(dir / "results.csv", records_csv(res.records));
	write_text(dir / "aggregates.csv", aggregates_csv(res.aggregates));
	write_text(dir / "config.json", experiment_to_json(c).dump(2) + "\n");
	std::ostringstream f;
	f << "replication,n,error\n";
	for (const auto& e : res.failures) {
		std::string msg = e.error;
		std::replace(msg.begin(), msg.end(), '"', '\'');
		f << e.replication << ',' << e.n << ",\"" << msg << "\"\n";
	}
	write_text(dir / "failures.csv", f.str());
	for (const auto& [name, svg] : sweep_plots(res))
		write_text(dir / name, svg);
}

} // namespace hcl
