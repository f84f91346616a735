// Acceptance checks 1-11. Prints one line per criterion; exits nonzero if any fails.
//
//   acceptance            run all criteria
//   acceptance 4 5 6      run a subset

#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <unistd.h>

using namespace hcl;
using hcl::testing::gaussian;
using hcl::testing::make_truth;
using hcl::testing::random_masked;

namespace {

struct Outcome {
	bool pass = false;
	std::string detail;
};

std::string fmt(double v, int prec = 4)
{
	char buf[64];
	std::snprintf(buf, sizeof buf, "%.*g", prec, v);
	return buf;
}

double mean_of(const SweepResult& res, Index n, const std::string& method, const std::string& target,
	       const std::string& metric)
{
	for (const auto& a : res.aggregates)
		if (a.n == n && a.method == method && a.target == target && a.metric == metric)
			return a.mean;
	throw std::runtime_error("missing aggregate " + method + "/" + target + "/" + metric);
}

// 1. pairwise loss equals the covariance form with the centered sample covariance
Outcome loss_equivalence()
{
	Rng rng{101};
	double worst = 0.0;
	int done = 0;
	while (done < 200) {
		const Hierarchy h = hcl::testing::random_hierarchy(rng, 6, 2);
		if (h.d() > 24)
			continue;
		const Index n = 2 + hcl::testing::uniform_int(0, 48, rng);
		const Matrix X = gaussian(n, h.d(), rng);
		const Matrix V = random_masked(h, rng);
		const double lam = std::vector<double>{0.5, 1.0, 2.0}[static_cast<std::size_t>(done % 3)];
		const double lc = loss_covariance(V, sample_covariance(X, true).S_n, lam);
		worst = std::max(worst, std::abs(loss_pairwise(V, X, h, lam) - lc) / (1 + std::abs(lc)));
		++done;
	}
	return {worst <= 1e-9, "200 instances, max |Lpair - Lcov|/(1+|Lcov|) = " + fmt(worst)};
}

// 2. masked gradient against central differences
Outcome gradient_check()
{
	Rng rng{102};
	const Hierarchy h = build_hierarchy({4, 4, 4}, {{{1, 2, 3}, 1}, {{1, 2}, 1}, {{3}, 1}});
	double worst = 0.0;
	for (int trial = 0; trial < 20; ++trial) {
		const Matrix A = gaussian(h.d(), h.d(), rng);
		const Matrix S = 0.5 * (A + A.transpose());
		const Matrix V = random_masked(h, rng);
		const Matrix G = loss_gradient(V, S, h.layout);
		for (int s = 0; s < h.num_structures(); ++s)
			for (int m : h.structure(s).members) {
				const auto& rr = h.layout.rows(m);
				const auto& cc = h.layout.cols(s);
				for (Index i = rr.offset; i < rr.end(); ++i)
					for (Index j = cc.offset; j < cc.end(); ++j) {
						Matrix Vp = V, Vm = V;
						Vp(i, j) += 1e-5;
						Vm(i, j) -= 1e-5;
						const double fd = (loss_covariance(Vp, S, 1.0) - loss_covariance(Vm, S, 1.0)) / 2e-5;
						worst = std::max(worst, std::abs(fd - G(i, j)) / std::max(1.0, std::abs(G(i, j))));
					}
			}
	}
	return {worst < 1e-6, "20 instances (d=12, r=3), max relative error " + fmt(worst)};
}

// 3. population input: structured init plus spectral steps
Outcome population_exactness()
{
	const Hierarchy h = build_hierarchy({6, 6, 6}, 1);
	auto t = make_truth(h, 0.0, 103);
	FitConfig cfg;
	cfg.max_iters = 500;
	cfg.tol = 1e-16;
	const FitResult r = fit_covariance(t->W * t->W.transpose(), 0.0, h, cfg);
	const RecoveryReport rr = projection_errors(r.V, t->W, h);
	double wb = 0.0;
	for (double e : rr.block_err)
		wb = std::max(wb, e);
	return {rr.global_err < 1e-8 && wb < 1e-6 && r.iters_run <= 500,
		"global Err " + fmt(rr.global_err) + ", max block Err " + fmt(wb) + ", " + std::to_string(r.iters_run) +
			" iterations"};
}

struct RecoveryRun {
	SweepResult res;
	ExperimentConfig cfg;
};

const RecoveryRun& recovery_run()
{
	static const RecoveryRun run = [] {
		RecoveryRun r;
		r.cfg = make_preset("fig-recovery-desk");
		r.res = run_sweep(r.cfg, static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
		return r;
	}();
	return run;
}

// 4. monotone in n and ordered hcl-gd <= hcl-svd <= naive-svd
Outcome recovery_trend()
{
	const auto& [res, cfg] = recovery_run();
	if (!res.failures.empty())
		return {false, std::to_string(res.failures.size()) + " failed cells"};
	bool ok = true;
	std::ostringstream os;
	for (std::size_t i = 0; i < cfg.n_values.size(); ++i) {
		const Index n = cfg.n_values[i];
		const double gd = mean_of(res, n, "hcl-gd", "global", "err");
		const double sv = mean_of(res, n, "hcl-svd", "global", "err");
		const double nv = mean_of(res, n, "naive-svd", "global", "err");
		ok = ok && gd <= sv && sv <= nv;
		if (i > 0)
			for (const char* m : {"hcl-gd", "hcl-svd", "naive-svd"})
				ok = ok && mean_of(res, n, m, "global", "err") < mean_of(res, cfg.n_values[i - 1], m, "global", "err");
		os << (i ? "; " : "") << "n=" << n << ": " << fmt(gd) << " / " << fmt(sv) << " / " << fmt(nv);
	}
	return {ok, "mean Err gd/svd/naive " + os.str()};
}

double loglog_slope(const std::vector<Index>& ns, const std::vector<double>& ys)
{
	double mx = 0, my = 0;
	for (std::size_t i = 0; i < ns.size(); ++i) {
		mx += std::log(static_cast<double>(ns[i])) / static_cast<double>(ns.size());
		my += std::log(ys[i]) / static_cast<double>(ns.size());
	}
	double sxy = 0, sxx = 0;
	for (std::size_t i = 0; i < ns.size(); ++i) {
		const double dx = std::log(static_cast<double>(ns[i])) - mx;
		sxy += dx * (std::log(ys[i]) - my);
		sxx += dx * dx;
	}
	return sxy / sxx;
}

// 5. log-log slope of mean global Err vs n
Outcome rate_check()
{
	const auto& [res, cfg] = recovery_run();
	bool ok = true;
	std::ostringstream os;
	for (const char* m : {"hcl-gd", "hcl-svd", "naive-svd"}) {
		std::vector<double> ys;
		for (Index n : cfg.n_values)
			ys.push_back(mean_of(res, n, m, "global", "err"));
		const double s = loglog_slope(cfg.n_values, ys);
		ok = ok && s >= -0.65 && s <= -0.35;
		os << (os.tellp() ? ", " : "") << m << " " << fmt(s, 3);
	}
	return {ok, "slopes " + os.str() + " (target [-0.65, -0.35])"};
}

// 6. noise variance estimate within 10% of c
Outcome noise_estimate()
{
	const auto& [res, cfg] = recovery_run();
	bool ok = true;
	std::ostringstream os;
	for (Index n : cfg.n_values) {
		const double s2 = mean_of(res, n, "denoise", "global", "sigma_eps_hat_sq");
		ok = ok && std::abs(s2 - cfg.noise_c) / cfg.noise_c < 0.1;
		os << (os.tellp() ? ", " : "") << "n=" << n << ": " << fmt(s2);
	}
	return {ok, "mean sigma_eps_hat^2 " + os.str() + " (c = " + fmt(cfg.noise_c) + ")"};
}

// 7. debiased vs naive OLS with V = W known
Outcome debiasing_benefit()
{
	const Hierarchy h = build_hierarchy({30, 50, 80}, 2);
	const double c = 0.5;
	const int reps = 50;
	std::map<Index, double> deb, naive;
	for (Index m : {500, 2000, 8000})
		for (int rep = 0; rep < reps; ++rep) {
			Rng rt = make_rng(107, static_cast<std::uint64_t>(rep), Stage::truth);
			const GroundTruth t = generate_ground_truth_c(h, {0.5, 1.5}, c, rt);
			Rng rb = make_rng(107, static_cast<std::uint64_t>(rep), Stage::beta);
			const Vector bs = draw_unit_sphere(h.r(), rb);
			Rng rd = make_rng(107, static_cast<std::uint64_t>(rep), Stage::downstream_train);
			const DownstreamDataset d = simulate_downstream(t, bs, 0.1, m, rd);
			const RecoveryOperator C = recovery_operator(t.W);
			deb[m] += aligned_beta_error(fit_debiased_ols(d, C, c).beta, bs, t.W, t.W, h) / reps;
			naive[m] += aligned_beta_error(fit_debiased_ols(d, C, 0.0).beta, bs, t.W, t.W, h) / reps;
		}
	const bool ok = deb[2000] < naive[2000] && deb[500] > deb[2000] && deb[2000] > deb[8000];
	return {ok, "m=2000: debiased " + fmt(deb[2000]) + " vs naive " + fmt(naive[2000]) + "; debiased over m " +
			    fmt(deb[500]) + " > " + fmt(deb[2000]) + " > " + fmt(deb[8000])};
}

// 8. group-lasso exact support recovery rate
Outcome group_lasso_selection()
{
	ExperimentConfig c = make_preset("fig-downstream-desk");
	c.name = "acceptance-support";
	c.replications = 50;
	c.n_values = {4000};
	c.methods = {"hcl-gd"};
	c.downstream.beta.kind = BetaSpec::Kind::support;
	c.downstream.beta.support = {{1, 2, 3}, {1}};
	c.downstream.m_values = {4000};
	c.validate();
	const SweepResult res = run_sweep(c, static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
	if (!res.failures.empty())
		return {false, std::to_string(res.failures.size()) + " failed cells"};
	double hits = 0, count = 0;
	for (const auto& r : res.records)
		if (r.metric == "lasso_support_exact") {
			hits += r.value;
			count += 1;
		}
	return {count == 50 && hits / count >= 0.9,
		"exact support in " + fmt(hits, 3) + "/" + fmt(count, 3) + " replications (target >= 90%)"};
}

// 9. downstream prediction from the fitted representation (debiased estimator)
Outcome downstream_prediction()
{
	ExperimentConfig c = make_preset("fig-downstream-desk");
	c.methods = {"hcl-gd"};
	const SweepResult res = run_sweep(c, static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
	if (!res.failures.empty())
		return {false, std::to_string(res.failures.size()) + " failed cells"};
	auto get = [&](Index n, const std::string& metric) {
		for (const auto& a : res.aggregates)
			if (a.n == n && a.method == "hcl-gd" && a.metric == metric)
				return a.mean;
		throw std::runtime_error("missing " + metric);
	};
	const double r2 = get(4000, "debiased_r2");
	bool ok = r2 > 0.9;
	std::ostringstream os;
	for (std::size_t i = 0; i < c.n_values.size(); ++i) {
		if (i > 0)
			ok = ok && get(c.n_values[i], "debiased_rmse") < get(c.n_values[i - 1], "debiased_rmse");
		os << (i ? " > " : "") << fmt(get(c.n_values[i], "debiased_rmse"), 5);
	}
	return {ok, "debiased R^2 at n=4000 " + fmt(r2, 5) + " (target > 0.9); RMSE over n " + os.str() +
			    "; for reference lasso R^2 " + fmt(get(4000, "lasso_r2"), 5) + ", naive OLS R^2 " +
			    fmt(get(4000, "naive_ols_r2"), 5)};
}

// 10. two perturbed starts reach the same per-structure projections
Outcome identifiability()
{
	const Hierarchy h = build_hierarchy({30, 50, 80}, 2);
	Rng rt = make_rng(110, 0, Stage::truth);
	auto t = std::make_shared<const GroundTruth>(generate_ground_truth_c(h, {0.5, 1.5}, 10.0, rt));
	Rng rd = make_rng(110, 0, Stage::data);
	const MultimodalDataset data = simulate_dataset(t, 4000, rd);
	FitConfig cfg;
	cfg.init_noise = 1e-3;
	cfg.tol = 1e-13;
	cfg.max_iters = 20000;
	cfg.seed = 1;
	const FitResult a = fit(data, h, cfg);
	cfg.seed = 2;
	const FitResult b = fit(data, h, cfg);
	double worst = 0.0;
	for (int s = 0; s < h.num_structures(); ++s) {
		const Matrix Va = stacked_block(h, a.V, s);
		const Matrix Vb = stacked_block(h, b.V, s);
		worst = std::max(worst, (Va * Va.transpose() - Vb * Vb.transpose()).norm());
	}
	return {worst < 1e-3, "max per-structure ||VaVa^T - VbVb^T||_F = " + fmt(worst) + " after " +
				      std::to_string(a.iters_run) + "/" + std::to_string(b.iters_run) + " iterations"};
}

// 11. results.csv bytes do not depend on the worker count
Outcome determinism()
{
	ExperimentConfig c;
	c.name = "acceptance-determinism";
	c.hierarchy = build_hierarchy({30, 50, 80}, 2);
	c.noise_c = 0.1;
	c.replications = 4;
	c.n_values = {500, 1000};
	c.downstream.enabled = true;
	c.downstream.m_values = {1000};
	c.downstream.test_m = 500;
	c.fit.max_iters = 200;
	const auto base = std::filesystem::temp_directory_path() / ("hcl_acceptance_" + std::to_string(::getpid()));
	std::string bytes[2];
	const int workers[2] = {1, 8};
	for (int k = 0; k < 2; ++k) {
		const auto dir = base / ("w" + std::to_string(workers[k]));
		write_sweep_outputs(run_sweep(c, workers[k]), c, dir);
		std::ifstream is(dir / "results.csv", std::ios::binary);
		bytes[k].assign(std::istreambuf_iterator<char>(is), {});
	}
	std::filesystem::remove_all(base);
	return {!bytes[0].empty() && bytes[0] == bytes[1],
		"results.csv " + std::to_string(bytes[0].size()) + " bytes, workers 1 vs 8 " +
			(bytes[0] == bytes[1] ? "identical" : "differ")};
}

} // namespace

int main(int argc, char** argv)
{
	const std::map<int, std::function<Outcome()>> criteria{
		{1, loss_equivalence},	 {2, gradient_check},	     {3, population_exactness}, {4, recovery_trend},
		{5, rate_check},	 {6, noise_estimate},	     {7, debiasing_benefit},	{8, group_lasso_selection},
		{9, downstream_prediction}, {10, identifiability}, {11, determinism}};
	std::set<int> pick;
	for (int i = 1; i < argc; ++i)
		pick.insert(std::stoi(argv[i]));
	int failed = 0;
	for (const auto& [k, run] : criteria) {
		if (!pick.empty() && !pick.count(k))
			continue;
		const auto t0 = std::chrono::steady_clock::now();
		Outcome o;
		try {
			o = run();
		} catch (const std::exception& e) {
			o = {false, std::string("exception: ") + e.what()};
		}
		const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
		std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
			  << fmt(sec, 3) << " s]" << std::endl;
		failed += !o.pass;
	}
	return failed ? 1 : 0;
}
