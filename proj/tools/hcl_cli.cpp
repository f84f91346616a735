#include "hcl/hcl.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace hcl;

namespace {

struct Common {
	std::string config;
	std::optional<std::uint64_t> seed;
	int workers = 1;
	std::string out;
};

void add_common(CLI::App* app, Common& c, bool need_config = true)
{
	auto* opt = app->add_option("--config", c.config, "experiment config (JSON)");
	if (need_config)
		opt->required()->check(CLI::ExistingFile);
	app->add_option("--seed", c.seed, "master seed (overrides the config)");
	app->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
	app->add_option("--out", c.out, "output directory");
}

ExperimentConfig load_config(const Common& c)
{
	ExperimentConfig cfg = experiment_from_json(load_json(c.config));
	if (c.seed)
		cfg.seed = *c.seed;
	if (!c.out.empty())
		cfg.output = c.out;
	return cfg;
}

Matrix scalar(double v)
{
	Matrix m(1, 1);
	m(0, 0) = v;
	return m;
}

GroundTruth truth_from_bundle(const MatrixBundle& b, const Hierarchy& h)
{
	GroundTruth t{h, bundle_get(b, "W"), bundle_get(b, "sigma_eps")(0, 0)};
	check_shape(h.layout, t.W, "truth file");
	return t;
}

int cmd_simulate(const Common& c, std::optional<Index> n_opt, int replication)
{
	const ExperimentConfig cfg = load_config(c);
	const Index n = n_opt ? *n_opt : cfg.n_values.front();
	const fs::path dir = cfg.output;
	fs::create_directories(dir);
	Rng rt = make_rng(cfg.seed, static_cast<std::uint64_t>(replication), Stage::truth);
	auto truth = std::make_shared<const GroundTruth>(
		generate_ground_truth_c(cfg.hierarchy, {cfg.sv_lo, cfg.sv_hi}, cfg.noise_c, rt));
	Rng rd = make_rng(cfg.seed, static_cast<std::uint64_t>(replication), Stage::data);
	const MultimodalDataset data = simulate_dataset(truth, n, rd);

	save_hcld(dir / "dataset.hcld", {{"X", data.X}, {"Z", *data.Z}});
	save_hcld(dir / "truth.hcld", {{"W", truth->W}, {"sigma_eps", scalar(truth->sigma_eps)}});
	std::ofstream csv(dir / "dataset.csv");
	write_dataset_csv(csv, data.X, &*data.Z);
	json side = {{"hierarchy", hierarchy_to_json(cfg.hierarchy.spec)},
		     {"n", n},
		     {"seed", cfg.seed},
		     {"replication", replication},
		     {"noise_c", cfg.noise_c},
		     {"sigma_eps", truth->sigma_eps},
		     {"sv_range", {cfg.sv_lo, cfg.sv_hi}}};
	write_text(dir / "dataset.json", side.dump(2) + "\n");
	std::cout << "wrote " << n << " samples (d = " << cfg.hierarchy.d() << ", r = " << cfg.hierarchy.r() << ") to "
		  << dir.string() << "\n";
	return 0;
}

int cmd_fit(const Common& c, const std::string& data_path)
{
	const ExperimentConfig cfg = load_config(c);
	const MatrixBundle b = load_hcld(data_path);
	MultimodalDataset data;
	data.X = bundle_get(b, "X");
	const FitResult r = fit(data, cfg.hierarchy, cfg.fit);
	const fs::path dir = cfg.output;
	fs::create_directories(dir);
	Matrix trace(static_cast<Index>(r.loss_trace.size()), 1);
	for (std::size_t i = 0; i < r.loss_trace.size(); ++i)
		trace(static_cast<Index>(i), 0) = r.loss_trace[i];
	save_hcld(dir / "fit.hcld", {{"V", r.V},
				     {"loss_trace", trace},
				     {"sigma_eps_hat_sq", scalar(r.sigma_eps_hat_sq)},
				     {"sigma_min_tilde", scalar(r.sigma_min_tilde)},
				     {"n", scalar(static_cast<double>(r.n))}});
	write_text(dir / "fit.json", fit_result_sidecar(r, cfg.fit).dump(2) + "\n");
	std::cout << "fit: " << r.iters_run << " iterations, converged = " << (r.converged ? "yes" : "no")
		  << ", final loss " << fmt_double(r.final_loss()) << ", noise variance estimate "
		  << fmt_double(r.sigma_eps_hat_sq) << "\n";
	return 0;
}

int cmd_eval(const Common& c, const std::string& fit_path, const std::string& truth_path)
{
	const ExperimentConfig cfg = load_config(c);
	const Hierarchy& h = cfg.hierarchy;
	const Matrix V = bundle_get(load_hcld(fit_path), "V");
	const GroundTruth truth = truth_from_bundle(load_hcld(truth_path), h);
	check_shape(h.layout, V, "fit file");
	const Matrix Vd = is_mask_compliant(h.layout, V) ? V : align_and_mask(V, truth.W, h);
	const RecoveryReport rr = aligned_errors(Vd, truth.W, h);
	std::ostringstream os;
	os << "target,metric,value\n";
	auto row = [&](const std::string& t, const std::string& m, double v) {
		os << t << ',' << m << ',' << fmt_double(v) << '\n';
	};
	row("global", "err", projection_error(V, truth.W));
	row("global", "aligned_spectral", rr.aligned_global.spectral);
	row("global", "aligned_frobenius", rr.aligned_global.frobenius);
	row("global", "aligned_two_inf", rr.aligned_global.two_inf);
	for (int s = 0; s < h.num_structures(); ++s) {
		const auto su = static_cast<std::size_t>(s);
		const std::string t = h.structure(s).label();
		row(t, "err", rr.block_err[su]);
		row(t, "aligned_spectral", rr.aligned_block[su].spectral);
		row(t, "aligned_frobenius", rr.aligned_block[su].frobenius);
		row(t, "aligned_two_inf", rr.aligned_block[su].two_inf);
	}
	const fs::path dir = cfg.output;
	fs::create_directories(dir);
	write_text(dir / "recovery.csv", os.str());
	std::cout << os.str();
	return 0;
}

int cmd_downstream(const Common& c, const std::string& fit_path, const std::string& truth_path, int replication)
{
	ExperimentConfig cfg = load_config(c);
	const Hierarchy& h = cfg.hierarchy;
	const MatrixBundle fb = load_hcld(fit_path);
	const Matrix V = bundle_get(fb, "V");
	const double s2 = bundle_get(fb, "sigma_eps_hat_sq")(0, 0);
	const double sigma_min = bundle_get(fb, "sigma_min_tilde")(0, 0);
	const auto n = static_cast<Index>(bundle_get(fb, "n")(0, 0));
	const GroundTruth truth = truth_from_bundle(load_hcld(truth_path), h);
	check_shape(h.layout, V, "fit file");
	const Matrix Vd = is_mask_compliant(h.layout, V) ? V : align_and_mask(V, truth.W, h);
	cfg.downstream.enabled = true;

	const Vector beta_star = detail::make_beta_star(cfg, replication);
	std::vector<Record> recs;
	detail::push_downstream(recs, cfg, replication, n, "fit", Vd, s2, sigma_min, truth, beta_star);

	const fs::path dir = cfg.output;
	fs::create_directories(dir);
	std::ostringstream os;
	os << "m,metric,value\n";
	for (const auto& r : recs)
		os << *r.m << ',' << r.metric << ',' << (std::isfinite(r.value) ? fmt_double(r.value) : "NA") << '\n';
	write_text(dir / "regression.csv", os.str());

	// JSON for the first m: debiased fit and the tuned group lasso
	const Index m = cfg.downstream.m_values.front();
	Rng rtrain = make_rng(cfg.seed, static_cast<std::uint64_t>(replication), Stage::downstream_train);
	Rng rval = make_rng(cfg.seed, static_cast<std::uint64_t>(replication), Stage::downstream_validation);
	const DownstreamDataset train = simulate_downstream(truth, beta_star, cfg.downstream.sigma_xi, m, rtrain);
	const DownstreamDataset val = simulate_downstream(
		truth, beta_star, cfg.downstream.sigma_xi, cfg.downstream.validation_m ? cfg.downstream.validation_m : m,
		rval);
	const RecoveryOperator C = recovery_operator(Vd);
	const RegressionFit deb = fit_debiased_ols(train, C, s2, &h);
	const LassoPath path =
		tune_group_lasso(train, val, C, s2, h, detail::lambda_grid_for(cfg.downstream, train, C, s2, h, n, sigma_min),
				 {}, cfg.downstream.selection);
	json j = {{"m", m},
		  {"debiased_ols", regression_fit_to_json(deb, h)},
		  {"group_lasso", regression_fit_to_json(path.best(), h)},
		  {"lambda_grid", path.grid},
		  {"validation_loss", path.validation_loss},
		  {"validation_se", path.validation_se},
		  {"selected_lambda", path.grid[path.selected]}};
	write_text(dir / "regression.json", j.dump(2) + "\n");
	std::cout << os.str();
	return 0;
}

int run_and_write(const ExperimentConfig& cfg, int workers)
{
	if (cfg.long_running)
		std::cerr << "note: preset '" << cfg.name << "' is long-running\n";
	const SweepResult res = run_sweep(cfg, workers);
	write_sweep_outputs(res, cfg, cfg.output);
	std::cout << "sweep '" << cfg.name << "': " << res.records.size() << " records, " << res.failures.size()
		  << " failed cells, output in " << cfg.output << "\n";
	for (const auto& f : res.failures)
		std::cerr << "cell (replication " << f.replication << ", n " << f.n << ") failed: " << f.error << "\n";
	return res.exit_code();
}

} // namespace

int main(int argc, char** argv)
{
	CLI::App app{"hcl: hierarchical contrastive learning for linked multimodal data"};
	app.require_subcommand(1);

	Common c;
	std::optional<Index> n_opt;
	int replication = 0;
	std::string data_path, fit_path, truth_path, preset;
	std::optional<int> reps_override;
	bool print_only = false;

	auto* sim = app.add_subcommand("simulate", "draw a ground truth and a dataset");
	add_common(sim, c);
	sim->add_option("--n", n_opt, "sample count (default: first n of the sweep)");
	sim->add_option("--replication", replication, "replication index for seed splitting");

	auto* fitc = app.add_subcommand("fit", "estimate the loading matrix from a dataset");
	add_common(fitc, c);
	fitc->add_option("--data", data_path, "dataset container (.hcld)")->required()->check(CLI::ExistingFile);

	auto* ev = app.add_subcommand("eval", "recovery errors of a fit against the truth");
	add_common(ev, c);
	ev->add_option("--fit", fit_path, "fit container (.hcld)")->required()->check(CLI::ExistingFile);
	ev->add_option("--truth", truth_path, "truth container (.hcld)")->required()->check(CLI::ExistingFile);

	auto* ds = app.add_subcommand("downstream", "debiased OLS and group lasso on fresh data");
	add_common(ds, c);
	ds->add_option("--fit", fit_path, "fit container (.hcld)")->required()->check(CLI::ExistingFile);
	ds->add_option("--truth", truth_path, "truth container (.hcld)")->required()->check(CLI::ExistingFile);
	ds->add_option("--replication", replication, "replication index for seed splitting");

	auto* sw = app.add_subcommand("sweep", "run a full experiment sweep");
	add_common(sw, c);
	sw->add_option("--replications", reps_override, "override the replication count");

	auto* rp = app.add_subcommand("reproduce", "run a named preset");
	add_common(rp, c, false);
	rp->add_option("preset", preset, "fig-recovery-desk | fig-downstream-desk | paper-scale-recovery")->required();
	rp->add_option("--replications", reps_override, "override the replication count");
	rp->add_flag("--print-config", print_only, "print the preset config and exit");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int code = app.exit(e);
		return code == 0 ? 0 : 1;
	}

	try {
		if (*sim)
			return cmd_simulate(c, n_opt, replication);
		if (*fitc)
			return cmd_fit(c, data_path);
		if (*ev)
			return cmd_eval(c, fit_path, truth_path);
		if (*ds)
			return cmd_downstream(c, fit_path, truth_path, replication);
		if (*sw) {
			ExperimentConfig cfg = load_config(c);
			if (reps_override)
				cfg.replications = *reps_override;
			return run_and_write(cfg, c.workers);
		}
		if (*rp) {
			ExperimentConfig cfg = make_preset(preset);
			if (c.seed)
				cfg.seed = *c.seed;
			if (!c.out.empty())
				cfg.output = c.out;
			if (reps_override)
				cfg.replications = *reps_override;
			cfg.validate();
			if (print_only) {
				std::cout << experiment_to_json(cfg).dump(2) << "\n";
				return 0;
			}
			return run_and_write(cfg, c.workers);
		}
	} catch (const ConfigError& e) {
		std::cerr << "config error: " << e.what() << "\n";
		return 1;
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << "\n";
		return 2;
	}
	return 1;
}
