#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace hcl;

namespace {

ExperimentConfig tiny_config()
{
	ExperimentConfig c;
	c.hierarchy = build_hierarchy({6, 7, 8}, 1);
	c.noise_c = 1.0;
	c.replications = 1;
	c.n_values = {500};
	c.methods = {"hcl-gd"};
	c.fit.max_iters = 50;
	return c;
}

std::vector<std::string> split(const std::string& line, char sep = ',')
{
	std::vector<std::string> out;
	std::string cur;
	std::istringstream is(line);
	while (std::getline(is, cur, sep))
		out.push_back(cur);
	return out;
}

} // namespace

TEST(Hcld, RoundTripExact)
{
	Rng rng{1};
	MatrixBundle b{{"X", hcl::testing::gaussian(7, 3, rng)}, {"empty", Matrix(0, 4)}, {"s", Matrix::Constant(1, 1, -0.1)}};
	b["X"](0, 0) = std::numeric_limits<double>::denorm_min();
	b["X"](1, 1) = -0.0;
	std::stringstream ss;
	write_hcld(ss, b);
	const MatrixBundle back = read_hcld(ss);
	ASSERT_EQ(back.size(), 3u);
	for (const auto& [k, M] : b) {
		ASSERT_EQ(back.at(k).rows(), M.rows());
		ASSERT_EQ(back.at(k).cols(), M.cols());
		EXPECT_EQ(std::memcmp(back.at(k).data(), M.data(), sizeof(double) * static_cast<std::size_t>(M.size())), 0);
	}
	EXPECT_THROW(bundle_get(back, "missing"), ConfigError);
}

TEST(Hcld, ByteLayout)
{
	Matrix M(1, 2);
	M << 1.0, -2.0;
	std::stringstream ss;
	write_hcld(ss, {{"ab", M}});
	const std::string bytes = ss.str();
	ASSERT_EQ(bytes.size(), 4u + 1 + 4 + 2 + 2 + 8 + 8 + 16);
	EXPECT_EQ(bytes.substr(0, 4), "HCLD");
	EXPECT_EQ(bytes[4], '\x01');
	EXPECT_EQ(bytes.substr(5, 4), std::string("\x01\x00\x00\x00", 4));
	EXPECT_EQ(bytes.substr(9, 2), std::string("\x02\x00", 2));
	EXPECT_EQ(bytes.substr(11, 2), "ab");
	EXPECT_EQ(bytes.substr(13, 8), std::string("\x01\0\0\0\0\0\0\0", 8));
	EXPECT_EQ(bytes.substr(21, 8), std::string("\x02\0\0\0\0\0\0\0", 8));
	// 1.0 = 0x3FF0000000000000, little endian
	EXPECT_EQ(bytes.substr(29, 8), std::string("\0\0\0\0\0\0\xf0\x3f", 8));
	EXPECT_EQ(bytes.substr(37, 8), std::string("\0\0\0\0\0\0\x00\xc0", 8));
}

TEST(Hcld, RejectsCorruptInput)
{
	std::stringstream bad("XXXX\x01");
	EXPECT_THROW(read_hcld(bad), ConfigError);
	std::stringstream ss;
	write_hcld(ss, {{"X", Matrix::Ones(3, 3)}});
	const std::string bytes = ss.str();
	for (std::size_t cut : {3ul, 6ul, 12ul, 20ul, bytes.size() - 1}) {
		std::stringstream t(bytes.substr(0, cut));
		EXPECT_THROW(read_hcld(t), ConfigError);
	}
	std::string v = bytes;
	v[4] = '\x02';
	std::stringstream vs(v);
	EXPECT_THROW(read_hcld(vs), ConfigError);
}

TEST(DatasetCsv, HeaderAndRows)
{
	Matrix X(2, 2), Z(2, 1);
	X << 1.0, 0.1, -3.0, 4.5;
	Z << 0.25, -1.0;
	std::ostringstream os;
	write_dataset_csv(os, X, &Z);
	std::istringstream is(os.str());
	std::string line;
	std::getline(is, line);
	EXPECT_EQ(line, "z_1,x_1,x_2");
	std::getline(is, line);
	EXPECT_EQ(line, "0.25,1,0.10000000000000001");
	EXPECT_EQ(std::stod(split(line)[2]), 0.1);
}

TEST(ExperimentConfig, JsonRoundTrip)
{
	ExperimentConfig c = make_preset("fig-downstream-desk");
	c.downstream.beta.kind = BetaSpec::Kind::support;
	c.downstream.beta.support = {{1, 2, 3}, {1}};
	c.downstream.selection.se_rule = 0.5;
	const ExperimentConfig back = experiment_from_json(experiment_to_json(c));
	EXPECT_EQ(back.hierarchy.r(), 14);
	EXPECT_EQ(back.n_values, c.n_values);
	EXPECT_EQ(back.noise_c, 0.1);
	EXPECT_EQ(back.fit.step, StepRule::schedule);
	EXPECT_EQ(back.downstream.beta.kind, BetaSpec::Kind::support);
	EXPECT_EQ(back.downstream.beta.support, c.downstream.beta.support);
	EXPECT_EQ(back.downstream.selection.se_rule, 0.5);
	EXPECT_EQ(experiment_to_json(back), experiment_to_json(c));
}

TEST(ExperimentConfig, Rejections)
{
	json j = experiment_to_json(tiny_config());
	j["sim"]["replications"] = 0;
	EXPECT_THROW(experiment_from_json(j), ConfigError);
	j = experiment_to_json(tiny_config());
	j["methods"] = {"pca"};
	EXPECT_THROW(experiment_from_json(j), ConfigError);
	j = experiment_to_json(tiny_config());
	j["sweep"]["n"] = json::array();
	EXPECT_THROW(experiment_from_json(j), ConfigError);
	j = experiment_to_json(tiny_config());
	j["fit"]["step"] = "adam";
	EXPECT_THROW(experiment_from_json(j), ConfigError);
	j = experiment_to_json(tiny_config());
	j["downstream"]["enabled"] = true;
	j["downstream"]["beta"] = {{"support", {{1, 4}}}};
	EXPECT_THROW(experiment_from_json(j), ConfigError);
	j = experiment_to_json(tiny_config());
	j.erase("hierarchy");
	EXPECT_THROW(experiment_from_json(j), ConfigError);
}

TEST(Presets, EchoSettings)
{
	const ExperimentConfig ds = make_preset("fig-downstream-desk");
	EXPECT_EQ(ds.noise_c, 0.1);
	EXPECT_EQ(ds.downstream.sigma_xi, 0.1);
	EXPECT_TRUE(ds.downstream.enabled);
	const json p = experiment_to_json(make_preset("paper-scale-recovery"));
	EXPECT_EQ(p.at("total_latent_dim"), 70);
	EXPECT_EQ(p.at("sim").at("noise_c"), 10.0);
	EXPECT_EQ(p.at("sweep").at("n").back(), 30000);
	EXPECT_TRUE(p.at("long_running").get<bool>());
	const ExperimentConfig r = make_preset("fig-recovery-desk");
	EXPECT_EQ(r.replications, 20);
	EXPECT_EQ(r.n_values, (std::vector<Index>{1000, 2000, 4000, 8000}));
	try {
		make_preset("fig-nope");
		FAIL();
	} catch (const ConfigError& e) {
		const std::string msg = e.what();
		for (const auto& name : preset_names())
			EXPECT_NE(msg.find(name), std::string::npos);
	}
}

TEST(Sweep, MinimalConfigOneRecordPerMetric)
{
	const SweepResult res = run_sweep(tiny_config(), 1);
	EXPECT_TRUE(res.failures.empty());
	EXPECT_EQ(res.exit_code(), 0);
	std::set<std::tuple<std::string, std::string, std::string>> seen;
	for (const auto& r : res.records) {
		EXPECT_EQ(r.replication, 0);
		EXPECT_EQ(r.n, 500);
		EXPECT_TRUE(seen.insert({r.method, r.target, r.metric}).second);
	}
	EXPECT_TRUE(seen.count({"hcl-gd", "global", "err"}));
	EXPECT_TRUE(seen.count({"hcl-gd", "1_2_3", "aligned_two_inf"}));
	EXPECT_TRUE(seen.count({"denoise", "global", "sigma_eps_hat_sq"}));
	EXPECT_EQ(records_csv(res.records), records_csv(run_sweep(tiny_config(), 1).records));
}

TEST(Sweep, WorkerCountInvariance)
{
	ExperimentConfig c = tiny_config();
	c.replications = 3;
	c.n_values = {300, 600};
	c.methods = known_methods();
	c.downstream.enabled = true;
	c.downstream.m_values = {300};
	c.downstream.test_m = 200;
	const std::string a = records_csv(run_sweep(c, 1).records);
	EXPECT_EQ(a, records_csv(run_sweep(c, 4).records));
	EXPECT_EQ(a, records_csv(run_sweep(c, 8).records));
	EXPECT_EQ(a.substr(0, a.find('\n')), "replication,n,m,method,target,metric,value");
}

TEST(Sweep, FailedCellsReported)
{
	ExperimentConfig c = tiny_config();
	c.n_values = {2, 500};
	c.methods = {"naive-svd"};
	// two samples give a rank-one covariance, so the rank-3 factorization has no positive spectrum
	const SweepResult res = run_sweep(c, 2);
	ASSERT_EQ(res.failures.size(), 1u);
	EXPECT_EQ(res.failures[0].n, 2);
	EXPECT_EQ(res.exit_code(), 2);
	bool has500 = false;
	for (const auto& r : res.records)
		has500 = has500 || r.n == 500;
	EXPECT_TRUE(has500);
}

TEST(Aggregates, RecomputedIndependently)
{
	ExperimentConfig c = tiny_config();
	c.replications = 4;
	c.n_values = {300, 600};
	c.methods = {"naive-svd", "hcl-svd"};
	const SweepResult res = run_sweep(c, 2);
	// parse the CSV text rather than the in-memory records
	std::istringstream is(records_csv(res.records));
	std::string line;
	std::getline(is, line);
	std::map<std::string, std::vector<double>> groups;
	while (std::getline(is, line)) {
		const auto f = split(line);
		ASSERT_EQ(f.size(), 7u);
		if (f[6] != "NA")
			groups[f[1] + "|" + f[2] + "|" + f[3] + "|" + f[4] + "|" + f[5]].push_back(std::stod(f[6]));
	}
	std::istringstream as(aggregates_csv(res.aggregates));
	std::getline(as, line);
	EXPECT_EQ(line[0], '#');
	std::getline(as, line);
	EXPECT_EQ(line, "n,m,method,target,metric,count,mean,se");
	int checked = 0;
	while (std::getline(as, line)) {
		const auto f = split(line);
		ASSERT_EQ(f.size(), 8u);
		const auto& v = groups.at(f[0] + "|" + f[1] + "|" + f[2] + "|" + f[3] + "|" + f[4]);
		ASSERT_EQ(std::stoi(f[5]), static_cast<int>(v.size()));
		double mean = 0.0;
		for (double x : v)
			mean += x / static_cast<double>(v.size());
		double ss = 0.0;
		for (double x : v)
			ss += (x - mean) * (x - mean);
		const double se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
		EXPECT_NEAR(std::stod(f[6]), mean, 1e-12 * (1 + std::abs(mean)));
		EXPECT_NEAR(std::stod(f[7]), se, 1e-10 * (1 + se));
		++checked;
	}
	EXPECT_EQ(checked, static_cast<int>(groups.size()));
}

TEST(Plot, SvgStructure)
{
	PlotSeries s;
	s.name = "hcl-gd";
	s.x = {1000, 2000, 4000};
	s.y = {3.0, 2.0, 1.5};
	s.err = {0.1, 0.1, 0.05};
	const std::string svg = render_line_plot("err vs n", "n", "err", {s});
	EXPECT_EQ(svg.rfind("<svg", 0), 0u);
	EXPECT_NE(svg.find("</svg>"), std::string::npos);
	EXPECT_NE(svg.find("hcl-gd"), std::string::npos);
}
