#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace hcl;
using hcl::testing::make_truth;

TEST(Rng, SplitSeedDistinctStreams)
{
	std::set<std::uint64_t> seen;
	for (std::uint64_t rep = 0; rep < 50; ++rep)
		for (auto st : {Stage::truth, Stage::data, Stage::beta, Stage::downstream_test})
			seen.insert(split_seed(1, rep, st));
	EXPECT_EQ(seen.size(), 200u);
	EXPECT_EQ(split_seed(5, 3, Stage::data), split_seed(5, 3, Stage::data));
	EXPECT_NE(split_seed(5, 3, Stage::data), split_seed(6, 3, Stage::data));
}

TEST(Haar, OneByOneIsPlusMinusOne)
{
	Rng rng{1};
	int pos = 0;
	const int N = 4000;
	for (int i = 0; i < N; ++i) {
		const Matrix q = sample_haar_orthonormal(1, 1, rng);
		ASSERT_EQ(std::abs(q(0, 0)), 1.0);
		pos += q(0, 0) > 0;
	}
	// binomial(4000, 1/2): 5 sd ≈ 158
	EXPECT_NEAR(pos, N / 2, 160);
}

TEST(Haar, Orthonormal)
{
	Rng rng{2};
	const Matrix Q = sample_haar_orthonormal(4, 2, rng);
	EXPECT_LT((Q.transpose() * Q - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
	EXPECT_THROW(sample_haar_orthonormal(2, 3, rng), PreconditionError);
	EXPECT_THROW(sample_haar_orthonormal(2, 0, rng), PreconditionError);
}

TEST(Haar, EntryMeanVanishes)
{
	Rng rng{3};
	double sum = 0.0;
	const int N = 10000;
	for (int i = 0; i < N; ++i)
		sum += sample_haar_orthonormal(3, 3, rng)(0, 0);
	EXPECT_LT(std::abs(sum / N), 3.0 * (1.0 / std::sqrt(3.0)) / 100.0);
}

TEST(GroundTruth, SingularValuesInRangeDescending)
{
	const Hierarchy h = build_hierarchy({30, 50, 80}, 2);
	Rng rng{4};
	const GroundTruth t = generate_ground_truth(h, {0.5, 1.5}, 1.0, rng);
	for (int s = 0; s < h.num_structures(); ++s)
		for (int m : h.structure(s).members) {
			Eigen::JacobiSVD<Matrix> svd(block(h.layout, t.W, m, s));
			const Vector sv = svd.singularValues();
			for (Index k = 0; k < sv.size(); ++k) {
				EXPECT_GE(sv(k), 0.5 - 1e-12);
				EXPECT_LE(sv(k), 1.5 + 1e-12);
			}
		}
	EXPECT_TRUE(is_mask_compliant(h.layout, t.W));
	Eigen::JacobiSVD<Matrix> svd(t.W);
	EXPECT_GT(svd.singularValues()(h.r() - 1), 1e-6);
}

TEST(GroundTruth, DegenerateRangeGivesUnitSingularValues)
{
	const Hierarchy h = build_hierarchy({8, 9, 10}, 2);
	Rng rng{5};
	const GroundTruth t = generate_ground_truth(h, {1.0, 1.0}, 0.0, rng);
	for (int s = 0; s < h.num_structures(); ++s)
		for (int m : h.structure(s).members) {
			Eigen::JacobiSVD<Matrix> svd(block(h.layout, t.W, m, s));
			EXPECT_LT((svd.singularValues().array() - 1.0).abs().maxCoeff(), 1e-12);
		}
}

TEST(GroundTruth, InvalidArguments)
{
	const Hierarchy h = build_hierarchy({6, 7, 8}, 1);
	Rng rng{6};
	EXPECT_THROW(generate_ground_truth(h, {0.0, 1.0}, 1.0, rng), PreconditionError);
	EXPECT_THROW(generate_ground_truth(h, {1.5, 0.5}, 1.0, rng), PreconditionError);
	EXPECT_THROW(generate_ground_truth(h, {0.5, 1.5}, -1.0, rng), PreconditionError);
}

TEST(GroundTruth, MaskCompliantOnRandomHierarchies)
{
	Rng rng{8};
	for (int trial = 0; trial < 40; ++trial) {
		const Hierarchy h = hcl::testing::random_hierarchy(rng);
		const GroundTruth t = generate_ground_truth(h, {0.5, 1.5}, 0.3, rng);
		EXPECT_TRUE((apply_mask(h.layout, t.W).array() == t.W.array()).all());
	}
}

TEST(SimulateDataset, NoiselessIsExact)
{
	const Hierarchy h = build_hierarchy({5, 6, 7}, 1);
	auto t = make_truth(h, 0.0, 9);
	Rng rng{10};
	const MultimodalDataset d = simulate_dataset(t, 50, rng);
	EXPECT_TRUE(((*d.Z) * t->W.transpose() - d.X).isZero(0));
	EXPECT_THROW(simulate_dataset(t, 1, rng), PreconditionError);
}

TEST(SimulateDataset, LatentCovarianceNearIdentity)
{
	const Hierarchy h = build_hierarchy({4, 4}, {{{1, 2}, 1}, {{1}, 1}, {{2}, 1}});
	auto t = make_truth(h, 1.0, 11);
	Rng rng{12};
	const Index n = 100000;
	const MultimodalDataset d = simulate_dataset(t, n, rng);
	const Matrix C = d.Z->transpose() * (*d.Z) / static_cast<double>(n);
	EXPECT_LT((C - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 5.0 * std::sqrt(2.0 / n));
}

TEST(SimulateDataset, CrossStructureDecorrelation)
{
	const Hierarchy h = build_hierarchy({6, 6, 6}, 1);
	auto t = make_truth(h, 1.0, 13);
	Rng rng{14};
	const Index n = 100000;
	const MultimodalDataset d = simulate_dataset(t, n, rng);
	const Matrix C = d.Z->transpose() * (*d.Z) / static_cast<double>(n);
	double worst = 0.0;
	for (int s = 0; s < h.num_structures(); ++s)
		for (int u = 0; u < h.num_structures(); ++u)
			if (s != u)
				worst = std::max(worst, std::abs(C(s, u)));
	EXPECT_LT(worst, 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(SimulateDataset, TraceIdentityAtPaperScale)
{
	const Hierarchy h = build_hierarchy({300, 500, 800}, 10);
	auto t = make_truth(h, 10.0, 15);
	Rng rng{16};
	const MultimodalDataset data = simulate_dataset(t, 5000, rng);
	const double d = static_cast<double>(h.d());
	const double emp = data.X.rowwise().squaredNorm().mean() / d;
	const double expect = t->W.squaredNorm() / d + 10.0;
	EXPECT_LT(std::abs(emp - expect) / expect, 0.05);
}

TEST(SimulateDataset, DeterministicAndPrefixStable)
{
	const Hierarchy h = build_hierarchy({5, 6, 7}, 1);
	auto t = make_truth(h, 0.5, 17);
	Rng a{18}, b{18}, c{18};
	const MultimodalDataset d1 = simulate_dataset(t, 100, a);
	const MultimodalDataset d2 = simulate_dataset(t, 100, b);
	const MultimodalDataset d3 = simulate_dataset(t, 200, c);
	EXPECT_TRUE((d1.X.array() == d2.X.array()).all());
	EXPECT_TRUE((d1.X.array() == d3.X.topRows(100).array()).all());
}

TEST(SimulateDataset, AlternativeLatentsHaveUnitVariance)
{
	const Hierarchy h = build_hierarchy({4, 4}, 1);
	auto t = make_truth(h, 0.0, 19);
	for (auto dist : {LatentDistribution::rademacher, LatentDistribution::uniform}) {
		Rng rng{20};
		const MultimodalDataset d = simulate_dataset(t, 50000, rng, dist);
		const Matrix C = d.Z->transpose() * (*d.Z) / 50000.0;
		EXPECT_LT((C - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.03);
	}
}

TEST(SimulateDownstream, NoiselessResponseIsFirstLatent)
{
	const Hierarchy h = build_hierarchy({5, 6, 7}, 1);
	auto t = make_truth(h, 0.5, 21);
	Rng rng{22};
	const Vector e1 = Vector::Unit(h.r(), 0);
	const DownstreamDataset d = simulate_downstream(*t, e1, 0.0, 30, rng);
	EXPECT_TRUE((d.y - d.Ztilde.col(0)).isZero(0));
	EXPECT_THROW(simulate_downstream(*t, Vector::Zero(3), 0.1, 30, rng), ShapeError);
	EXPECT_THROW(simulate_downstream(*t, e1, 0.1, 1, rng), PreconditionError);
}

TEST(SimulateDownstream, SphereDrawHasUnitNorm)
{
	const Hierarchy h = build_hierarchy({30, 50, 80}, 2);
	auto t = make_truth(h, 0.1, 23);
	Rng rng{24};
	const DownstreamDataset d = simulate_downstream(*t, 0.1, 10, rng);
	EXPECT_NEAR(d.beta_star.norm(), 1.0, 1e-12);
}

TEST(SimulateDownstream, ResponseVarianceDecomposition)
{
	const Hierarchy h = build_hierarchy({6, 6, 6}, 1);
	auto t = make_truth(h, 0.1, 25);
	Rng rng{26};
	const Vector beta = draw_unit_sphere(h.r(), rng);
	const DownstreamDataset d = simulate_downstream(*t, beta, 0.1, 100000, rng);
	const double var = (d.y.array() - d.y.mean()).square().mean();
	const double expect = beta.squaredNorm() + 0.01;
	EXPECT_LT(std::abs(var - expect) / expect, 0.03);
	const Vector xi = d.y - d.Ztilde * beta;
	EXPECT_NEAR((xi.array() - xi.mean()).square().mean(), 0.01, 5.0 * 0.01 * std::sqrt(2.0 / 100000));
}

TEST(SimulateDownstream, BetaOnSupport)
{
	const Hierarchy h = build_hierarchy({30, 50, 80}, 2);
	Rng rng{27};
	const std::vector<int> sup{h.find({1, 2, 3}), h.find({1})};
	const Vector b = draw_beta_on_support(h, sup, rng);
	EXPECT_NEAR(b.norm(), 1.0, 1e-12);
	EXPECT_EQ(detail::active_set(h, b), (std::vector<int>{0, 4}));
}
