#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bpa/generalize.hpp"
#include "bpa/mountain_car.hpp"
#include "bpa/selfdrive.hpp"

using bpa::ClusterId;
using bpa::GeneralizerKind;
using bpa::GeneralizerSpec;
using bpa::StateVector;

namespace {

GeneralizerSpec kmeans_spec(int k) {
    GeneralizerSpec s;
    s.kind = GeneralizerKind::kmeans;
    s.k = k;
    s.warmup_samples = static_cast<std::size_t>(k);
    return s;
}

// Brute force: the 2-partition of `pts` with least within-cluster squared error.
std::pair<StateVector, StateVector> best_two_partition(const std::vector<StateVector>& pts) {
    double best = std::numeric_limits<double>::infinity();
    std::pair<StateVector, StateVector> out;
    const std::size_t n = pts.size();
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        StateVector m[2] = {StateVector(2, 0.0), StateVector(2, 0.0)};
        int c[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1u;
            ++c[g];
            for (int d = 0; d < 2; ++d) m[g][d] += pts[i][d];
        }
        for (int g = 0; g < 2; ++g)
            for (int d = 0; d < 2; ++d) m[g][d] /= c[g];
        double sse = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const int g = (mask >> i) & 1u;
            for (int d = 0; d < 2; ++d) sse += (pts[i][d] - m[g][d]) * (pts[i][d] - m[g][d]);
        }
        if (sse < best) {
            best = sse;
            out = {m[0], m[1]};
        }
    }
    return out;
}

}  // namespace

TEST(KMeans, MatchesBruteForcePartition) {
    const std::vector<StateVector> pts{{0, 0}, {0, 0.1}, {10, 10}, {10, 10.1}};
    const auto [a, b] = best_two_partition(pts);
    auto rng = bpa::derive_stream(1, "generalizer");
    const auto g = bpa::fit(kmeans_spec(2), pts, rng);
    ASSERT_EQ(g.cluster_count(), 2u);
    auto c = g.kmeans_model().raw_centroids();
    if (c[0][0] > c[1][0]) std::swap(c[0], c[1]);
    const auto& lo = a[0] < b[0] ? a : b;
    const auto& hi = a[0] < b[0] ? b : a;
    for (int d = 0; d < 2; ++d) {
        EXPECT_NEAR(c[0][d], lo[d], 1e-9);
        EXPECT_NEAR(c[1][d], hi[d], 1e-9);
    }
    EXPECT_NEAR(lo[1], 0.05, 1e-12);
    EXPECT_NEAR(hi[1], 10.05, 1e-12);

    // (1,1) is nearest the centroid near the origin.
    EXPECT_EQ(g.assign({1, 1}), g.assign({0, 0.05}));
    EXPECT_NE(g.assign({1, 1}), g.assign({10, 10.05}));
}

TEST(KMeans, RefitWithSameSeedReproducesCentroids) {
    auto src = bpa::derive_stream(2, "samples");
    std::vector<StateVector> pts;
    for (int i = 0; i < 2000; ++i) pts.push_back({src.uniform(-1.2, 0.6), src.uniform(-0.07, 0.07)});
    auto r1 = bpa::derive_stream(5, "generalizer");
    auto r2 = bpa::derive_stream(5, "generalizer");
    const auto g1 = bpa::fit(kmeans_spec(16), pts, r1);
    const auto g2 = bpa::fit(kmeans_spec(16), pts, r2);
    EXPECT_EQ(g1.kmeans_model().centroids(), g2.kmeans_model().centroids());
    for (const auto& p : pts) ASSERT_LT(g1.assign(p).value, 16u);
}

TEST(KMeans, TooFewDistinctSamplesFaults) {
    const std::vector<StateVector> pts{{1, 1}, {1, 1}, {1, 1}};
    auto rng = bpa::derive_stream(1, "generalizer");
    auto spec = kmeans_spec(2);
    spec.warmup_samples = 3;
    EXPECT_THROW(bpa::fit(spec, pts, rng), bpa::Fault);
}

TEST(KMeans, TiesGoToLowestCentroid) {
    bpa::KMeansModel m({{0.0}, {1.0}}, {0.0}, {1.0});
    EXPECT_EQ(m.assign({0.5}), 0u);
}

TEST(Grid, MountainCarCorners) {
    GeneralizerSpec s;
    s.kind = GeneralizerKind::uniform_grid;
    s.bins_per_dim = {20, 20};
    auto rng = bpa::derive_stream(1, "generalizer");
    const auto g = bpa::fit(s, {}, rng, {}, bpa::mountain_car::bounds());
    EXPECT_EQ(g.cluster_count(), 400u);
    EXPECT_EQ(g.assign({-1.2, -0.07}).value, 0u);
    EXPECT_EQ(g.assign({0.6, 0.07}).value, 399u);
    // Out of range clamps.
    EXPECT_EQ(g.assign({-5.0, -1.0}).value, 0u);
    EXPECT_EQ(g.assign({5.0, 1.0}).value, 399u);
    // Row-major: x is the major index.
    EXPECT_EQ(g.assign({-1.2 + 0.09 * 1.5, -0.07}).value, 20u);
}

TEST(Identity, MatchesSelfDriveEncoding) {
    bpa::selfdrive::SelfDriveEnv env;
    bpa::IdentityEncoding enc{[&](const StateVector& s) { return env.discrete_state(s); }, env.discrete_state_count()};
    auto rng = bpa::derive_stream(1, "generalizer");
    const auto g = bpa::fit(GeneralizerSpec{}, {}, rng, enc);
    EXPECT_EQ(g.cluster_count(), 2304u);
    for (const auto& obs : bpa::selfdrive::all_observations())
        ASSERT_EQ(g.assign(bpa::selfdrive::to_features(obs)).value, bpa::selfdrive::encode(obs));
}

TEST(GeneralizerSpec, Validation) {
    GeneralizerSpec s;
    s.kind = GeneralizerKind::uniform_grid;
    EXPECT_THROW(s.validate(), bpa::ConfigError);
    s.bins_per_dim = {0};
    EXPECT_THROW(s.validate(), bpa::ConfigError);
    s = kmeans_spec(4);
    s.tolerance = 0.0;
    EXPECT_THROW(s.validate(), bpa::ConfigError);
}

TEST(GeneralizerFile, SaveLoadPreservesAssignments) {
    auto src = bpa::derive_stream(3, "samples");
    std::vector<StateVector> pts;
    for (int i = 0; i < 500; ++i) pts.push_back({src.uniform(-1.2, 0.6), src.uniform(-0.07, 0.07)});
    auto rng = bpa::derive_stream(3, "generalizer");
    const auto g = bpa::fit(kmeans_spec(8), pts, rng);
    const auto loaded = bpa::Generalizer::from_json(nlohmann::json::parse(g.to_json().dump()), {});
    for (const auto& p : pts) ASSERT_EQ(loaded.assign(p), g.assign(p));

    GeneralizerSpec gs;
    gs.kind = GeneralizerKind::uniform_grid;
    gs.bins_per_dim = {20, 20};
    const auto grid = bpa::fit(gs, {}, rng, {}, bpa::mountain_car::bounds());
    const auto grid_back = bpa::Generalizer::from_json(grid.to_json(), {});
    for (const auto& p : pts) ASSERT_EQ(grid_back.assign(p), grid.assign(p));
}
