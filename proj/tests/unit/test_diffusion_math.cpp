#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gdistill/diffusion_math.hpp"
#include "gdistill/rng.hpp"

using namespace gdistill;

namespace {

std::vector<double> normals(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

std::vector<double> uniforms(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform();
    return v;
}

} // namespace

TEST(NoiseSchedule, AlphaBarStrictlyDecreasingInsideUnitInterval) {
    const NoiseSchedule s;
    EXPECT_EQ(s.timesteps(), 1000);
    EXPECT_LT(s.alpha_bar(1), 1.0);
    EXPECT_NEAR(s.alpha_bar(1), 1.0 - 8.5e-4, 1e-15);
    EXPECT_GT(s.alpha_bar(1000), 0.0);
    for (int t = 2; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(NoiseSchedule, AlphaBarIsProductOfOneMinusBeta) {
    const NoiseSchedule s(10, 0.01, 0.1);
    double prod = 1.0;
    for (int t = 1; t <= 10; ++t) {
        prod *= 1.0 - (0.01 + 0.01 * (t - 1));
        EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
    }
}

TEST(NoiseSchedule, OutOfRangeTimestepRejected) {
    const NoiseSchedule s;
    EXPECT_THROW(s.alpha_bar(0), InvalidParameter);
    EXPECT_THROW(s.alpha_bar(1001), InvalidParameter);
    std::vector<double> x(3, 0.0);
    EXPECT_THROW(add_noise<double>(x, 0, x, s), InvalidParameter);
}

TEST(NoiseSchedule, FractionMapsToRoundedTimestep) {
    const NoiseSchedule s;
    EXPECT_EQ(s.timestep_from_fraction(0.5), 500);
    EXPECT_EQ(s.timestep_from_fraction(0.0004), 1);
    EXPECT_EQ(s.timestep_from_fraction(0.9999), 1000);
    EXPECT_EQ(s.timestep_from_fraction(0.0206), 21);
    EXPECT_THROW(s.timestep_from_fraction(0.0), InvalidParameter);
    EXPECT_THROW(s.timestep_from_fraction(1.0), InvalidParameter);
}

TEST(NoiseSchedule, JsonRoundTrip) {
    const NoiseSchedule s(500, 1e-4, 2e-2);
    const nlohmann::json j = s.to_json();
    EXPECT_EQ(j.at("kind"), "linear");
    EXPECT_EQ(j.at("T"), 500);
    EXPECT_EQ(NoiseSchedule::from_json(j), s);
    EXPECT_THROW(NoiseSchedule::from_json({{"T", 10}, {"beta_start", 0.5}, {"beta_end", 0.1}}), ConfigError);
    EXPECT_THROW(NoiseSchedule::from_json({{"T", 10}, {"beta_start", 0.1}, {"beta_end", 0.2}, {"kind", "cosine"}}),
                 ConfigError);
}

TEST(AddNoise, Limits) {
    const std::vector<double> x{0.1, 0.7, -0.3}, eps{1.5, -0.2, 0.4};
    EXPECT_EQ(add_noise<double>(x, eps, 1.0), x);
    EXPECT_EQ(add_noise<double>(x, eps, 0.0), eps);
    const std::vector<double> one{1.0}, zero{0.0};
    EXPECT_DOUBLE_EQ(add_noise<double>(one, zero, 0.25)[0], 0.5);
}

TEST(AddNoise, ShapeMismatchRejected) {
    const std::vector<double> a(3), b(4);
    EXPECT_THROW(add_noise<double>(a, b, 0.5), InvalidParameter);
}

TEST(DenoiseOneStep, InvertsAddNoiseWhenPredictionIsExact) {
    const NoiseSchedule s;
    Rng rng(1);
    for (int t : {1, 2, 10, 250, 500, 999, 1000}) {
        const auto x = uniforms(rng, 64), eps = normals(rng, 64);
        const auto xt = add_noise<double>(x, t, eps, s);
        const auto xh = denoise_one_step<double>(xt, eps, t, s);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(xh[i], x[i], 1e-10) << "t=" << t;
    }
}

TEST(DenoiseOneStep, ZeroPredictionRescales) {
    const std::vector<double> xt{0.3, -0.6}, zero(2, 0.0);
    const auto xh = denoise_one_step<double>(xt, zero, 0.36);
    EXPECT_DOUBLE_EQ(xh[0], 0.5);
    EXPECT_DOUBLE_EQ(xh[1], -1.0);
}

TEST(DenoiseOneStep, DegenerateAlphaBarRejected) {
    const std::vector<double> v(2, 0.0);
    EXPECT_THROW(denoise_one_step<double>(v, v, 1e-9), DegenerateTimestep);
    EXPECT_THROW(denoise_one_step<double>(v, v, 0.0), DegenerateTimestep);
}

TEST(DenoiseOneStep, ResidualIdentity) {
    const NoiseSchedule s;
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int t = 1 + static_cast<int>(rng.uniform_index(1000));
        const double ab = s.alpha_bar(t);
        const auto x = uniforms(rng, 16), eps = normals(rng, 16), eps_hat = normals(rng, 16);
        const auto xh = denoise_one_step<double>(add_noise<double>(x, t, eps, s), eps_hat, t, s);
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(eps_hat[i] - eps[i], std::sqrt(ab) / std::sqrt(1 - ab) * (x[i] - xh[i]), 1e-10);
        }
    }
}

TEST(ApplyCfg, Examples) {
    const std::vector<double> u{0.1, -0.4}, c{0.9, 0.2};
    const auto one = apply_cfg<double>(u, c, 1.0);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(one[i], c[i], 1e-15);
    EXPECT_EQ(apply_cfg<double>(u, c, 0.0), u);
    const std::vector<double> z{0.0}, o{1.0};
    EXPECT_DOUBLE_EQ(apply_cfg<double>(z, o, 7.5)[0], 7.5);
    EXPECT_THROW(apply_cfg<double>(u, c, -1.0), InvalidParameter);
}

TEST(ApplyCfgProperty, IdenticalInputsAreFixedPoint) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = normals(rng, 8);
        EXPECT_EQ(apply_cfg<double>(a, a, rng.uniform(0, 200)), a);
    }
}

TEST(SdsGradient, Examples) {
    const NoiseSchedule s;
    const std::vector<double> e{0.3, -1.2};
    for (double v : sds_gradient<double>(e, e, 500, s, {})) EXPECT_EQ(v, 0.0);
    const std::vector<double> eh{0.5, -1.0};
    for (double v : sds_gradient<double>(eh, e, 500, s, {})) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(SdsGradientProperty, AntisymmetricUnderSwap) {
    const NoiseSchedule s;
    Rng rng(4);
    for (auto w : {SdsWeights{SdsWeighting::ConstantOne}, SdsWeights{SdsWeighting::OneMinusAlphaBar}}) {
        for (int trial = 0; trial < 100; ++trial) {
            const int t = 1 + static_cast<int>(rng.uniform_index(1000));
            const auto a = normals(rng, 8), b = normals(rng, 8);
            const auto g1 = sds_gradient<double>(a, b, t, s, w), g2 = sds_gradient<double>(b, a, t, s, w);
            for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(g1[i], -g2[i]);
        }
    }
}

TEST(L2ReparamGradient, Examples) {
    const std::vector<double> x{0.2, 0.9}, xh{0.5, 0.4};
    for (double v : l2_reparam_gradient<double>(x, x, 0.5, {})) EXPECT_EQ(v, 0.0);
    const auto g = l2_reparam_gradient<double>(x, xh, 0.5, {});
    EXPECT_NEAR(g[0], -0.3, 1e-15);
    EXPECT_NEAR(g[1], 0.5, 1e-15);
    EXPECT_THROW(l2_reparam_gradient<double>(x, xh, 0.0, {}), DegenerateTimestep);
    EXPECT_THROW(l2_reparam_gradient<double>(x, xh, 1.0, {}), DegenerateTimestep);
}

TEST(L2Scale, MatchesDefinition) {
    EXPECT_DOUBLE_EQ(l2_scale(0.5, {}), 1.0);
    EXPECT_NEAR(l2_scale(0.8, {}), 2.0, 1e-15);
    EXPECT_NEAR(l2_scale(0.8, {SdsWeighting::OneMinusAlphaBar}), 0.4, 1e-15);
}

TEST(SdsWeights, ParseAndName) {
    EXPECT_EQ(SdsWeights::parse("constant").kind, SdsWeighting::ConstantOne);
    EXPECT_EQ(SdsWeights::parse("one_minus_alpha_bar").name(), "one_minus_alpha_bar");
    EXPECT_THROW(SdsWeights::parse("snr"), ConfigError);
    const NoiseSchedule s;
    for (int t = 1; t <= 1000; ++t) {
        EXPECT_GT(SdsWeights{SdsWeighting::OneMinusAlphaBar}(s.alpha_bar(t)), 0.0);
    }
}

TEST(SdsEquivalence, BothGradientPathsAgreeOnRandomInputs) {
    const NoiseSchedule s;
    Rng rng(5);
    for (auto w : {SdsWeights{SdsWeighting::ConstantOne}, SdsWeights{SdsWeighting::OneMinusAlphaBar}}) {
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            const int t = 1 + static_cast<int>(rng.uniform_index(1000));
            const auto x = uniforms(rng, 12), eps = normals(rng, 12), eps_hat = normals(rng, 12);
            const auto xh = denoise_one_step<double>(add_noise<double>(x, t, eps, s), eps_hat, t, s);
            const auto a = sds_gradient<double>(eps_hat, eps, t, s, w);
            const auto b = l2_reparam_gradient<double>(x, xh, t, s, w);
            for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
        }
        EXPECT_LT(worst, 1e-9) << w.name();
    }
}
