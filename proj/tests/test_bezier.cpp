#include <cmath>

#include <gtest/gtest.h>

#include <bmd/bezier.hpp>

#include "test_util.hpp"

using namespace bmd;

namespace {

/// Independent inversion: plain bisection over [0,1] on the generic
/// Bernstein sum, no warm start.
double oracle_y_at(const ControlPoints& cp, double x) {
    const std::array<Point, 4> p{cp.p0, cp.p1, cp.p2, cp.p3};
    auto eval = [&](double t) {
        Point out{0.0, 0.0};
        for (int i = 0; i <= 3; ++i) {
            const double binom = i == 0 || i == 3 ? 1.0 : 3.0;
            const double w = binom * std::pow(1.0 - t, 3 - i) * std::pow(t, i);
            out.x += w * p[static_cast<std::size_t>(i)].x;
            out.y += w * p[static_cast<std::size_t>(i)].y;
        }
        return out;
    };
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (eval(mid).x < x ? lo : hi) = mid;
    }
    return std::clamp(eval(0.5 * (lo + hi)).y, 0.0, 1.0);
}

} // namespace

TEST(Bernstein, EndpointsAnchored) {
    Rng rng = make_rng(1);
    for (int i = 0; i < 20; ++i) {
        const auto cp = random_curve(rng);
        const auto a = bernstein_eval(cp, 0.0);
        const auto b = bernstein_eval(cp, 1.0);
        EXPECT_EQ(a.x, 0.0);
        EXPECT_EQ(a.y, 0.0);
        EXPECT_EQ(b.x, 1.0);
        EXPECT_EQ(b.y, 1.0);
    }
}

TEST(Bernstein, HandEvaluatedMidpoint) {
    const auto cp = ControlPoints::from_inner(1.0 / 3.0, 0.8, 2.0 / 3.0, 0.9);
    const auto p = bernstein_eval(cp, 0.5);
    EXPECT_NEAR(p.x, 0.5, 1e-12);
    EXPECT_NEAR(p.y, 0.7625, 1e-12);
}

TEST(Bernstein, RejectsParameterOutsideUnitInterval) {
    EXPECT_THROW(bernstein_eval(ControlPoints::identity(), -0.01), std::domain_error);
    EXPECT_THROW(bernstein_eval(ControlPoints::identity(), 1.01), std::domain_error);
}

TEST(Bernstein, CurveInsideConvexHullAndXMonotone) {
    Rng rng = make_rng(2);
    for (int c = 0; c < 50; ++c) {
        const auto cp = random_curve(rng);
        const double xmin = std::min({cp.p0.x, cp.p1.x, cp.p2.x, cp.p3.x});
        const double xmax = std::max({cp.p0.x, cp.p1.x, cp.p2.x, cp.p3.x});
        const double ymin = std::min({cp.p0.y, cp.p1.y, cp.p2.y, cp.p3.y});
        const double ymax = std::max({cp.p0.y, cp.p1.y, cp.p2.y, cp.p3.y});
        double prev = -1.0;
        for (int i = 0; i < 1024; ++i) {
            const auto p = bernstein_eval(cp, i / 1023.0);
            EXPECT_GE(p.x, xmin - 1e-12);
            EXPECT_LE(p.x, xmax + 1e-12);
            EXPECT_GE(p.y, ymin - 1e-12);
            EXPECT_LE(p.y, ymax + 1e-12);
            EXPECT_GE(p.x, prev);
            prev = p.x;
        }
    }
}

TEST(ControlPointsType, InvalidOrderingRejected) {
    EXPECT_THROW(ControlPoints::from_inner(0.7, 0.2, 0.3, 0.5).validate(), std::invalid_argument);
    EXPECT_THROW(ControlPoints::from_inner(0.2, 1.2, 0.3, 0.5).validate(), std::invalid_argument);
    EXPECT_NO_THROW(ControlPoints::from_inner(0.3, 0.2, 0.3, 0.5).validate());
}

TEST(Lut, IdentityCurveIsIdentityTable) {
    const auto lut = build_lut(ControlPoints::identity());
    ASSERT_EQ(lut.resolution(), 1024);
    for (int q = 0; q < 1024; ++q) {
        EXPECT_NEAR(lut.values[static_cast<std::size_t>(q)], q / 1023.0, 1e-6);
    }
}

TEST(Lut, Resolution256HasAnchoredEndpoints) {
    Rng rng = make_rng(3);
    const auto lut = build_lut(random_curve(rng), 256);
    ASSERT_EQ(lut.resolution(), 256);
    EXPECT_NEAR(lut.values.front(), 0.0, 1e-6);
    EXPECT_NEAR(lut.values.back(), 1.0, 1e-6);
    EXPECT_THROW(build_lut(ControlPoints::identity(), 100), std::invalid_argument);
}

TEST(Lut, AgreesWithBisectionOracle) {
    Rng rng = make_rng(4);
    for (int c = 0; c < 20; ++c) {
        const auto cp = random_curve(rng);
        const auto lut = build_lut(cp);
        for (int q = 1; q < 1023; q += 7) {
            EXPECT_NEAR(lut.values[static_cast<std::size_t>(q)], oracle_y_at(cp, q / 1023.0), 1e-3);
        }
    }
}

TEST(Lut, NondecreasingWhenControlYIsNondecreasing) {
    const auto cp = ControlPoints::from_inner(0.2, 0.3, 0.6, 0.4);
    const auto lut = build_lut(cp);
    for (std::size_t q = 1; q < lut.values.size(); ++q) {
        EXPECT_GE(lut.values[q], lut.values[q - 1] - 1e-12);
    }
}

TEST(Transform, IdentityLutPreservesImage) {
    Rng rng = make_rng(5);
    const auto img = test::random_image(8, 8, rng);
    const auto out = apply_transform(img, build_lut(ControlPoints::identity()));
    for (std::size_t i = 0; i < img.size(); ++i) {
        EXPECT_NEAR(out[i], img[i], 1.0 / 1024.0);
    }
}

TEST(Transform, ZeroImageMapsToFirstEntry) {
    Rng rng = make_rng(6);
    const auto lut = build_lut(random_curve(rng));
    for (double v : apply_transform(ImageGrid(3, 3, 0.0), lut)) {
        EXPECT_EQ(v, lut.values.front());
    }
}

TEST(Transform, RandomImageMatchesParametricInversion) {
    Rng rng = make_rng(7);
    for (int c = 0; c < 10; ++c) {
        const auto cp = random_curve(rng);
        const auto img = test::random_image(8, 8, rng);
        const auto out = apply_transform(img, build_lut(cp));
        for (std::size_t i = 0; i < img.size(); ++i) {
            EXPECT_LT(std::abs(out[i] - oracle_y_at(cp, img[i])), 2e-3);
        }
    }
}

TEST(Transform, MonotoneLutGivesMonotoneMap) {
    const auto lut = build_lut(ControlPoints::from_inner(0.1, 0.5, 0.5, 0.95));
    double prev = -1.0;
    for (int i = 0; i <= 500; ++i) {
        const double v = lut(i / 500.0);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(RandomCurve, AlwaysValidAndSeeded) {
    Rng a = make_rng(8);
    Rng b = make_rng(8);
    for (int i = 0; i < 200; ++i) {
        const auto cp = random_curve(a);
        EXPECT_TRUE(cp.valid());
        EXPECT_EQ(cp, random_curve(b));
    }
}

TEST(RandomCurve, InnerYIsUniform) {
    Rng rng = make_rng(9);
    double sum = 0.0;
    for (int i = 0; i < 1000; ++i) {
        sum += random_curve(rng).p1.y;
    }
    EXPECT_GE(sum / 1000.0, 0.45);
    EXPECT_LE(sum / 1000.0, 0.55);
}

TEST(CurveJson, RoundTrip) {
    const auto cp = ControlPoints::from_inner(0.1, 0.25, 0.75, 0.9);
    const nlohmann::json j = cp;
    EXPECT_EQ(j.at("p1").at(0).get<double>(), 0.1);
    EXPECT_EQ(j.get<ControlPoints>(), cp);
}
