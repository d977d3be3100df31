#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ovtrack;
using namespace ovtrack::testing_support;

TEST(FbConsistency, ExactInverseFlowsAreFullyConsistent) {
    const auto m = rect_mask(64, 48, 20, 10, 35, 30);
    const auto r = fb_consistency(m, constant_flow(64, 48, {5, 0}), constant_flow(64, 48, {-5, 0}));
    EXPECT_EQ(r.foreground_count, m.area());
    EXPECT_EQ(r.consistent_count, m.area());
    EXPECT_DOUBLE_EQ(r.ratio, 1.0);
    EXPECT_EQ(rle_encode(r.consistent), m);
}

TEST(FbConsistency, FlowLeavingTheImageIsInconsistent) {
    const auto m = rect_mask(40, 30, 5, 5, 15, 15);
    const auto r = fb_consistency(m, constant_flow(40, 30, {100, 0}), constant_flow(40, 30, {-100, 0}));
    EXPECT_DOUBLE_EQ(r.ratio, 0.0);
}

TEST(FbConsistency, BorderExitMatchesPerPixelSimulation) {
    const int W = 40, H = 20;
    const auto m = rect_mask(W, H, 30, 4, 40, 12);  // touches the right border
    const auto r = fb_consistency(m, constant_flow(W, H, {5, 0}), constant_flow(W, H, {-5, 0}));
    // Brute force: a pixel survives iff its center plus 5 stays left of W.
    const Bitmap fg = rle_decode(m);
    std::size_t n = 0, k = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (fg.at(x, y)) {
                ++n;
                if (x + 0.5 + 5 >= W) ++k;
            }
    EXPECT_EQ(n, 80u);
    EXPECT_EQ(k, 40u);
    EXPECT_DOUBLE_EQ(r.ratio, static_cast<double>(n - k) / n);
}

TEST(FbConsistency, ReturnPointOutsideMaskIsInconsistent) {
    // Backward flow does not undo the forward step: returns land 6 px right.
    const auto m = rect_mask(40, 20, 10, 5, 14, 9);
    const auto r = fb_consistency(m, constant_flow(40, 20, {3, 0}), constant_flow(40, 20, {3, 0}));
    EXPECT_DOUBLE_EQ(r.ratio, 0.0);
}

TEST(FbConsistency, DimensionMismatchRejected) {
    EXPECT_THROW(fb_consistency(BinaryMask(10, 10), FlowField(10, 10), FlowField(10, 9)), InvalidInput);
}

TEST(FbConsistency, RatioDoesNotGrowAsOccluderCoversMore) {
    // A static target; an occluder at different stages of sliding over it.
    double prev = 2.0;
    for (int cover = 0; cover <= 20; cover += 4) {
        sim::SceneConfig c;
        c.width = 80;
        c.height = 40;
        c.frames = 2;
        sim::SceneObject target;
        target.box = {30, 10, 50, 30};
        target.depth = 0;
        sim::SceneObject occ;
        occ.box = {10 + cover - 4.0, 5, 30 + cover - 4.0, 35};
        occ.depth = 1;
        sim::MotionSpec mv;
        mv.vx = 4;
        occ.script = {mv};
        c.objects = {target, occ};
        const auto st = sim::generate(c);
        if (st.visible[0][0].empty()) break;
        const double ratio = fb_consistency(st.visible[0][0], st.fwd[0], st.bwd[0]).ratio;
        EXPECT_LE(ratio, prev + 1e-12) << "cover " << cover;
        prev = ratio;
    }
    EXPECT_LT(prev, 1.0);
}

TEST(FitTransform, PureTranslation) {
    std::vector<Vec2> pts{{1.5, 2.5}, {4.5, 2.5}, {3.5, 7.5}}, d(3, {5, 3});
    const auto t = fit_transform(pts, d);
    ASSERT_TRUE(t);
    EXPECT_NEAR(t->ax, 1, 1e-12);
    EXPECT_NEAR(t->bx, 5, 1e-12);
    EXPECT_NEAR(t->ay, 1, 1e-12);
    EXPECT_NEAR(t->by, 3, 1e-12);
}

TEST(FitTransform, ZeroFlowIsIdentity) {
    std::vector<Vec2> pts{{0.5, 0.5}, {9.5, 3.5}, {2.5, 8.5}}, d(3, {0, 0});
    const auto t = fit_transform(pts, d);
    ASSERT_TRUE(t);
    EXPECT_NEAR(t->ax, 1, 1e-12);
    EXPECT_NEAR(t->bx, 0, 1e-12);
    EXPECT_NEAR(t->ay, 1, 1e-12);
    EXPECT_NEAR(t->by, 0, 1e-12);
}

TEST(FitTransform, ScalingAboutCentroidMatchesRegressionCoefficients) {
    std::vector<Vec2> pts;
    for (int y = 10; y < 20; ++y)
        for (int x = 30; x < 45; ++x) pts.push_back({x + 0.5, y + 0.5});
    Vec2 c{};
    for (auto p : pts) {
        c.x += p.x;
        c.y += p.y;
    }
    c.x /= pts.size();
    c.y /= pts.size();
    std::vector<Vec2> d;
    for (auto p : pts) d.push_back({0.1 * (p.x - c.x), 0.1 * (p.y - c.y)});
    // Textbook simple linear regression of target on coordinate.
    auto regress = [&](auto coord, auto target) {
        double mx = 0, my = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            mx += coord(i);
            my += target(i);
        }
        mx /= pts.size();
        my /= pts.size();
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sxy += (coord(i) - mx) * (target(i) - my);
            sxx += (coord(i) - mx) * (coord(i) - mx);
        }
        const double slope = sxy / sxx;
        return std::pair{slope, my - slope * mx};
    };
    const auto [ax, bx] = regress([&](std::size_t i) { return pts[i].x; },
                                  [&](std::size_t i) { return pts[i].x + d[i].x; });
    const auto [ay, by] = regress([&](std::size_t i) { return pts[i].y; },
                                  [&](std::size_t i) { return pts[i].y + d[i].y; });
    const auto t = fit_transform(pts, d);
    ASSERT_TRUE(t);
    EXPECT_NEAR(t->ax, ax, 1e-9);
    EXPECT_NEAR(t->bx, bx, 1e-9);
    EXPECT_NEAR(t->ay, ay, 1e-9);
    EXPECT_NEAR(t->by, by, 1e-9);
    EXPECT_NEAR(t->ax, 1.1, 1e-9);
    EXPECT_NEAR(t->bx, -0.1 * c.x, 1e-9);
    EXPECT_NEAR(t->ay, 1.1, 1e-9);
    EXPECT_NEAR(t->by, -0.1 * c.y, 1e-9);

    // The warped box corners follow x' = 1.1 x - 0.1 c.x directly.
    const BBox b{30, 10, 45, 20};
    const auto w = warp_box(b, *t, 1000, 1000);
    ASSERT_TRUE(w);
    EXPECT_NEAR(w->x0, 1.1 * b.x0 - 0.1 * c.x, 1e-9);
    EXPECT_NEAR(w->x1, 1.1 * b.x1 - 0.1 * c.x, 1e-9);
    EXPECT_NEAR(w->y0, 1.1 * b.y0 - 0.1 * c.y, 1e-9);
    EXPECT_NEAR(w->y1, 1.1 * b.y1 - 0.1 * c.y, 1e-9);
}

TEST(FitTransform, NoSupportSignalsNothing) {
    EXPECT_FALSE(fit_transform(std::vector<Vec2>{}, std::vector<Vec2>{}));
}

TEST(FitTransform, LengthMismatchRejected) {
    EXPECT_THROW(fit_transform(std::vector<Vec2>{{1, 1}}, std::vector<Vec2>{}), InvalidInput);
}

TEST(FitTransform, DegenerateColumnFallsBackToShift) {
    // Single column: x scale unobservable, y still fitted.
    std::vector<Vec2> pts{{4.5, 1.5}, {4.5, 2.5}, {4.5, 3.5}};
    std::vector<Vec2> d{{1.0, 0.0}, {2.0, 0.5}, {3.0, 1.0}};
    const auto t = fit_transform(pts, d);
    ASSERT_TRUE(t);
    EXPECT_DOUBLE_EQ(t->ax, 1.0);
    EXPECT_NEAR(t->bx, 2.0, 1e-12);
    EXPECT_NEAR(t->ay, 1.5, 1e-12);
}

TEST(FitTransform, OrientationFlipFallsBackToShift) {
    // Displacements that would mirror the x axis.
    std::vector<Vec2> pts{{0.5, 0.5}, {1.5, 1.5}, {2.5, 2.5}};
    std::vector<Vec2> d{{2.0, 0}, {0.0, 0}, {-2.0, 0}};
    const auto t = fit_transform(pts, d);
    ASSERT_TRUE(t);
    EXPECT_GT(t->ax, 0);
    EXPECT_DOUBLE_EQ(t->ax, 1.0);
    EXPECT_NEAR(t->bx, 0.0, 1e-12);
}

TEST(FitTransform, TranslationEquivariantScales) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 50), n(-1, 1);
    for (int k = 0; k < 100; ++k) {
        std::vector<Vec2> pts, d;
        for (int i = 0; i < 30; ++i) {
            pts.push_back({u(rng), u(rng)});
            d.push_back({n(rng) + 0.05 * pts.back().x, n(rng) + 0.03 * pts.back().y});
        }
        const double su = u(rng) - 25, sv = u(rng) - 25;
        std::vector<Vec2> shifted;
        for (auto p : pts) shifted.push_back({p.x + su, p.y + sv});
        const auto a = fit_transform(pts, d), b = fit_transform(shifted, d);
        ASSERT_TRUE(a && b);
        EXPECT_NEAR(a->ax, b->ax, 1e-9);
        EXPECT_NEAR(a->ay, b->ay, 1e-9);
    }
}

TEST(WarpBox, IdentityAndTranslation) {
    const BBox b{0, 0, 10, 10};
    EXPECT_EQ(*warp_box(b, MotionTransform{}, 100, 100), b);
    EXPECT_EQ(*warp_box(b, MotionTransform{1, 5, 1, 3}, 100, 100), (BBox{5, 3, 15, 13}));
}

TEST(WarpBox, ClipsAndSignalsLeftFrame) {
    EXPECT_EQ(*warp_box({90, 0, 99, 10}, MotionTransform{1, 5, 1, 0}, 100, 100), (BBox{95, 0, 100, 10}));
    EXPECT_FALSE(warp_box({90, 0, 99, 10}, MotionTransform{1, 20, 1, 0}, 100, 100));
}

TEST(WarpBox, PositiveScalesKeepBoxesValid) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> s(0.5, 2), o(-20, 20), c(0, 80);
    for (int k = 0; k < 1000; ++k) {
        const double x0 = c(rng), y0 = c(rng);
        const BBox b{x0, y0, x0 + c(rng) / 4, y0 + c(rng) / 4};
        const auto w = warp_box(b, MotionTransform{s(rng), o(rng), s(rng), o(rng)}, 100, 100);
        if (!w) continue;
        EXPECT_TRUE(w->valid());
        EXPECT_GE(w->x0, 0);
        EXPECT_LE(w->x1, 100);
    }
}

TEST(MotionSupport, CollectsConsistentPixelCenters) {
    const auto m = rect_mask(20, 10, 2, 2, 4, 3);
    const auto fwd = constant_flow(20, 10, {1, 0});
    const auto r = fb_consistency(m, fwd, constant_flow(20, 10, {-1, 0}));
    const auto s = collect_support(r, fwd);
    ASSERT_EQ(s.points.size(), 2u);
    EXPECT_EQ(s.points[0], (Vec2{2.5, 2.5}));
    EXPECT_EQ(s.points[1], (Vec2{3.5, 2.5}));
    EXPECT_EQ(s.displacements[1], (Vec2{1, 0}));
}
