#include <gtest/gtest.h>

#include <functional>

#include "test_support.hpp"

using namespace ovtrack;
using namespace ovtrack::testing_support;

namespace {

Detection det(double score, const std::string& label = "thing", int x = 0) {
    return {{double(x), 0, double(x + 2), 2}, rect_mask(64, 8, x, 0, x + 2, 2), score, label, std::nullopt};
}

/// Scripted provider: static frames, zero flow, answers from callbacks.
struct ScriptedProvider {
    int frames = 2, w = 40, h = 30;
    std::vector<std::vector<Detection>> dets;
    std::function<std::vector<MaskHypothesis>(int, const BBox&)> seg;
    FlowField zero{40, 30};
    bool fail_flow = false;

    int frame_count() const { return frames; }
    int width() const { return w; }
    int height() const { return h; }
    std::vector<Detection> detect(int t, std::span<const std::string>) const {
        return t < static_cast<int>(dets.size()) ? dets[t] : std::vector<Detection>{};
    }
    RefinedBox refine(int, const BBox& b, double) const { return {b, 1.0, false, std::nullopt}; }
    std::vector<MaskHypothesis> segment(int t, const BBox& b, int) const { return seg(t, b); }
    const FlowField& flow_fwd(int) const {
        if (fail_flow) throw LoadError("flow file unreadable");
        return zero;
    }
    const FlowField& flow_bwd(int) const { return zero; }
};
static_assert(PerceptionProvider<ScriptedProvider>);

sim::SceneObject square(BBox b, int depth, double vx, double vy, const std::string& label = "square") {
    sim::SceneObject o;
    o.box = b;
    o.depth = depth;
    o.label = label;
    sim::MotionSpec m;
    m.vx = vx;
    m.vy = vy;
    o.script = {m};
    return o;
}

TrackTable run_oracle(const sim::SceneConfig& c, const EngineConfig& cfg, TrackSet* out = nullptr) {
    const auto st = sim::generate(c);
    const sim::OracleProvider p(st, c.noise, c.seed, c.oracle);
    TrackSet ts = run(p, cfg);
    if (out) *out = ts;
    return to_table(ts, st.width, st.height);
}

}  // namespace

TEST(Init, ThresholdsOnConfidence) {
    const auto ts = init_tracks({det(0.9), det(0.4, "thing", 4)}, EngineConfig{}, 64, 8);
    ASSERT_EQ(ts.tracks.size(), 1u);
    EXPECT_DOUBLE_EQ(ts.tracks[0].objectness, 0.9);
    EXPECT_EQ(ts.tracks[0].state, TrackState::Active);
}

TEST(Init, EmptyDetectionsGiveEmptySet) { EXPECT_TRUE(init_tracks({}, EngineConfig{}, 64, 8).tracks.empty()); }

TEST(Init, CapKeepsHighestObjectness) {
    std::vector<Detection> dets;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    for (int i = 0; i < 12; ++i) dets.push_back(det(u(rng), "thing", 4 * i));
    EngineConfig cfg;
    cfg.max_tracks = 10;
    const auto ts = init_tracks(dets, cfg, 64, 8);
    std::vector<double> scores;
    for (const auto& d : dets) scores.push_back(d.objectness);
    std::sort(scores.rbegin(), scores.rend());
    scores.resize(10);
    std::vector<double> got;
    for (const auto& t : ts.tracks) got.push_back(t.objectness);
    EXPECT_EQ(got, scores);
}

TEST(Init, PromptedLabelsUseLowerThresholdAndExcludeOthers) {
    EngineConfig cfg;
    cfg.prompted_labels = {"square"};
    const auto ts = init_tracks({det(0.4, "square"), det(0.95, "disc", 10), det(0.2, "square", 20)}, cfg, 64, 8);
    ASSERT_EQ(ts.tracks.size(), 1u);
    EXPECT_EQ(ts.tracks[0].label, "square");
}

TEST(Init, BoxAdaptationUsesTightMaskBox) {
    Detection d = det(0.9);
    d.box = {0, 0, 5, 5};
    EngineConfig cfg;
    EXPECT_EQ(init_tracks({d}, cfg, 64, 8).tracks[0].last().box, (BBox{0, 0, 2, 2}));
    cfg.enable_box_adaptation = false;
    EXPECT_EQ(init_tracks({d}, cfg, 64, 8).tracks[0].last().box, (BBox{0, 0, 5, 5}));
}

TEST(Config, JsonRoundTripAndStrictness) {
    EngineConfig c;
    c.lambda_flow = 0.6;
    c.enable_refinement = false;
    c.prompted_labels = {"cat"};
    const EngineConfig back = engine_config_from_json(engine_config_to_json(c));
    EXPECT_EQ(engine_config_to_json(back), engine_config_to_json(c));
    EXPECT_THROW(engine_config_from_json(json{{"lambda_flw", 0.5}}), ConfigError);
    EXPECT_THROW(engine_config_from_json(json{{"lambda_c", "high"}}), ConfigError);
    EXPECT_THROW(engine_config_from_json(json{{"lambda_c", 1.5}}), ConfigError);
    EXPECT_THROW(engine_config_from_json(json{{"max_tracks", 0}}), ConfigError);
    EXPECT_THROW(engine_config_from_json(json{{"t_reid", -1}}), ConfigError);
    EXPECT_NO_THROW(engine_config_from_json(json{{"lambda_reid", 1.01}}));
}

TEST(Config, ObjectnessFloorDefaultsToConfidenceThreshold) {
    EngineConfig c;
    c.lambda_c = 0.42;
    EXPECT_DOUBLE_EQ(c.objectness_floor(), 0.42);
    c.lambda_obj = 0.1;
    EXPECT_DOUBLE_EQ(c.objectness_floor(), 0.1);
}

TEST(Step, ConstantTranslationFollowsGroundTruthExactly) {
    sim::SceneConfig c;
    c.width = 120;
    c.height = 60;
    c.frames = 12;
    c.objects = {square({10, 20, 30, 40}, 0, 5, 1)};
    const auto st = sim::generate(c);
    const sim::OracleProvider p(st, {}, 0);
    const TrackSet ts = run(p, EngineConfig{});
    ASSERT_EQ(ts.tracks.size(), 1u);
    ASSERT_EQ(ts.tracks[0].history.size(), 12u);
    for (const auto& f : ts.tracks[0].history) EXPECT_DOUBLE_EQ(mask_iou(f.mask, st.visible[f.frame][0]), 1.0);
}

TEST(Step, FullOcclusionTerminatesOnFlowInconsistency) {
    sim::SceneConfig c;
    c.width = 80;
    c.height = 30;
    c.frames = 2;
    c.objects = {square({40, 10, 50, 20}, 0, 0, 0), square({5, 5, 25, 25}, 1, 30, 0, "box")};
    const auto st = sim::generate(c);
    ASSERT_DOUBLE_EQ(st.visibility[1][0], 0.0);
    EXPECT_DOUBLE_EQ(fb_consistency(st.visible[0][0], st.fwd[0], st.bwd[0]).ratio, 0.0);
    const sim::OracleProvider p(st, {}, 0);
    const TrackSet ts = run(p, EngineConfig{});
    const Track& tr = ts.tracks[0];
    EXPECT_EQ(tr.label, "square");
    EXPECT_EQ(tr.state, TrackState::Terminated);
    EXPECT_EQ(tr.termination, TerminationReason::FlowInconsistent);
    EXPECT_EQ(tr.end_frame, 0);
}

TEST(Step, CycleConsistencyPicksHypothesisWhoseBackprojectionMatches) {
    ScriptedProvider p;
    const auto obj = rect_mask(40, 30, 10, 10, 16, 16);
    const auto neighbour = rect_mask(40, 30, 16, 10, 22, 16);
    const auto merged = rle_encode(bitmap_or(rle_decode(obj), rle_decode(neighbour)));
    p.dets = {{{{10, 10, 16, 16}, obj, 0.9, "a", std::nullopt}}};
    // Backprojection IoUs against the previous mask: 1.0 (correct) and 0.5 (merged).
    p.seg = [&](int, const BBox&) {
        return std::vector<MaskHypothesis>{{merged, merged, 0.99}, {obj, obj, 0.6}};
    };
    EXPECT_DOUBLE_EQ(mask_iou(merged, obj), 0.5);
    std::vector<SelectionEvent> sel;
    RunOptions opt;
    opt.selections = &sel;
    TrackSet ts = run(p, EngineConfig{}, opt);
    ASSERT_EQ(ts.tracks[0].history.size(), 2u);
    EXPECT_EQ(ts.tracks[0].history[1].mask, obj);
    ASSERT_EQ(sel.size(), 1u);
    EXPECT_EQ(sel[0].chosen, 1u);

    EngineConfig off;
    off.enable_cycle_consistency = false;
    ts = run(p, off);
    EXPECT_EQ(ts.tracks[0].history[1].mask, merged);
}

TEST(Step, EmptyHypothesisListTerminates) {
    ScriptedProvider p;
    p.dets = {{{{10, 10, 16, 16}, rect_mask(40, 30, 10, 10, 16, 16), 0.9, "a", std::nullopt}}};
    p.seg = [](int, const BBox&) { return std::vector<MaskHypothesis>{}; };
    const TrackSet ts = run(p, EngineConfig{});
    EXPECT_EQ(ts.tracks[0].termination, TerminationReason::EmptySegmentation);
}

TEST(Step, ProviderErrorsCarryFrameContext) {
    ScriptedProvider p;
    p.fail_flow = true;
    p.dets = {{{{10, 10, 16, 16}, rect_mask(40, 30, 10, 10, 16, 16), 0.9, "a", std::nullopt}}};
    p.seg = [](int, const BBox&) { return std::vector<MaskHypothesis>{}; };
    try {
        run(p, EngineConfig{});
        FAIL() << "expected an error";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
    }
}

TEST(Step, SpawnsOnlyUncoveredDetections) {
    ScriptedProvider p;
    const auto a = rect_mask(40, 30, 2, 2, 8, 8);
    const auto b = rect_mask(40, 30, 20, 2, 26, 8);
    const auto a_shifted = rect_mask(40, 30, 3, 2, 9, 8);  // IoU with a well above lambda_spawn
    p.dets = {{{{2, 2, 8, 8}, a, 0.9, "a", std::nullopt}},
              {{{3, 2, 9, 8}, a_shifted, 0.9, "a", std::nullopt}, {{20, 2, 26, 8}, b, 0.8, "b", std::nullopt}}};
    p.seg = [&](int, const BBox&) { return std::vector<MaskHypothesis>{{a, a, 0.9}}; };
    const TrackSet ts = run(p, EngineConfig{});
    ASSERT_EQ(ts.tracks.size(), 2u);
    EXPECT_EQ(ts.tracks[1].label, "b");
    EXPECT_EQ(ts.tracks[1].birth_frame, 1);
}

TEST(ReId, IdenticalFeaturesMergeIntoOlderId) {
    TrackSet ts;
    Track old;
    old.id = 1;
    old.state = TrackState::Terminated;
    old.features = {{1, 0, 0}};
    old.history = {{0, {0, 0, 1, 1}, rect_mask(4, 4, 0, 0, 1, 1)}};
    old.end_frame = 0;
    Track nt;
    nt.id = 2;
    nt.birth_frame = nt.end_frame = 3;
    nt.features = {{1, 0, 0}};
    nt.history = {{3, {1, 1, 2, 2}, rect_mask(4, 4, 1, 1, 2, 2)}};
    ts.tracks = {old, nt};
    reid_match(ts, 3, EngineConfig{});
    EXPECT_EQ(ts.get(1).state, TrackState::Active);
    EXPECT_EQ(ts.get(1).history.size(), 2u);
    EXPECT_EQ(ts.get(1).end_frame, 3);
    EXPECT_EQ(ts.get(2).state, TrackState::Retired);
    EXPECT_EQ(ts.get(2).merged_into, 1);
    EXPECT_TRUE(ts.get(2).history.empty());
    ASSERT_EQ(ts.merges.size(), 1u);
    EXPECT_DOUBLE_EQ(ts.merges[0].similarity, 1.0);
}

TEST(ReId, OrthogonalFeaturesDoNotMerge) {
    TrackSet ts;
    Track old;
    old.id = 1;
    old.state = TrackState::Terminated;
    old.features = {{1, 0}};
    old.history = {{0, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
    Track nt;
    nt.id = 2;
    nt.birth_frame = 2;
    nt.features = {{0, 1}};
    nt.history = {{2, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
    ts.tracks = {old, nt};
    reid_match(ts, 2, EngineConfig{});
    EXPECT_EQ(ts.get(1).state, TrackState::Terminated);
    EXPECT_EQ(ts.get(2).state, TrackState::Active);
}

TEST(ReId, GreedyTiesGoToLowerTerminatedId) {
    TrackSet ts;
    for (int id = 1; id <= 2; ++id) {
        Track old;
        old.id = id;
        old.state = TrackState::Terminated;
        old.features = {{1, 0}};
        old.history = {{0, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
        ts.tracks.push_back(old);
    }
    Track nt;
    nt.id = 3;
    nt.birth_frame = 4;
    nt.features = {{1, 0}};
    nt.history = {{4, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
    ts.tracks.push_back(nt);
    reid_match(ts, 4, EngineConfig{});
    EXPECT_EQ(ts.get(1).state, TrackState::Active);
    EXPECT_EQ(ts.get(2).state, TrackState::Terminated);
}

TEST(ReId, NewTrackBeyondWindowIsNotConsidered) {
    TrackSet ts;
    Track old;
    old.id = 1;
    old.state = TrackState::Terminated;
    old.features = {{1, 0}};
    old.history = {{0, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
    Track nt;
    nt.id = 2;
    nt.birth_frame = 1;
    nt.features = {{1, 0}};
    nt.history = {{1, {}, rect_mask(4, 4, 0, 0, 1, 1)}};
    ts.tracks = {old, nt};
    EngineConfig cfg;
    cfg.t_reid = 3;
    reid_match(ts, 4, cfg);
    EXPECT_EQ(ts.get(2).state, TrackState::Active);
    EXPECT_TRUE(ts.merges.empty());
}

TEST(ReId, ReappearanceAfterShortOcclusionRecoversId) {
    // Object passes behind a wide static occluder for a few frames.
    int merged = 0;
    for (int seed = 0; seed < 20; ++seed) {
        sim::SceneConfig c;
        c.width = 160;
        c.height = 60;
        c.frames = 20;
        c.seed = seed;
        c.objects = {square({10, 20, 30, 40}, 0, 6, 0), square({60, 5, 100, 55}, 1, 0, 0, "wall")};
        c.noise.feature_noise = 0.05;
        TrackSet ts;
        const TrackTable tab = run_oracle(c, EngineConfig{}, &ts);
        merged += !ts.merges.empty() && ts.merges[0].kept_id == 1;
    }
    EXPECT_GE(merged, 19);
}

TEST(Run, SingleFrameIsInitOnly) {
    sim::SceneConfig c;
    c.frames = 1;
    c.objects = {square({10, 10, 30, 30}, 0, 0, 0)};
    const auto st = sim::generate(c);
    const sim::OracleProvider p(st, {}, 0);
    const TrackSet ts = run(p, EngineConfig{});
    ASSERT_EQ(ts.tracks.size(), 1u);
    EXPECT_EQ(ts.tracks[0].history.size(), 1u);
    EXPECT_EQ(ts.frame, 0);
}

TEST(Run, CrossingObjectsKeepTheirIds) {
    sim::SceneConfig c;
    c.width = 160;
    c.height = 100;
    c.frames = 20;
    // Paths cross in space but the objects pass the crossing point at different times.
    c.objects = {square({5, 40, 25, 60}, 0, 6, 0), square({90, 75, 110, 95}, 1, 0, -4, "disc")};
    const auto st = sim::generate(c);
    for (int t = 0; t < c.frames; ++t) ASSERT_DOUBLE_EQ(mask_iou(st.visible[t][0], st.visible[t][1]), 0.0);
    const TrackTable pred = run_oracle(c, EngineConfig{});
    const TrackTable gt = sim::ground_truth_table(st);
    EXPECT_EQ(pred.tracks.size(), 2u);
    EXPECT_EQ(id_switches(pred, gt), 0);
    EXPECT_DOUBLE_EQ(*j_measure(pred, gt, match_first_frame(pred, gt)), 1.0);
}

TEST(Run, PromptedCategoryTrackedBelowDefaultThreshold) {
    sim::SceneConfig c;
    c.width = 120;
    c.height = 60;
    c.frames = 6;
    auto sq = square({10, 10, 30, 30}, 0, 2, 0);
    auto disc = square({60, 10, 80, 30}, 1, -2, 0, "disc");
    sq.score = disc.score = 0.4;
    c.objects = {sq, disc};
    EngineConfig cfg;
    cfg.lambda_obj = 0.3;
    EXPECT_TRUE(run_oracle(c, cfg).tracks.empty());
    cfg.prompted_labels = {"square"};
    const TrackTable tab = run_oracle(c, cfg);
    ASSERT_EQ(tab.tracks.size(), 1u);
    EXPECT_EQ(tab.tracks.begin()->second.label, "square");
    EXPECT_EQ(tab.tracks.begin()->second.frames.size(), 6u);
}

TEST(Invariants, ActiveTracksNeverExceedCap) {
    for (int seed = 0; seed < 5; ++seed) {
        const auto c = sim::random_scene(seed);
        const auto st = sim::generate(c);
        const sim::OracleProvider p(st, {}, seed);
        EngineConfig cfg;
        cfg.max_tracks = 2;
        TrackSet ts = init_tracks(p.detect(0, {}), cfg, p.width(), p.height());
        EXPECT_LE(ts.active_count(), 2u);
        for (int t = 0; t + 1 < p.frame_count(); ++t) {
            step(ts, t, p, cfg);
            ASSERT_LE(ts.active_count(), 2u) << "seed " << seed << " frame " << t + 1;
        }
        for (std::size_t i = 0; i < ts.tracks.size(); ++i) EXPECT_EQ(ts.tracks[i].id, static_cast<int>(i) + 1);
    }
}

TEST(Invariants, HistoriesContiguousAndFeaturesUnitNorm) {
    for (int seed = 0; seed < 5; ++seed) {
        auto c = sim::random_scene(seed);
        c.noise.feature_noise = 0.1;
        const auto st = sim::generate(c);
        const sim::OracleProvider p(st, c.noise, seed);
        EngineConfig cfg;
        cfg.feature_window = 3;
        const TrackSet ts = run(p, cfg);
        for (const auto& tr : ts.tracks) {
            EXPECT_LE(tr.features.size(), 3u);
            for (const auto& f : tr.features) {
                double n = 0;
                for (double v : f) n += v * v;
                EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
            }
            for (std::size_t k = 1; k < tr.history.size(); ++k) {
                EXPECT_GT(tr.history[k].frame, tr.history[k - 1].frame);
                if (tr.absorbed.empty()) {
                    EXPECT_EQ(tr.history[k].frame, tr.history[k - 1].frame + 1);
                }
            }
            for (const auto& f : tr.history) EXPECT_FALSE(f.mask.empty());
        }
    }
}

TEST(Invariants, RunsAreDeterministicAcrossRepeatsAndThreadCounts) {
    auto c = sim::random_scene(12);
    c.noise.box_jitter = 1.5;
    c.noise.miss_prob = 0.1;
    c.noise.distractor_rate = 0.5;
    const auto st = sim::generate(c);
    const sim::OracleProvider p(st, c.noise, 12);
    RunOptions four;
    four.jobs = 4;
    const std::string a = tracks_to_ndjson(run(p, EngineConfig{}), st.width, st.height);
    const std::string b = tracks_to_ndjson(run(p, EngineConfig{}), st.width, st.height);
    const std::string d = tracks_to_ndjson(run(p, EngineConfig{}, four), st.width, st.height);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
    EXPECT_FALSE(a.empty());
}

TEST(Invariants, EverySwitchCombinationRuns) {
    const auto c = sim::random_scene(3);
    const auto st = sim::generate(c);
    const sim::OracleProvider p(st, {}, 3);
    for (int mask = 0; mask < 16; ++mask) {
        EngineConfig cfg;
        cfg.enable_motion_propagation = mask & 1;
        cfg.enable_refinement = mask & 2;
        cfg.enable_cycle_consistency = mask & 4;
        cfg.enable_box_adaptation = mask & 8;
        EXPECT_NO_THROW(run(p, cfg)) << mask;
    }
}

TEST(Invariants, StaticSceneWithEverySwitchOffKeepsTracks) {
    sim::SceneConfig c;
    c.frames = 8;
    c.objects = {square({10, 10, 30, 30}, 0, 0, 0), square({60, 40, 90, 70}, 1, 0, 0, "box")};
    EngineConfig cfg;
    cfg.enable_motion_propagation = cfg.enable_refinement = false;
    cfg.enable_cycle_consistency = cfg.enable_box_adaptation = false;
    const TrackTable tab = run_oracle(c, cfg);
    ASSERT_EQ(tab.tracks.size(), 2u);
    for (const auto& [id, r] : tab.tracks) EXPECT_EQ(r.frames.size(), 8u);
}
