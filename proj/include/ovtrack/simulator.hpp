#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ovtrack/core_io.hpp"
#include "ovtrack/core_types.hpp"
#include "ovtrack/motion.hpp"
#include "ovtrack/perception.hpp"
#include "ovtrack/track_io.hpp"

namespace ovtrack::sim {

enum class Shape { Rectangle, Ellipse };

/// One entry of a motion script. Either a literal per-axis map, or a
/// velocity/scale pair that is resolved about the current box center.
struct MotionSpec {
    bool literal = false;
    MotionTransform transform;       // literal form
    double vx = 0, vy = 0;           // relative form
    double sx = 1, sy = 1;

    MotionTransform resolve(const BBox& current) const {
        if (literal) return transform;
        const double cx = current.cx(), cy = current.cy();
        return {sx, cx * (1 - sx) + vx, sy, cy * (1 - sy) + vy};
    }
};

struct SceneObject {
    Shape shape = Shape::Rectangle;
    BBox box;  // amodal extent at frame 0
    int depth = 0;  // larger is closer to the camera
    std::vector<MotionSpec> script;  // entry t moves frame t to t+1; the last entry repeats
    int enter_frame = 0;
    int exit_frame = -1;  // -1: until the last frame
    std::string label = "object";
    double score = 1.0;   // detector confidence for a fully visible instance
    std::vector<double> feature;  // identity feature; generated when empty
};

struct NoiseSpec {
    double box_jitter = 0;        // sigma in px, per box coordinate
    double objectness_noise = 0;  // sigma
    double miss_prob = 0;
    double fp_rate = 0;           // expected false positives per frame
    double feature_noise = 0;     // sigma per feature component
    double distractor_rate = 0;   // probability a segment query carries distractors
    double distractor_quality = 0.5;

    friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

struct OracleOptions {
    double segment_margin = 2.0;  // px the segmenter may extend past its prompt box
    double true_quality = 0.9;
    RefineOptions refine{0.3, 0.8};
};

struct SceneConfig {
    int width = 160;
    int height = 120;
    int frames = 20;
    int feature_dim = 32;
    std::uint64_t seed = 0;
    std::vector<SceneObject> objects;
    NoiseSpec noise;
    OracleOptions oracle;
};

struct SceneTruth {
    int width = 0, height = 0, frames = 0;
    std::vector<std::string> labels;
    std::vector<double> scores;
    std::vector<std::vector<double>> features;      // identity features, unit norm
    std::vector<std::vector<BinaryMask>> visible;   // [frame][object], z-buffered
    std::vector<std::vector<BBox>> amodal;          // [frame][object]
    std::vector<std::vector<double>> visibility;    // [frame][object]
    std::vector<std::vector<MotionTransform>> motion;  // [t][object], t -> t+1
    std::vector<FlowField> fwd, bwd;                // [t], t = 0..frames-2

    std::size_t object_count() const { return labels.size(); }
    std::optional<BBox> visible_box(int t, std::size_t i) const { return tight_box(visible[t][i]); }
};

namespace detail {

inline bool shape_contains(Shape s, const BBox& b, double px, double py) {
    if (s == Shape::Rectangle) return px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1;
    const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
    const double dx = (px - b.cx()) / rx, dy = (py - b.cy()) / ry;
    return dx * dx + dy * dy < 1.0;
}

// Pixel-center count of the shape on an unbounded grid.
inline std::size_t amodal_pixels(Shape s, const BBox& b) {
    std::size_t n = 0;
    for (int y = static_cast<int>(std::floor(b.y0)) - 1; y <= static_cast<int>(std::ceil(b.y1)); ++y)
        for (int x = static_cast<int>(std::floor(b.x0)) - 1; x <= static_cast<int>(std::ceil(b.x1)); ++x)
            if (shape_contains(s, b, x + 0.5, y + 0.5)) ++n;
    return n;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

inline std::vector<double> random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = n01(rng);
    return l2_normalized(v);
}

}  // namespace detail

inline void validate(const SceneConfig& cfg) {
    if (cfg.width < 1 || cfg.height < 1) throw ConfigError("scene width/height must be positive");
    if (cfg.frames < 1) throw ConfigError("scene needs at least one frame");
    if (cfg.feature_dim < 1) throw ConfigError("feature_dim must be positive");
    std::set<int> depths;
    for (std::size_t i = 0; i < cfg.objects.size(); ++i) {
        const auto& o = cfg.objects[i];
        const std::string where = "objects[" + std::to_string(i) + "]";
        if (!(o.box.width() > 0 && o.box.height() > 0))
            throw ConfigError(where + ".box: degenerate shape (zero area)");
        if (!depths.insert(o.depth).second) throw ConfigError(where + ".depth: duplicate depth");
        if (o.enter_frame < 0 || (o.exit_frame >= 0 && o.exit_frame < o.enter_frame))
            throw ConfigError(where + ": enter_frame/exit_frame out of order");
        if (!(o.score >= 0 && o.score <= 1)) throw ConfigError(where + ".score must lie in [0,1]");
        if (!o.feature.empty() && static_cast<int>(o.feature.size()) != cfg.feature_dim)
            throw ConfigError(where + ".feature: dimensionality differs from feature_dim");
        for (const auto& m : o.script)
            if ((m.literal && !(m.transform.ax > 0 && m.transform.ay > 0)) ||
                (!m.literal && !(m.sx > 0 && m.sy > 0)))
                throw ConfigError(where + ".script: scales must be positive");
    }
    const auto& n = cfg.noise;
    if (n.box_jitter < 0 || n.objectness_noise < 0 || n.fp_rate < 0 || n.feature_noise < 0)
        throw ConfigError("noise: sigmas and rates must be non-negative");
    if (!(n.miss_prob >= 0 && n.miss_prob <= 1) || !(n.distractor_rate >= 0 && n.distractor_rate <= 1))
        throw ConfigError("noise: probabilities must lie in [0,1]");
}

/// Renders the scene. Pure function of the config (including its seed).
///
/// Random draws, in order: one identity feature per object that lacks one
/// (object order). Forward flow at a pixel is the motion of the frontmost
/// object there, also for pixels about to be covered; backward flow at
/// frame t+1 inverts the motion of the frontmost object at t+1.
inline SceneTruth generate(const SceneConfig& cfg) {
    validate(cfg);
    const int W = cfg.width, H = cfg.height, T = cfg.frames;
    const std::size_t n = cfg.objects.size();
    SceneTruth st;
    st.width = W;
    st.height = H;
    st.frames = T;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::vector<double>> generated;  // Gram-Schmidt against earlier ones
    for (const auto& o : cfg.objects) {
        st.labels.push_back(o.label);
        st.scores.push_back(o.score);
        if (!o.feature.empty()) {
            st.features.push_back(l2_normalized(o.feature));
            continue;
        }
        std::vector<double> v = detail::random_unit(rng, cfg.feature_dim);
        if (static_cast<int>(generated.size()) < cfg.feature_dim) {
            for (const auto& g : generated) {
                const double p = dot(v, g);
                for (int k = 0; k < cfg.feature_dim; ++k) v[k] -= p * g[k];
            }
            v = l2_normalized(v);
        }
        generated.push_back(v);
        st.features.push_back(v);
    }

    st.amodal.assign(T, std::vector<BBox>(n));
    st.motion.assign(std::max(T - 1, 0), std::vector<MotionTransform>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& o = cfg.objects[i];
        BBox b = o.box;
        for (int t = 0; t < T; ++t) {
            st.amodal[t][i] = b;
            if (t + 1 < T) {
                MotionSpec spec;
                if (!o.script.empty()) spec = o.script[std::min<std::size_t>(t, o.script.size() - 1)];
                const MotionTransform m = spec.resolve(b);
                st.motion[t][i] = m;
                b = BBox{m.ax * b.x0 + m.bx, m.ay * b.y0 + m.by, m.ax * b.x1 + m.bx, m.ay * b.y1 + m.by};
            }
        }
    }

    std::vector<std::size_t> back_to_front(n);
    std::iota(back_to_front.begin(), back_to_front.end(), 0);
    std::stable_sort(back_to_front.begin(), back_to_front.end(),
                     [&](std::size_t a, std::size_t b) { return cfg.objects[a].depth < cfg.objects[b].depth; });

    std::vector<std::vector<int>> owner(T, std::vector<int>(static_cast<std::size_t>(W) * H, -1));
    st.visible.assign(T, {});
    st.visibility.assign(T, std::vector<double>(n, 0.0));
    for (int t = 0; t < T; ++t) {
        auto& own = owner[t];
        for (std::size_t i : back_to_front) {
            const auto& o = cfg.objects[i];
            const int exit = o.exit_frame < 0 ? T - 1 : o.exit_frame;
            if (t < o.enter_frame || t > exit) continue;
            const BBox& b = st.amodal[t][i];
            const int x0 = std::max(0, static_cast<int>(std::floor(b.x0)) - 1);
            const int x1 = std::min(W - 1, static_cast<int>(std::ceil(b.x1)));
            const int y0 = std::max(0, static_cast<int>(std::floor(b.y0)) - 1);
            const int y1 = std::min(H - 1, static_cast<int>(std::ceil(b.y1)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x)
                    if (detail::shape_contains(o.shape, b, x + 0.5, y + 0.5))
                        own[static_cast<std::size_t>(y) * W + x] = static_cast<int>(i);
        }
        std::vector<Bitmap> bms(n, Bitmap(W, H));
        std::vector<std::size_t> counts(n, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (const int i = own[static_cast<std::size_t>(y) * W + x]; i >= 0) {
                    bms[i].set(x, y);
                    ++counts[i];
                }
        for (std::size_t i = 0; i < n; ++i) {
            st.visible[t].push_back(rle_encode(bms[i]));
            const std::size_t full = detail::amodal_pixels(cfg.objects[i].shape, st.amodal[t][i]);
            st.visibility[t][i] = full == 0 ? 0.0 : static_cast<double>(counts[i]) / full;
        }
    }

    for (int t = 0; t + 1 < T; ++t) {
        FlowField fwd(W, H), bwd(W, H);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::size_t k = static_cast<std::size_t>(y) * W + x;
                const double px = x + 0.5, py = y + 0.5;
                if (const int i = owner[t][k]; i >= 0) {
                    const Vec2 q = st.motion[t][i].apply({px, py});
                    fwd.set(x, y, {q.x - px, q.y - py});
                }
                if (const int i = owner[t + 1][k]; i >= 0) {
                    const auto& m = st.motion[t][i];
                    bwd.set(x, y, {(px - m.bx) / m.ax - px, (py - m.by) / m.ay - py});
                }
            }
        st.fwd.push_back(std::move(fwd));
        st.bwd.push_back(std::move(bwd));
    }
    return st;
}

// ---------------------------------------------------------------------------
// Oracle provider
// ---------------------------------------------------------------------------

/// Perception provider answering from scene truth, with seeded noise.
///
/// Detection draws at construction, per frame t, per object i (index order):
/// miss uniform, 4 box-jitter normals, objectness normal, feature_dim feature
/// normals; then a Poisson false-positive count and, per false positive,
/// width, height, x, y, objectness uniforms and feature_dim normals.
/// Segment distractors use a generator seeded from (seed, frame, prompt bucket)
/// so answers do not depend on query order.
class OracleProvider {
public:
    OracleProvider(const SceneTruth& truth, NoiseSpec noise, std::uint64_t seed, OracleOptions opt = {})
        : truth_(truth), noise_(noise), seed_(seed), opt_(opt) {
        draw_detections();
    }

    int frame_count() const { return truth_.frames; }
    int width() const { return truth_.width; }
    int height() const { return truth_.height; }
    const SceneTruth& truth() const { return truth_; }
    const OracleOptions& options() const { return opt_; }
    const std::vector<std::vector<Detection>>& all_detections() const { return detections_; }

    std::vector<Detection> detect(int t, std::span<const std::string> /*prompt*/) const {
        check_frame(t);
        return detections_[t];
    }

    /// Snaps to the frame's emitted (noisy) detections; objectness is the
    /// detection's, i.e. score x visibility plus noise.
    RefinedBox refine(int t, const BBox& box, double prior_objectness) const {
        check_frame(t);
        return snap_to_detections(detections_[t], box, prior_objectness, opt_.refine);
    }

    std::vector<MaskHypothesis> segment(int t_next, const BBox& prompt, int t_prev) const {
        check_frame(t_next);
        const PromptBucket key = prompt_bucket(prompt);
        const BBox pb = clip_box(bucket_box(key), truth_.width, truth_.height);

        std::optional<std::size_t> target;
        double best = 0;
        for (std::size_t i = 0; i < truth_.object_count(); ++i) {
            const auto vb = truth_.visible_box(t_next, i);
            if (!vb) continue;
            const double iou = box_iou(pb, *vb);
            if (iou > best) {
                best = iou;
                target = i;
            }
        }
        if (!target) return {};
        const std::size_t i = *target;
        const double m = opt_.segment_margin;
        const Bitmap window =
            rasterize_box({pb.x0 - m, pb.y0 - m, pb.x1 + m, pb.y1 + m}, truth_.width, truth_.height);
        const Bitmap obj_next = rle_decode(truth_.visible[t_next][i]);
        const Bitmap main_mask = bitmap_and(obj_next, window);
        if (main_mask.count() == 0) return {};

        const bool have_prev = t_prev >= 0 && t_prev < truth_.frames && !truth_.visible[t_prev][i].empty();
        std::optional<BinaryMask> main_bp;
        if (have_prev) main_bp = truth_.visible[t_prev][i];
        MaskHypothesis truth_hyp{rle_encode(main_mask), main_bp, opt_.true_quality};

        std::uint64_t h = detail::hash_combine(seed_, static_cast<std::uint64_t>(t_next));
        for (int v : key) h = detail::hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
        std::mt19937_64 rng(h);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::vector<MaskHypothesis> out;
        if (u01(rng) < noise_.distractor_rate) {
            if (auto part = part_distractor(main_mask, i, t_prev, have_prev, u01(rng) < 0.5))
                out.push_back(std::move(*part));
            if (auto merged = merged_distractor(main_mask, i, t_next, t_prev, have_prev))
                out.push_back(std::move(*merged));
        }
        std::uniform_int_distribution<std::size_t> pos(0, out.size());
        out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos(rng)), std::move(truth_hyp));
        return out;
    }

    const FlowField& flow_fwd(int t) const { return truth_.fwd.at(static_cast<std::size_t>(t)); }
    const FlowField& flow_bwd(int t) const { return truth_.bwd.at(static_cast<std::size_t>(t)); }

private:
    void check_frame(int t) const {
        if (t < 0 || t >= truth_.frames) throw InvalidInput("frame " + std::to_string(t) + " out of range");
    }

    void draw_detections() {
        const int W = truth_.width, H = truth_.height;
        const int dim = truth_.features.empty() ? 32 : static_cast<int>(truth_.features[0].size());
        std::mt19937_64 rng(detail::hash_combine(seed_, 0x6465746563ULL));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);
        detections_.assign(truth_.frames, {});
        for (int t = 0; t < truth_.frames; ++t) {
            for (std::size_t i = 0; i < truth_.object_count(); ++i) {
                const bool missed = u01(rng) < noise_.miss_prob;
                double jit[4];
                for (double& j : jit) j = n01(rng) * noise_.box_jitter;
                const double obj_noise = n01(rng) * noise_.objectness_noise;
                std::vector<double> feat = truth_.features[i];
                for (double& f : feat) f += n01(rng) * noise_.feature_noise;
                const auto vb = truth_.visible_box(t, i);
                if (missed || !vb) continue;
                BBox b{vb->x0 + jit[0], vb->y0 + jit[1], vb->x1 + jit[2], vb->y1 + jit[3]};
                if (b.x0 > b.x1) std::swap(b.x0, b.x1);
                if (b.y0 > b.y1) std::swap(b.y0, b.y1);
                b = clip_box(b, W, H);
                if (b.area() <= 0) b = *vb;
                Detection d;
                d.box = b;
                d.mask = truth_.visible[t][i];
                d.objectness = std::clamp(truth_.scores[i] * truth_.visibility[t][i] + obj_noise, 0.0, 1.0);
                d.label = truth_.labels[i];
                d.feature = l2_normalized(feat);
                detections_[t].push_back(std::move(d));
            }
            std::poisson_distribution<int> fp_count(noise_.fp_rate > 0 ? noise_.fp_rate : 1e-300);
            const int fps = noise_.fp_rate > 0 ? fp_count(rng) : 0;
            for (int k = 0; k < fps; ++k) {
                const double w = 8 + 24 * u01(rng), h = 8 + 24 * u01(rng);
                const double x = u01(rng) * std::max(0.0, W - w), y = u01(rng) * std::max(0.0, H - h);
                const double score = 0.3 + 0.6 * u01(rng);
                std::vector<double> feat = detail::random_unit(rng, dim);
                const BBox b = clip_box({x, y, x + w, y + h}, W, H);
                const Bitmap bm = rasterize_box(b, W, H);
                if (bm.count() == 0) continue;
                detections_[t].push_back(Detection{b, rle_encode(bm), score, "clutter", std::move(feat)});
            }
        }
    }

    // Half of the object, split along the longer side of its box.
    std::optional<MaskHypothesis> part_distractor(const Bitmap& main_mask, std::size_t i, int t_prev,
                                                  bool have_prev, bool first_half) const {
        auto half_of = [&](const Bitmap& bm) -> Bitmap {
            const auto tb = tight_box(rle_encode(bm));
            if (!tb) return bm;
            BBox half = *tb;
            if (tb->width() >= tb->height()) {
                const double mid = std::floor(tb->cx());
                (first_half ? half.x1 : half.x0) = mid;
            } else {
                const double mid = std::floor(tb->cy());
                (first_half ? half.y1 : half.y0) = mid;
            }
            return bitmap_and(bm, rasterize_box(half, bm.width, bm.height));
        };
        const Bitmap part = half_of(main_mask);
        if (part.count() == 0 || part == main_mask) return std::nullopt;
        std::optional<BinaryMask> bp;
        if (have_prev) bp = rle_encode(half_of(rle_decode(truth_.visible[t_prev][i])));
        return MaskHypothesis{rle_encode(part), bp, noise_.distractor_quality};
    }

    // The object together with its nearest visible neighbour.
    std::optional<MaskHypothesis> merged_distractor(const Bitmap& main_mask, std::size_t i, int t_next,
                                                    int t_prev, bool have_prev) const {
        const auto ib = truth_.visible_box(t_next, i);
        std::optional<std::size_t> nearest;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < truth_.object_count(); ++j) {
            if (j == i) continue;
            const auto jb = truth_.visible_box(t_next, j);
            if (!jb) continue;
            const double d = std::hypot(jb->cx() - ib->cx(), jb->cy() - ib->cy());
            if (d < best) {
                best = d;
                nearest = j;
            }
        }
        if (!nearest) return std::nullopt;
        const Bitmap merged = bitmap_or(main_mask, rle_decode(truth_.visible[t_next][*nearest]));
        std::optional<BinaryMask> bp;
        if (have_prev)
            bp = rle_encode(bitmap_or(rle_decode(truth_.visible[t_prev][i]),
                                      rle_decode(truth_.visible[t_prev][*nearest])));
        return MaskHypothesis{rle_encode(merged), bp, noise_.distractor_quality};
    }

    const SceneTruth& truth_;
    NoiseSpec noise_;
    std::uint64_t seed_;
    OracleOptions opt_;
    std::vector<std::vector<Detection>> detections_;
};

static_assert(PerceptionProvider<OracleProvider>);

// ---------------------------------------------------------------------------
// Ground truth and dumps
// ---------------------------------------------------------------------------

/// GT tracks in the engine's output format: id = object index + 1, one entry
/// per frame where the object's visible mask is nonempty and its visibility
/// reaches `min_visibility`.
inline TrackTable ground_truth_table(const SceneTruth& st, double min_visibility = 0.0) {
    TrackTable tab{st.width, st.height, {}};
    for (std::size_t i = 0; i < st.object_count(); ++i) {
        TrackRecord rec{static_cast<int>(i) + 1, st.labels[i], 1.0, {}};
        for (int t = 0; t < st.frames; ++t) {
            const auto& m = st.visible[t][i];
            if (m.empty() || st.visibility[t][i] < min_visibility) continue;
            rec.frames.emplace(t, TrackFrame{t, *tight_box(m), m});
        }
        if (!rec.frames.empty()) tab.tracks.emplace(rec.id, std::move(rec));
    }
    return tab;
}

/// Provider records that replay the oracle: its detections, exact flows and
/// the given recorded segment answers.
inline ProviderRecords oracle_records(const OracleProvider& oracle, std::vector<HypothesisRecord> hyps) {
    const SceneTruth& st = oracle.truth();
    ProviderRecords rec;
    rec.frames = st.frames;
    rec.width = st.width;
    rec.height = st.height;
    rec.detections = oracle.all_detections();
    rec.fwd = st.fwd;
    rec.bwd = st.bwd;
    rec.hypotheses = std::move(hyps);
    rec.refine = oracle.options().refine;
    return rec;
}

// ---------------------------------------------------------------------------
// Scene config JSON
// ---------------------------------------------------------------------------

inline json motion_to_json(const MotionSpec& m) {
    if (m.literal)
        return json{{"ax", m.transform.ax}, {"bx", m.transform.bx}, {"ay", m.transform.ay}, {"by", m.transform.by}};
    return json{{"vx", m.vx}, {"vy", m.vy}, {"sx", m.sx}, {"sy", m.sy}};
}

inline json noise_to_json(const NoiseSpec& n) {
    return json{{"box_jitter", n.box_jitter},       {"objectness_noise", n.objectness_noise},
                {"miss_prob", n.miss_prob},         {"fp_rate", n.fp_rate},
                {"feature_noise", n.feature_noise}, {"distractor_rate", n.distractor_rate},
                {"distractor_quality", n.distractor_quality}};
}

inline json scene_config_to_json(const SceneConfig& c) {
    json objs = json::array();
    for (const auto& o : c.objects) {
        json script = json::array();
        for (const auto& m : o.script) script.push_back(motion_to_json(m));
        json jo{{"shape", o.shape == Shape::Rectangle ? "rectangle" : "ellipse"},
                {"box", box_to_json(o.box)},
                {"depth", o.depth},
                {"script", script},
                {"enter_frame", o.enter_frame},
                {"exit_frame", o.exit_frame},
                {"label", o.label},
                {"score", o.score}};
        if (!o.feature.empty()) jo["feature"] = o.feature;
        objs.push_back(std::move(jo));
    }
    return json{{"width", c.width},
                {"height", c.height},
                {"frames", c.frames},
                {"feature_dim", c.feature_dim},
                {"seed", c.seed},
                {"objects", objs},
                {"noise", noise_to_json(c.noise)},
                {"oracle",
                 {{"segment_margin", c.oracle.segment_margin},
                  {"true_quality", c.oracle.true_quality},
                  {"snap_threshold", c.oracle.refine.snap_threshold},
                  {"decay", c.oracle.refine.decay}}}};
}

namespace detail {

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [k, v] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* s) { return k == s; }))
            throw ConfigError(where + ": unknown field '" + k + "'");
}

}  // namespace detail

inline SceneConfig scene_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("scene config must be a JSON object");
    detail::reject_unknown(j, {"width", "height", "frames", "feature_dim", "seed", "objects", "noise", "oracle"}, "scene");
    SceneConfig c;
    c.width = detail::field(j, "width", c.width, "scene");
    c.height = detail::field(j, "height", c.height, "scene");
    c.frames = detail::field(j, "frames", c.frames, "scene");
    c.feature_dim = detail::field(j, "feature_dim", c.feature_dim, "scene");
    c.seed = detail::field<std::uint64_t>(j, "seed", c.seed, "scene");
    if (j.contains("objects")) {
        if (!j["objects"].is_array()) throw ConfigError("scene.objects must be an array");
        int idx = 0;
        for (const auto& jo : j["objects"]) {
            const std::string where = "objects[" + std::to_string(idx) + "]";
            detail::reject_unknown(jo, {"shape", "box", "depth", "script", "enter_frame", "exit_frame", "label", "score", "feature"}, where);
            SceneObject o;
            const auto shape = detail::field<std::string>(jo, "shape", "rectangle", where);
            if (shape == "rectangle") o.shape = Shape::Rectangle;
            else if (shape == "ellipse") o.shape = Shape::Ellipse;
            else throw ConfigError(where + ".shape: expected rectangle or ellipse");
            if (!jo.contains("box")) throw ConfigError(where + ".box: missing");
            try {
                const auto& jb = jo["box"];
                if (!jb.is_array() || jb.size() != 4) throw ConfigError("");
                o.box = {jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(), jb[3].get<double>()};
            } catch (const std::exception&) {
                throw ConfigError(where + ".box: expected [x0, y0, x1, y1]");
            }
            o.depth = detail::field(jo, "depth", idx, where);
            o.enter_frame = detail::field(jo, "enter_frame", 0, where);
            o.exit_frame = detail::field(jo, "exit_frame", -1, where);
            o.label = detail::field<std::string>(jo, "label", "object", where);
            o.score = detail::field(jo, "score", 1.0, where);
            o.feature = detail::field<std::vector<double>>(jo, "feature", {}, where);
            if (jo.contains("script")) {
                int k = 0;
                for (const auto& jm : jo["script"]) {
                    const std::string mw = where + ".script[" + std::to_string(k++) + "]";
                    MotionSpec m;
                    if (jm.contains("ax") || jm.contains("bx") || jm.contains("ay") || jm.contains("by")) {
                        detail::reject_unknown(jm, {"ax", "bx", "ay", "by"}, mw);
                        m.literal = true;
                        m.transform = {detail::field(jm, "ax", 1.0, mw), detail::field(jm, "bx", 0.0, mw),
                                       detail::field(jm, "ay", 1.0, mw), detail::field(jm, "by", 0.0, mw)};
                    } else {
                        detail::reject_unknown(jm, {"vx", "vy", "sx", "sy"}, mw);
                        m.vx = detail::field(jm, "vx", 0.0, mw);
                        m.vy = detail::field(jm, "vy", 0.0, mw);
                        m.sx = detail::field(jm, "sx", 1.0, mw);
                        m.sy = detail::field(jm, "sy", 1.0, mw);
                    }
                    o.script.push_back(m);
                }
            }
            c.objects.push_back(std::move(o));
            ++idx;
        }
    }
    if (j.contains("noise")) {
        const auto& jn = j["noise"];
        detail::reject_unknown(jn, {"box_jitter", "objectness_noise", "miss_prob", "fp_rate", "feature_noise", "distractor_rate", "distractor_quality"}, "noise");
        auto& n = c.noise;
        n.box_jitter = detail::field(jn, "box_jitter", n.box_jitter, "noise");
        n.objectness_noise = detail::field(jn, "objectness_noise", n.objectness_noise, "noise");
        n.miss_prob = detail::field(jn, "miss_prob", n.miss_prob, "noise");
        n.fp_rate = detail::field(jn, "fp_rate", n.fp_rate, "noise");
        n.feature_noise = detail::field(jn, "feature_noise", n.feature_noise, "noise");
        n.distractor_rate = detail::field(jn, "distractor_rate", n.distractor_rate, "noise");
        n.distractor_quality = detail::field(jn, "distractor_quality", n.distractor_quality, "noise");
    }
    if (j.contains("oracle")) {
        const auto& jo = j["oracle"];
        detail::reject_unknown(jo, {"segment_margin", "true_quality", "snap_threshold", "decay"}, "oracle");
        c.oracle.segment_margin = detail::field(jo, "segment_margin", c.oracle.segment_margin, "oracle");
        c.oracle.true_quality = detail::field(jo, "true_quality", c.oracle.true_quality, "oracle");
        c.oracle.refine.snap_threshold = detail::field(jo, "snap_threshold", c.oracle.refine.snap_threshold, "oracle");
        c.oracle.refine.decay = detail::field(jo, "decay", c.oracle.refine.decay, "oracle");
    }
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// Scene families used by tests and benchmarks
// ---------------------------------------------------------------------------

struct RandomSceneOptions {
    int width = 160;
    int height = 120;
    int frames = 24;
    int min_objects = 2;
    int max_objects = 6;
    double min_size = 14, max_size = 34;
    double max_speed = 4.0;
    double entry_prob = 0.35;  // chance an object starts outside and enters through a border
};

/// Random multi-object scene: mixed shapes and depths, moderate motion.
/// Entering objects start outside the image and cross a border; exits
/// happen when objects drift out. All draws come from `seed`.
inline SceneConfig random_scene(std::uint64_t seed, const RandomSceneOptions& o = {}) {
    std::mt19937_64 rng(detail::hash_combine(seed, 0x7363656e65ULL));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
    SceneConfig c;
    c.width = o.width;
    c.height = o.height;
    c.frames = o.frames;
    c.seed = seed;
    const int n = std::min(o.max_objects, o.min_objects + static_cast<int>(u01(rng) * (o.max_objects - o.min_objects + 1)));
    std::vector<int> depths(n);
    std::iota(depths.begin(), depths.end(), 0);
    std::shuffle(depths.begin(), depths.end(), rng);
    static const char* kLabels[] = {"square", "disc", "box", "ball"};
    for (int i = 0; i < n; ++i) {
        SceneObject ob;
        ob.shape = u01(rng) < 0.5 ? Shape::Rectangle : Shape::Ellipse;
        const double w = uni(o.min_size, o.max_size), h = uni(o.min_size, o.max_size);
        double x = uni(0, o.width - w), y = uni(0, o.height - h);
        ob.depth = depths[i];
        ob.label = kLabels[(ob.shape == Shape::Rectangle ? 0 : 1) + 2 * (u01(rng) < 0.5)];
        MotionSpec m;
        m.vx = uni(-o.max_speed, o.max_speed);
        m.vy = uni(-o.max_speed, o.max_speed);
        m.sx = m.sy = uni(0.99, 1.01);
        if (u01(rng) < o.entry_prob) {
            const double inward = uni(0.5 * o.max_speed, o.max_speed);
            const double gap = uni(0, 2 * o.max_speed);
            switch (static_cast<int>(u01(rng) * 4)) {
                case 0: x = -w - gap; m.vx = inward; break;
                case 1: x = o.width + gap; m.vx = -inward; break;
                case 2: y = -h - gap; m.vy = inward; break;
                default: y = o.height + gap; m.vy = -inward; break;
            }
            m.sx = m.sy = 1.0;
        }
        ob.box = {x, y, x + w, y + h};
        ob.script.push_back(m);
        c.objects.push_back(std::move(ob));
    }
    return c;
}

}  // namespace ovtrack::sim
