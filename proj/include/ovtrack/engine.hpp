#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ovtrack/core_io.hpp"
#include "ovtrack/core_types.hpp"
#include "ovtrack/motion.hpp"
#include "ovtrack/perception.hpp"

namespace ovtrack {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct EngineConfig {
    double lambda_c = 0.5;           // detector confidence for initialization / spawning
    double lambda_c_prompted = 0.3;  // confidence for prompted categories
    double lambda_flow = 0.5;        // minimum forward-backward consistent ratio
    std::optional<double> lambda_obj;  // objectness floor; defaults to lambda_c
    double lambda_spawn = 0.3;       // a detection spawns iff its IoU with every track mask is below this
    double lambda_reid = 0.7;        // cosine similarity needed to merge tracks
    int t_reid = 10;                 // frames a new track stays eligible for Re-ID
    int max_tracks = 10;             // K, co-existing active tracks
    int feature_window = 5;          // appearance vectors kept per track
    bool enable_motion_propagation = true;
    bool enable_refinement = true;
    bool enable_cycle_consistency = true;
    bool enable_box_adaptation = true;
    std::vector<std::string> prompted_labels;

    double objectness_floor() const { return lambda_obj.value_or(lambda_c); }

    void validate() const {
        auto unit = [](const char* name, double v) {
            if (!(v >= 0.0 && v <= 1.0))
                throw ConfigError(std::string(name) + " must lie in [0,1], got " + std::to_string(v));
        };
        unit("lambda_c", lambda_c);
        unit("lambda_c_prompted", lambda_c_prompted);
        unit("lambda_flow", lambda_flow);
        unit("lambda_obj", objectness_floor());
        unit("lambda_spawn", lambda_spawn);
        // Similarities live in [-1, 1]; a threshold above 1 disables merging.
        if (!std::isfinite(lambda_reid) || lambda_reid < -1.0)
            throw ConfigError("lambda_reid must be finite and >= -1");
        if (t_reid < 0) throw ConfigError("t_reid must be >= 0");
        if (max_tracks < 1) throw ConfigError("max_tracks (K) must be >= 1");
        if (feature_window < 1) throw ConfigError("feature_window must be >= 1");
    }

    bool is_prompted() const { return !prompted_labels.empty(); }

    /// Threshold for a detection label, or nullopt when prompting excludes it.
    std::optional<double> threshold_for(const std::string& label) const {
        if (!is_prompted()) return lambda_c;
        if (std::find(prompted_labels.begin(), prompted_labels.end(), label) == prompted_labels.end())
            return std::nullopt;
        return lambda_c_prompted;
    }
};

inline json engine_config_to_json(const EngineConfig& c) {
    return json{{"lambda_c", c.lambda_c},
                {"lambda_c_prompted", c.lambda_c_prompted},
                {"lambda_flow", c.lambda_flow},
                {"lambda_obj", c.objectness_floor()},
                {"lambda_spawn", c.lambda_spawn},
                {"lambda_reid", c.lambda_reid},
                {"t_reid", c.t_reid},
                {"max_tracks", c.max_tracks},
                {"feature_window", c.feature_window},
                {"enable_motion_propagation", c.enable_motion_propagation},
                {"enable_refinement", c.enable_refinement},
                {"enable_cycle_consistency", c.enable_cycle_consistency},
                {"enable_box_adaptation", c.enable_box_adaptation},
                {"prompted_labels", c.prompted_labels}};
}

/// Applies the keys present in `j` on top of `base`. Unknown keys and
/// wrongly typed values raise ConfigError naming the field.
inline EngineConfig engine_config_from_json(const json& j, EngineConfig base = {}) {
    if (!j.is_object()) throw ConfigError("engine config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "lambda_c") base.lambda_c = value.get<double>();
            else if (key == "lambda_c_prompted") base.lambda_c_prompted = value.get<double>();
            else if (key == "lambda_flow") base.lambda_flow = value.get<double>();
            else if (key == "lambda_obj") base.lambda_obj = value.is_null() ? std::nullopt : std::optional(value.get<double>());
            else if (key == "lambda_spawn") base.lambda_spawn = value.get<double>();
            else if (key == "lambda_reid") base.lambda_reid = value.get<double>();
            else if (key == "t_reid") base.t_reid = value.get<int>();
            else if (key == "max_tracks") base.max_tracks = value.get<int>();
            else if (key == "feature_window") base.feature_window = value.get<int>();
            else if (key == "enable_motion_propagation") base.enable_motion_propagation = value.get<bool>();
            else if (key == "enable_refinement") base.enable_refinement = value.get<bool>();
            else if (key == "enable_cycle_consistency") base.enable_cycle_consistency = value.get<bool>();
            else if (key == "enable_box_adaptation") base.enable_box_adaptation = value.get<bool>();
            else if (key == "prompted_labels") base.prompted_labels = value.get<std::vector<std::string>>();
            else throw ConfigError("unknown engine config field '" + key + "'");
        } catch (const json::exception&) {
            throw ConfigError("engine config field '" + key + "' has the wrong type");
        }
    }
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// Tracks
// ---------------------------------------------------------------------------

enum class TrackState { Active, Terminated, Retired };

enum class TerminationReason {
    None,
    FlowInconsistent,   // consistent ratio below lambda_flow
    NoMotionSupport,    // no consistent pixel to fit motion
    LeftFrame,          // warped box has no area inside the image
    LowObjectness,      // refined objectness below the floor
    EmptySegmentation,  // segmenter returned nothing usable
};

inline const char* to_string(TerminationReason r) {
    switch (r) {
        case TerminationReason::None: return "none";
        case TerminationReason::FlowInconsistent: return "flow_inconsistent";
        case TerminationReason::NoMotionSupport: return "no_motion_support";
        case TerminationReason::LeftFrame: return "left_frame";
        case TerminationReason::LowObjectness: return "low_objectness";
        case TerminationReason::EmptySegmentation: return "empty_segmentation";
    }
    return "unknown";
}

struct TrackFrame {
    int frame = 0;
    BBox box;
    BinaryMask mask;

    friend bool operator==(const TrackFrame&, const TrackFrame&) = default;
};

struct Track {
    int id = 0;
    std::string label;
    TrackState state = TrackState::Active;
    std::vector<TrackFrame> history;  // ascending frames; gaps only across Re-ID merges
    double objectness = 0;
    std::deque<std::vector<double>> features;  // unit-norm, newest last
    int birth_frame = 0;  // first frame of this id
    int end_frame = 0;    // last frame with a mask
    TerminationReason termination = TerminationReason::None;
    std::optional<int> merged_into;
    std::vector<int> absorbed;  // ids merged into this track

    bool active() const { return state == TrackState::Active; }
    const TrackFrame& last() const { return history.back(); }
};

struct MergeEvent {
    int frame = 0;
    int kept_id = 0;
    int retired_id = 0;
    double similarity = 0;
};

struct TrackSet {
    std::vector<Track> tracks;  // tracks[i].id == i + 1
    std::vector<MergeEvent> merges;
    int frame = 0;  // frame the set is valid at

    Track& get(int id) { return tracks.at(static_cast<std::size_t>(id - 1)); }
    const Track& get(int id) const { return tracks.at(static_cast<std::size_t>(id - 1)); }

    std::vector<int> active_ids() const {
        std::vector<int> ids;
        for (const auto& t : tracks)
            if (t.active()) ids.push_back(t.id);
        return ids;
    }
    std::size_t active_count() const {
        return static_cast<std::size_t>(
            std::count_if(tracks.begin(), tracks.end(), [](const Track& t) { return t.active(); }));
    }
};

/// Per-step diagnostic of one hypothesis selection.
struct SelectionEvent {
    int frame = 0;  // frame the selected mask belongs to
    int track_id = 0;
    BBox prompt;
    std::size_t chosen = 0;
    std::size_t candidates = 0;
};

struct RunOptions {
    int jobs = 1;
    std::vector<SelectionEvent>* selections = nullptr;
};

namespace detail {

inline void push_feature(Track& tr, const std::vector<double>& f, int window) {
    tr.features.push_back(l2_normalized(f));
    while (static_cast<int>(tr.features.size()) > window) tr.features.pop_front();
}

inline Track make_track(int id, int frame, const Detection& d, const EngineConfig& cfg, int width,
                        int height) {
    Track tr;
    tr.id = id;
    tr.label = d.label;
    tr.birth_frame = tr.end_frame = frame;
    tr.objectness = d.objectness;
    BBox box = clip_box(d.box, width, height);
    if (cfg.enable_box_adaptation)
        if (auto tb = tight_box(d.mask)) box = *tb;
    tr.history.push_back({frame, box, d.mask});
    if (d.feature) push_feature(tr, *d.feature, cfg.feature_window);
    return tr;
}

// Detections passing their (possibly prompted) threshold, highest objectness
// first; equal scores keep provider order.
inline std::vector<const Detection*> eligible_detections(const std::vector<Detection>& dets,
                                                         const EngineConfig& cfg) {
    std::vector<const Detection*> out;
    for (const auto& d : dets) {
        const auto thr = cfg.threshold_for(d.label);
        if (thr && d.objectness >= *thr && !d.mask.empty()) out.push_back(&d);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection* a, const Detection* b) { return a->objectness > b->objectness; });
    return out;
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Re-throws provider/engine errors with the frame attached, keeping the type.
template <typename Fn>
auto with_frame_context(int frame, Fn&& fn) -> decltype(fn()) {
    const std::string prefix = "frame " + std::to_string(frame) + ": ";
    try {
        return fn();
    } catch (const MalformedMask& e) {
        throw MalformedMask(prefix + e.what());
    } catch (const LoadError& e) {
        throw LoadError(prefix + e.what());
    } catch (const InvalidInput& e) {
        throw InvalidInput(prefix + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(prefix + e.what());
    }
}

struct Propagation {
    std::optional<TrackFrame> next;
    TerminationReason reason = TerminationReason::None;
    double objectness = 0;
    std::optional<std::vector<double>> feature;
    std::optional<SelectionEvent> selection;
};

inline std::size_t select_hypothesis(const std::vector<const MaskHypothesis*>& hyps,
                                     const BinaryMask& previous, bool cycle_consistency) {
    std::size_t best = 0;
    double best_score = -2, best_quality = -1;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto& h = *hyps[i];
        const double score =
            cycle_consistency ? (h.backprojection ? mask_iou(*h.backprojection, previous) : -1.0) : 0.0;
        if (score > best_score || (score == best_score && h.quality > best_quality)) {
            best = i;
            best_score = score;
            best_quality = h.quality;
        }
    }
    return best;
}

// Steps (1)-(5) for one track: consistency check, motion warp, refinement,
// cycle-consistent segmentation and box adaptation.
template <PerceptionProvider P>
Propagation propagate_track(const Track& tr, int t, const P& provider, const FlowField& fwd,
                            const FlowField& bwd, const EngineConfig& cfg) {
    Propagation out;
    out.objectness = tr.objectness;
    const TrackFrame& cur = tr.last();
    const int w = provider.width(), h = provider.height();

    const ConsistencyResult cons = fb_consistency(cur.mask, fwd, bwd);
    if (cons.ratio < cfg.lambda_flow) {
        out.reason = TerminationReason::FlowInconsistent;
        return out;
    }

    BBox box = cur.box;
    if (cfg.enable_motion_propagation) {
        const MotionSupport support = collect_support(cons, fwd);
        const auto motion = fit_transform(support.points, support.displacements);
        if (!motion) {
            out.reason = TerminationReason::NoMotionSupport;
            return out;
        }
        const auto warped = warp_box(box, *motion, w, h);
        if (!warped) {
            out.reason = TerminationReason::LeftFrame;
            return out;
        }
        box = *warped;
    }

    if (cfg.enable_refinement) {
        RefinedBox rb = provider.refine(t + 1, box, tr.objectness);
        out.objectness = rb.objectness;
        if (rb.objectness < cfg.objectness_floor()) {
            out.reason = TerminationReason::LowObjectness;
            return out;
        }
        box = clip_box(rb.box, w, h);
        if (rb.snapped) out.feature = std::move(rb.feature);
    }

    const std::vector<MaskHypothesis> hyps = provider.segment(t + 1, box, t);
    std::vector<const MaskHypothesis*> usable;
    for (const auto& hy : hyps) {
        if (hy.mask.width() != w || hy.mask.height() != h)
            throw InvalidInput("segment returned a mask with wrong dimensions");
        if (!hy.mask.empty()) usable.push_back(&hy);
    }
    if (usable.empty()) {
        out.reason = TerminationReason::EmptySegmentation;
        return out;
    }
    const std::size_t chosen = select_hypothesis(usable, cur.mask, cfg.enable_cycle_consistency);
    const BinaryMask& mask = usable[chosen]->mask;
    std::size_t raw_index = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i)
        if (&hyps[i] == usable[chosen]) raw_index = i;
    out.selection = SelectionEvent{t + 1, tr.id, box, raw_index, hyps.size()};

    if (cfg.enable_box_adaptation) box = *tight_box(mask);
    out.next = TrackFrame{t + 1, box, mask};
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// One active track per detection above its confidence threshold, capped at
/// K by descending objectness.
inline TrackSet init_tracks(const std::vector<Detection>& detections, const EngineConfig& cfg,
                            int width, int height, int frame = 0) {
    cfg.validate();
    TrackSet ts;
    ts.frame = frame;
    for (const Detection* d : detail::eligible_detections(detections, cfg)) {
        if (static_cast<int>(ts.tracks.size()) >= cfg.max_tracks) break;
        ts.tracks.push_back(detail::make_track(static_cast<int>(ts.tracks.size()) + 1, frame, *d, cfg,
                                               width, height));
    }
    return ts;
}

/// Merges tracks spawned within the last t_reid frames into terminated tracks
/// whose appearance windows match above lambda_reid. Greedy by similarity;
/// ties go to the lower terminated id. `t` is the frame the set is valid at.
inline void reid_match(TrackSet& ts, int t, const EngineConfig& cfg) {
    struct Candidate {
        double sim;
        int terminated_id;
        int new_id;
    };
    std::vector<Candidate> cands;
    for (const auto& nt : ts.tracks) {
        if (!nt.active() || nt.features.empty()) continue;
        if (!nt.absorbed.empty()) continue;  // a re-identified track is not new
        if (t - nt.birth_frame >= cfg.t_reid) continue;
        for (const auto& old : ts.tracks) {
            if (old.state != TrackState::Terminated || old.features.empty()) continue;
            if (old.end_frame >= nt.birth_frame) continue;
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& a : old.features)
                for (const auto& b : nt.features) best = std::max(best, dot(a, b));
            if (best > cfg.lambda_reid) cands.push_back({best, old.id, nt.id});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        if (a.terminated_id != b.terminated_id) return a.terminated_id < b.terminated_id;
        return a.new_id < b.new_id;
    });
    std::set<int> used_old, used_new;
    for (const auto& c : cands) {
        if (used_old.contains(c.terminated_id) || used_new.contains(c.new_id)) continue;
        used_old.insert(c.terminated_id);
        used_new.insert(c.new_id);
        Track& old = ts.get(c.terminated_id);
        Track& nt = ts.get(c.new_id);
        old.history.insert(old.history.end(), std::make_move_iterator(nt.history.begin()),
                           std::make_move_iterator(nt.history.end()));
        nt.history.clear();
        old.state = TrackState::Active;
        old.termination = TerminationReason::None;
        old.end_frame = nt.end_frame;
        old.objectness = nt.objectness;
        for (auto& f : nt.features) {
            old.features.push_back(std::move(f));
            while (static_cast<int>(old.features.size()) > cfg.feature_window) old.features.pop_front();
        }
        nt.features.clear();
        old.absorbed.push_back(nt.id);
        nt.state = TrackState::Retired;
        nt.merged_into = old.id;
        ts.merges.push_back({t, old.id, nt.id, c.sim});
    }
}

/// Advances every active track from frame t to t+1, spawns tracks for
/// uncovered detections at t+1 and runs Re-ID.
template <PerceptionProvider P>
void step(TrackSet& ts, int t, const P& provider, const EngineConfig& cfg, const RunOptions& opt = {}) {
    detail::with_frame_context(t + 1, [&] {
        const int w = provider.width(), h = provider.height();
        const std::vector<int> active = ts.active_ids();
        std::vector<detail::Propagation> results(active.size());
        if (!active.empty()) {
            const FlowField& fwd = provider.flow_fwd(t);
            const FlowField& bwd = provider.flow_bwd(t);
            detail::parallel_for(active.size(), opt.jobs, [&](std::size_t i) {
                results[i] = detail::propagate_track(ts.get(active[i]), t, provider, fwd, bwd, cfg);
            });
        }
        for (std::size_t i = 0; i < active.size(); ++i) {
            Track& tr = ts.get(active[i]);
            auto& r = results[i];
            tr.objectness = r.objectness;
            if (!r.next) {
                tr.state = TrackState::Terminated;
                tr.termination = r.reason;
                continue;
            }
            tr.history.push_back(std::move(*r.next));
            tr.end_frame = t + 1;
            if (r.feature) detail::push_feature(tr, *r.feature, cfg.feature_window);
            if (opt.selections && r.selection) opt.selections->push_back(*r.selection);
        }

        // Spawn against the updated masks at t+1.
        const std::vector<Detection> dets = provider.detect(t + 1, cfg.prompted_labels);
        std::vector<int> current = ts.active_ids();
        for (const Detection* d : detail::eligible_detections(dets, cfg)) {
            if (static_cast<int>(current.size()) >= cfg.max_tracks) break;
            if (d->mask.width() != w || d->mask.height() != h)
                throw InvalidInput("detection mask dimensions differ from frame");
            const bool covered = std::any_of(current.begin(), current.end(), [&](int id) {
                return mask_iou(d->mask, ts.get(id).last().mask) >= cfg.lambda_spawn;
            });
            if (covered) continue;
            const int id = static_cast<int>(ts.tracks.size()) + 1;
            ts.tracks.push_back(detail::make_track(id, t + 1, *d, cfg, w, h));
            current.push_back(id);
        }

        reid_match(ts, t + 1, cfg);
        ts.frame = t + 1;
    });
}

/// Full online pass: initialize on frame 0, then step through the video.
template <PerceptionProvider P>
TrackSet run(const P& provider, const EngineConfig& cfg, const RunOptions& opt = {}) {
    cfg.validate();
    if (provider.frame_count() < 1) throw InvalidInput("provider has no frames");
    TrackSet ts = detail::with_frame_context(0, [&] {
        return init_tracks(provider.detect(0, cfg.prompted_labels), cfg, provider.width(),
                           provider.height());
    });
    for (int t = 0; t + 1 < provider.frame_count(); ++t) step(ts, t, provider, cfg, opt);
    return ts;
}

}  // namespace ovtrack
