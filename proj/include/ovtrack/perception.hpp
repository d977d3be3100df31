#pragma once

#include <array>
#include <concepts>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovtrack/core_io.hpp"
#include "ovtrack/core_types.hpp"

namespace ovtrack {

/// One candidate segmentation for a box prompt. `backprojection` is the
/// mask the same hypothesis induces on the previous frame, when available.
struct MaskHypothesis {
    BinaryMask mask;
    std::optional<BinaryMask> backprojection;
    double quality = 0;

    friend bool operator==(const MaskHypothesis&, const MaskHypothesis&) = default;
};

/// Output of the box-regression stage. `snapped` is true when the box was
/// grounded on a detection; `feature` then carries that detection's
/// appearance vector.
struct RefinedBox {
    BBox box;
    double objectness = 0;
    bool snapped = false;
    std::optional<std::vector<double>> feature;
};

struct RefineOptions {
    double snap_threshold = 0.5;
    double decay = 0.8;

    friend bool operator==(const RefineOptions&, const RefineOptions&) = default;
};

/// Capability bundle the engine consumes: detector, box regression,
/// promptable segmenter and a flow estimator. fwd(t) maps frame t to t+1,
/// bwd(t) maps t+1 back to t. Implementations are read-only after
/// construction and must answer identical queries identically.
template <typename P>
concept PerceptionProvider = requires(const P& p, int t, const BBox& box, double prior,
                                      std::span<const std::string> prompt) {
    { p.frame_count() } -> std::convertible_to<int>;
    { p.width() } -> std::convertible_to<int>;
    { p.height() } -> std::convertible_to<int>;
    { p.detect(t, prompt) } -> std::same_as<std::vector<Detection>>;
    { p.refine(t, box, prior) } -> std::same_as<RefinedBox>;
    { p.segment(t, box, t) } -> std::same_as<std::vector<MaskHypothesis>>;
    { p.flow_fwd(t) } -> std::convertible_to<const FlowField&>;
    { p.flow_bwd(t) } -> std::convertible_to<const FlowField&>;
};

/// Emulated box regression: snap to the detection with the highest box IoU
/// if that IoU reaches the threshold, otherwise keep the query and decay the
/// prior objectness geometrically (floored at 0).
inline RefinedBox snap_to_detections(std::span<const Detection> detections, const BBox& query,
                                     double prior_objectness, const RefineOptions& opt) {
    double best = -1;
    const Detection* match = nullptr;
    for (const auto& d : detections) {
        const double iou = box_iou(query, d.box);
        if (iou > best) {
            best = iou;
            match = &d;
        }
    }
    if (match && best >= opt.snap_threshold)
        return {match->box, match->objectness, true, match->feature};
    return {query, std::max(0.0, opt.decay * prior_objectness), false, std::nullopt};
}

using PromptBucket = std::array<int, 4>;

/// Integer bucket of a prompt box; hypotheses are recorded and looked up by it.
inline PromptBucket prompt_bucket(const BBox& b) {
    return {static_cast<int>(std::lround(b.x0)), static_cast<int>(std::lround(b.y0)),
            static_cast<int>(std::lround(b.x1)), static_cast<int>(std::lround(b.y1))};
}

inline BBox bucket_box(const PromptBucket& k) { return {double(k[0]), double(k[1]), double(k[2]), double(k[3])}; }

// ---------------------------------------------------------------------------
// Recorded provider data and its on-disk form
// ---------------------------------------------------------------------------

struct HypothesisRecord {
    int frame = 0;  // frame the hypotheses live on (t+1)
    PromptBucket prompt_box{};
    std::vector<MaskHypothesis> hypotheses;
};

struct ProviderRecords {
    int frames = 0;
    int width = 0;
    int height = 0;
    std::vector<std::vector<Detection>> detections;  // [frame]
    std::vector<FlowField> fwd;                      // [t], t = 0..frames-2
    std::vector<FlowField> bwd;                      // [t], t = 0..frames-2
    std::vector<HypothesisRecord> hypotheses;
    RefineOptions refine;
};

inline json detection_to_json(const Detection& d) {
    json j{{"box", box_to_json(d.box)},
           {"objectness", d.objectness},
           {"label", d.label},
           {"mask", mask_to_json(d.mask)}};
    if (d.feature) j["feature"] = *d.feature;
    return j;
}

inline Detection detection_from_json(const json& j) {
    Detection d;
    d.box = box_from_json(j.at("box"));
    d.objectness = j.at("objectness").get<double>();
    d.label = j.at("label").get<std::string>();
    d.mask = mask_from_json(j.at("mask"));
    if (j.contains("feature") && !j.at("feature").is_null())
        d.feature = j.at("feature").get<std::vector<double>>();
    return d;
}

inline json hypothesis_to_json(const MaskHypothesis& h) {
    return json{{"mask", mask_to_json(h.mask)},
                {"backprojection", h.backprojection ? mask_to_json(*h.backprojection) : json(nullptr)},
                {"quality", h.quality}};
}

inline MaskHypothesis hypothesis_from_json(const json& j) {
    MaskHypothesis h;
    h.mask = mask_from_json(j.at("mask"));
    if (j.contains("backprojection") && !j.at("backprojection").is_null())
        h.backprojection = mask_from_json(j.at("backprojection"));
    h.quality = j.at("quality").get<double>();
    return h;
}

struct ManifestPaths {
    std::string detections = "detections.ndjson";
    std::string flow_fwd_pattern = "flow/fwd_%06d.flo";
    std::string flow_bwd_pattern = "flow/bwd_%06d.flo";
    std::string hypotheses = "hypotheses.ndjson";
};

/// Writes manifest.json plus the detection/hypothesis NDJSON and .flo files
/// into `dir`. Returns the manifest path.
inline std::filesystem::path write_provider_records(const ProviderRecords& rec,
                                                    const std::filesystem::path& dir,
                                                    const ManifestPaths& paths = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::string out;
        for (int t = 0; t < rec.frames; ++t) {
            json line{{"frame", t}, {"detections", json::array()}};
            if (t < static_cast<int>(rec.detections.size()))
                for (const auto& d : rec.detections[t]) line["detections"].push_back(detection_to_json(d));
            out += line.dump() + "\n";
        }
        write_text_file(dir / paths.detections, out);
    }
    for (std::size_t t = 0; t < rec.fwd.size(); ++t) {
        const fs::path fp = dir / format_frame_pattern(paths.flow_fwd_pattern, static_cast<int>(t));
        const fs::path bp = dir / format_frame_pattern(paths.flow_bwd_pattern, static_cast<int>(t));
        fs::create_directories(fp.parent_path());
        fs::create_directories(bp.parent_path());
        write_flo_file(fp, rec.fwd[t]);
        write_flo_file(bp, rec.bwd[t]);
    }
    json manifest{{"frames", rec.frames},
                  {"width", rec.width},
                  {"height", rec.height},
                  {"detections", paths.detections},
                  {"flow_fwd_pattern", paths.flow_fwd_pattern},
                  {"flow_bwd_pattern", paths.flow_bwd_pattern},
                  {"refine", {{"snap_threshold", rec.refine.snap_threshold}, {"decay", rec.refine.decay}}}};
    if (!rec.hypotheses.empty()) {
        std::string out;
        for (const auto& h : rec.hypotheses) {
            json line{{"frame", h.frame}, {"prompt_box", h.prompt_box}, {"hypotheses", json::array()}};
            for (const auto& hy : h.hypotheses) line["hypotheses"].push_back(hypothesis_to_json(hy));
            out += line.dump() + "\n";
        }
        write_text_file(dir / paths.hypotheses, out);
        manifest["hypotheses"] = paths.hypotheses;
    }
    const fs::path mp = dir / "manifest.json";
    write_text_file(mp, manifest.dump(2) + "\n");
    return mp;
}

namespace detail {

template <typename F>
void for_each_ndjson_line(const std::filesystem::path& p, F&& fn) {
    std::istringstream in(read_text_file(p));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw LoadError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j, lineno);
    }
}

}  // namespace detail

/// Loads a manifest and everything it references. Throws LoadError naming
/// the missing frame or file, MalformedMask for bad RLE.
inline ProviderRecords load_provider_records(const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    json m;
    try {
        m = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }
    const fs::path dir = manifest_path.parent_path();
    ProviderRecords rec;
    try {
        rec.frames = m.at("frames").get<int>();
        rec.width = m.at("width").get<int>();
        rec.height = m.at("height").get<int>();
    } catch (const json::exception& e) {
        throw LoadError(manifest_path.string() + ": " + e.what());
    }
    if (rec.frames < 1 || rec.width < 1 || rec.height < 1)
        throw LoadError(manifest_path.string() + ": frames, width and height must be positive");
    if (m.contains("refine")) {
        rec.refine.snap_threshold = m["refine"].value("snap_threshold", rec.refine.snap_threshold);
        rec.refine.decay = m["refine"].value("decay", rec.refine.decay);
    }

    const fs::path det_path = dir / m.value("detections", std::string("detections.ndjson"));
    std::vector<std::optional<std::vector<Detection>>> per_frame(rec.frames);
    detail::for_each_ndjson_line(det_path, [&](const json& j, int lineno) {
        const std::string where = det_path.string() + ":" + std::to_string(lineno);
        int t = 0;
        std::vector<Detection> dets;
        try {
            t = j.at("frame").get<int>();
            for (const auto& dj : j.at("detections")) dets.push_back(detection_from_json(dj));
        } catch (const MalformedMask& e) {
            throw MalformedMask(where + ": " + e.what());
        } catch (const std::exception& e) {
            throw LoadError(where + ": " + e.what());
        }
        if (t < 0 || t >= rec.frames) throw LoadError(where + ": frame " + std::to_string(t) + " out of range");
        for (const auto& d : dets) {
            try {
                validate_detection(d, rec.width, rec.height);
            } catch (const InvalidInput& e) {
                throw LoadError(where + ": " + e.what());
            }
        }
        per_frame[t] = std::move(dets);
    });
    rec.detections.resize(rec.frames);
    for (int t = 0; t < rec.frames; ++t) {
        if (!per_frame[t])
            throw LoadError(det_path.string() + ": missing detection record for frame " + std::to_string(t));
        rec.detections[t] = std::move(*per_frame[t]);
    }

    const std::string fwd_pat = m.value("flow_fwd_pattern", std::string("fwd_%06d.flo"));
    const std::string bwd_pat = m.value("flow_bwd_pattern", std::string("bwd_%06d.flo"));
    for (int t = 0; t + 1 < rec.frames; ++t) {
        for (auto [pat, out] : {std::pair{&fwd_pat, &rec.fwd}, std::pair{&bwd_pat, &rec.bwd}}) {
            FlowField f = read_flo_file(dir / format_frame_pattern(*pat, t));
            if (f.width() != rec.width || f.height() != rec.height)
                throw LoadError(format_frame_pattern(*pat, t) + ": flow dimensions differ from manifest");
            out->push_back(std::move(f));
        }
    }

    if (m.contains("hypotheses") && !m["hypotheses"].is_null()) {
        const fs::path hp = dir / m["hypotheses"].get<std::string>();
        detail::for_each_ndjson_line(hp, [&](const json& j, int lineno) {
            const std::string where = hp.string() + ":" + std::to_string(lineno);
            HypothesisRecord r;
            try {
                r.frame = j.at("frame").get<int>();
                r.prompt_box = j.at("prompt_box").get<PromptBucket>();
                for (const auto& hj : j.at("hypotheses")) r.hypotheses.push_back(hypothesis_from_json(hj));
            } catch (const MalformedMask& e) {
                throw MalformedMask(where + ": " + e.what());
            } catch (const std::exception& e) {
                throw LoadError(where + ": " + e.what());
            }
            for (const auto& h : r.hypotheses) {
                const bool ok = h.mask.width() == rec.width && h.mask.height() == rec.height &&
                                (!h.backprojection || (h.backprojection->width() == rec.width &&
                                                       h.backprojection->height() == rec.height));
                if (!ok) throw LoadError(where + ": hypothesis mask dimensions differ from frame");
            }
            rec.hypotheses.push_back(std::move(r));
        });
    }
    return rec;
}

/// Replays recorded model outputs.
class FileProvider {
public:
    explicit FileProvider(ProviderRecords rec) : rec_(std::move(rec)) {
        for (std::size_t i = 0; i < rec_.hypotheses.size(); ++i) {
            const auto& h = rec_.hypotheses[i];
            index_.try_emplace({h.frame, h.prompt_box}, i);
        }
    }

    static FileProvider load(const std::filesystem::path& manifest) {
        return FileProvider(load_provider_records(manifest));
    }

    const ProviderRecords& records() const { return rec_; }
    int frame_count() const { return rec_.frames; }
    int width() const { return rec_.width; }
    int height() const { return rec_.height; }

    std::vector<Detection> detect(int t, std::span<const std::string> /*prompt*/) const {
        check_frame(t);
        return rec_.detections[t];
    }

    RefinedBox refine(int t, const BBox& box, double prior_objectness) const {
        check_frame(t);
        return snap_to_detections(rec_.detections[t], box, prior_objectness, rec_.refine);
    }

    /// Recorded hypotheses for (t_next, bucket(prompt)); otherwise the mask of
    /// the best-overlapping detection clipped to the prompt box.
    std::vector<MaskHypothesis> segment(int t_next, const BBox& prompt, int /*t_prev*/) const {
        check_frame(t_next);
        if (auto it = index_.find({t_next, prompt_bucket(prompt)}); it != index_.end())
            return rec_.hypotheses[it->second].hypotheses;
        const auto& dets = rec_.detections[t_next];
        const Detection* best = nullptr;
        double best_iou = 0;
        for (const auto& d : dets) {
            const double iou = box_iou(prompt, d.box);
            if (iou > best_iou) {
                best_iou = iou;
                best = &d;
            }
        }
        if (!best) return {};
        const Bitmap clipped =
            bitmap_and(rle_decode(best->mask), rasterize_box(prompt, rec_.width, rec_.height));
        if (clipped.count() == 0) return {};
        return {MaskHypothesis{rle_encode(clipped), std::nullopt, best->objectness}};
    }

    const FlowField& flow_fwd(int t) const {
        if (t < 0 || t >= static_cast<int>(rec_.fwd.size()))
            throw InvalidInput("no forward flow for frame " + std::to_string(t));
        return rec_.fwd[t];
    }
    const FlowField& flow_bwd(int t) const {
        if (t < 0 || t >= static_cast<int>(rec_.bwd.size()))
            throw InvalidInput("no backward flow for frame " + std::to_string(t));
        return rec_.bwd[t];
    }

private:
    void check_frame(int t) const {
        if (t < 0 || t >= rec_.frames) throw InvalidInput("frame " + std::to_string(t) + " out of range");
    }

    ProviderRecords rec_;
    std::map<std::pair<int, PromptBucket>, std::size_t> index_;
};

static_assert(PerceptionProvider<FileProvider>);

/// Wraps a provider and keeps every segment() answer, so a session can be
/// replayed later through FileProvider. Not thread-safe; run single-job.
template <PerceptionProvider Inner>
class RecordingProvider {
public:
    explicit RecordingProvider(const Inner& inner) : inner_(inner) {}

    int frame_count() const { return inner_.frame_count(); }
    int width() const { return inner_.width(); }
    int height() const { return inner_.height(); }
    std::vector<Detection> detect(int t, std::span<const std::string> prompt) const {
        return inner_.detect(t, prompt);
    }
    RefinedBox refine(int t, const BBox& box, double prior) const { return inner_.refine(t, box, prior); }
    std::vector<MaskHypothesis> segment(int t_next, const BBox& prompt, int t_prev) const {
        auto hyps = inner_.segment(t_next, prompt, t_prev);
        const auto key = std::pair{t_next, prompt_bucket(prompt)};
        if (!seen_.contains(key)) {
            seen_.emplace(key, recorded_.size());
            recorded_.push_back({t_next, key.second, hyps});
        }
        return hyps;
    }
    const FlowField& flow_fwd(int t) const { return inner_.flow_fwd(t); }
    const FlowField& flow_bwd(int t) const { return inner_.flow_bwd(t); }

    /// Recorded hypotheses sorted by (frame, bucket).
    std::vector<HypothesisRecord> recorded() const {
        std::vector<HypothesisRecord> out;
        for (const auto& [key, idx] : seen_) out.push_back(recorded_[idx]);
        return out;
    }

private:
    const Inner& inner_;
    mutable std::vector<HypothesisRecord> recorded_;
    mutable std::map<std::pair<int, PromptBucket>, std::size_t> seen_;
};

}  // namespace ovtrack
