#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ovtrack/core_io.hpp"
#include "ovtrack/core_types.hpp"
#include "ovtrack/hungarian.hpp"
#include "ovtrack/track_io.hpp"

namespace ovtrack {

/// Prediction and ground truth are not comparable (dimensions, frame range).
struct ProtocolMismatch : Error {
    using Error::Error;
};

enum class Protocol { Vos, OpenWorld, Hota };

inline Protocol protocol_from_string(const std::string& s) {
    if (s == "vos") return Protocol::Vos;
    if (s == "openworld") return Protocol::OpenWorld;
    if (s == "hota") return Protocol::Hota;
    throw ConfigError("unknown protocol '" + s + "' (expected vos, openworld or hota)");
}

inline const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::Vos: return "vos";
        case Protocol::OpenWorld: return "openworld";
        case Protocol::Hota: return "hota";
    }
    return "unknown";
}

inline const BinaryMask* mask_at(const TrackRecord& r, int t) {
    const auto it = r.frames.find(t);
    return it == r.frames.end() ? nullptr : &it->second.mask;
}

// ---------------------------------------------------------------------------
// Per-frame measures
// ---------------------------------------------------------------------------

/// Foreground pixels with a 4-neighbour in the background or outside the image.
inline Bitmap boundary(const Bitmap& m) {
    Bitmap b(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            const bool edge = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 ||
                              !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
            if (edge) b.set(x, y);
        }
    return b;
}

inline int boundary_tolerance(int width, int height) {
    return static_cast<int>(std::ceil(0.008 * std::hypot(width, height)));
}

namespace detail {

// Pixels within Euclidean distance r of any set pixel.
inline Bitmap dilate_disk(const Bitmap& m, int r) {
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) offsets.push_back({dx, dy});
    Bitmap out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            for (auto [dx, dy] : offsets)
                if (out.contains(x + dx, y + dy)) out.set(x + dx, y + dy);
        }
    return out;
}

inline std::size_t count_and(const Bitmap& a, const Bitmap& b) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < a.bits.size(); ++k) n += (a.bits[k] && b.bits[k]);
    return n;
}

}  // namespace detail

/// Boundary F-score of `pred` against `gt`, tolerance r pixels.
inline double f_score(const BinaryMask& pred, const BinaryMask& gt, int r) {
    if (pred.width() != gt.width() || pred.height() != gt.height())
        throw InvalidInput("f_score: mask dimensions differ");
    const Bitmap bp = boundary(rle_decode(pred));
    const Bitmap bg = boundary(rle_decode(gt));
    const std::size_t np = bp.count(), ng = bg.count();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const double precision = static_cast<double>(detail::count_and(bp, detail::dilate_disk(bg, r))) / np;
    const double recall = static_cast<double>(detail::count_and(bg, detail::dilate_disk(bp, r))) / ng;
    if (precision + recall == 0) return 0.0;
    return 2 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Track-level measures
// ---------------------------------------------------------------------------

/// Summed intersections over summed unions across both lifespans.
inline double st_mask_iou(const TrackRecord& a, const TrackRecord& b) {
    std::size_t inter = 0, uni = 0;
    for (const auto& [t, fa] : a.frames) {
        const std::size_t area_a = fa.mask.area();
        if (const BinaryMask* mb = mask_at(b, t)) {
            const std::size_t i = intersection_area(fa.mask, *mb);
            inter += i;
            uni += area_a + mb->area() - i;
        } else {
            uni += area_a;
        }
    }
    for (const auto& [t, fb] : b.frames)
        if (!a.frames.contains(t)) uni += fb.mask.area();
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

/// GT id -> prediction id.
using TrackMatching = std::map<int, int>;

namespace detail {

inline std::vector<const TrackRecord*> records(const TrackTable& tab) {
    std::vector<const TrackRecord*> v;
    for (const auto& [id, r] : tab.tracks)
        if (!r.frames.empty()) v.push_back(&r);
    return v;
}

inline TrackMatching assign(const std::vector<const TrackRecord*>& gts,
                            const std::vector<const TrackRecord*>& preds, const std::vector<double>& score) {
    TrackMatching m;
    const Assignment a = hungarian_max(score, static_cast<int>(gts.size()), static_cast<int>(preds.size()));
    for (std::size_t g = 0; g < gts.size(); ++g)
        if (a.row_to_col[g] >= 0) m[gts[g]->id] = preds[a.row_to_col[g]]->id;
    return m;
}

}  // namespace detail

/// Semi-supervised video protocol: each GT track is matched on the mask IoU
/// at its own first frame.
inline TrackMatching match_first_frame(const TrackTable& pred, const TrackTable& gt) {
    const auto gts = detail::records(gt), preds = detail::records(pred);
    std::vector<double> s(gts.size() * preds.size(), 0.0);
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const auto& [t0, first] = *gts[g]->frames.begin();
        for (std::size_t p = 0; p < preds.size(); ++p)
            if (const BinaryMask* m = mask_at(*preds[p], t0)) s[g * preds.size() + p] = mask_iou(first.mask, *m);
    }
    return detail::assign(gts, preds, s);
}

/// Open-world protocol: Hungarian on spatio-temporal mask IoU.
inline TrackMatching match_st_iou(const TrackTable& pred, const TrackTable& gt) {
    const auto gts = detail::records(gt), preds = detail::records(pred);
    std::vector<double> s(gts.size() * preds.size(), 0.0);
    for (std::size_t g = 0; g < gts.size(); ++g)
        for (std::size_t p = 0; p < preds.size(); ++p) s[g * preds.size() + p] = st_mask_iou(*gts[g], *preds[p]);
    return detail::assign(gts, preds, s);
}

struct TrackScore {
    int gt_id = 0;
    std::optional<int> pred_id;
    double j = 0, f = 0, st_iou = 0;
};

namespace detail {

// Mean of a per-frame measure over the GT track's frames; a missing
// prediction frame scores 0.
template <typename Measure>
double track_mean(const TrackRecord& gt, const TrackRecord* pred, Measure measure) {
    double sum = 0;
    for (const auto& [t, fg] : gt.frames) {
        const BinaryMask* mp = pred ? mask_at(*pred, t) : nullptr;
        if (mp) sum += measure(*mp, fg.mask);
    }
    return sum / static_cast<double>(gt.frames.size());
}

}  // namespace detail

/// Region similarity: mean over GT tracks of the mean per-frame mask IoU.
/// Absent when there is no GT.
inline std::optional<double> j_measure(const TrackTable& pred, const TrackTable& gt, const TrackMatching& m) {
    const auto gts = detail::records(gt);
    if (gts.empty()) return std::nullopt;
    double sum = 0;
    for (const TrackRecord* g : gts) {
        const auto it = m.find(g->id);
        const TrackRecord* p = it == m.end() ? nullptr : &pred.tracks.at(it->second);
        sum += detail::track_mean(*g, p, [](const BinaryMask& a, const BinaryMask& b) { return mask_iou(a, b); });
    }
    return sum / static_cast<double>(gts.size());
}

/// Contour accuracy, averaged like j_measure.
inline std::optional<double> f_measure(const TrackTable& pred, const TrackTable& gt, const TrackMatching& m) {
    const auto gts = detail::records(gt);
    if (gts.empty()) return std::nullopt;
    const int r = boundary_tolerance(gt.width, gt.height);
    double sum = 0;
    for (const TrackRecord* g : gts) {
        const auto it = m.find(g->id);
        const TrackRecord* p = it == m.end() ? nullptr : &pred.tracks.at(it->second);
        sum += detail::track_mean(*g, p, [r](const BinaryMask& a, const BinaryMask& b) { return f_score(a, b, r); });
    }
    return sum / static_cast<double>(gts.size());
}

inline constexpr std::array<double, 10> kRecallThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                          0.75, 0.80, 0.85, 0.90, 0.95};

struct RecallReport {
    std::array<double, 10> ar{};  // per threshold in kRecallThresholds
    double mar = 0;
    double at(double tau) const {
        for (std::size_t k = 0; k < kRecallThresholds.size(); ++k)
            if (std::abs(kRecallThresholds[k] - tau) < 1e-9) return ar[k];
        throw InvalidInput("recall threshold not in the sweep");
    }
};

/// Keeps the `cap` highest-scoring predictions (ties by lower id).
inline TrackTable cap_predictions(const TrackTable& pred, std::size_t cap) {
    if (pred.tracks.size() <= cap) return pred;
    std::vector<const TrackRecord*> v;
    for (const auto& [id, r] : pred.tracks) v.push_back(&r);
    std::stable_sort(v.begin(), v.end(), [](const TrackRecord* a, const TrackRecord* b) { return a->score > b->score; });
    TrackTable out{pred.width, pred.height, {}};
    for (std::size_t k = 0; k < cap; ++k) out.tracks.emplace(v[k]->id, *v[k]);
    return out;
}

/// Class-agnostic average recall of GT tracks. Per threshold, the matching
/// maximises the number of pairs reaching it, then their summed st-IoU.
inline std::optional<RecallReport> average_recall(const TrackTable& pred_in, const TrackTable& gt,
                                                  std::size_t cap = 100) {
    const auto gts = detail::records(gt);
    if (gts.empty()) return std::nullopt;
    const TrackTable pred = cap_predictions(pred_in, cap);
    const auto preds = detail::records(pred);
    const std::size_t ng = gts.size(), np = preds.size();
    std::vector<double> st(ng * np, 0.0);
    for (std::size_t g = 0; g < ng; ++g)
        for (std::size_t p = 0; p < np; ++p) st[g * np + p] = st_mask_iou(*gts[g], *preds[p]);
    RecallReport rep;
    for (std::size_t k = 0; k < kRecallThresholds.size(); ++k) {
        const double tau = kRecallThresholds[k];
        std::vector<double> s(st.size());
        for (std::size_t q = 0; q < st.size(); ++q) s[q] = st[q] >= tau ? 1.0 + st[q] : 0.0;
        const Assignment a = hungarian_max(s, static_cast<int>(ng), static_cast<int>(np));
        std::size_t hit = 0;
        for (std::size_t g = 0; g < ng; ++g) hit += a.row_to_col[g] >= 0;
        rep.ar[k] = static_cast<double>(hit) / ng;
    }
    double sum = 0;
    for (double v : rep.ar) sum += v;
    rep.mar = sum / rep.ar.size();
    return rep;
}

// ---------------------------------------------------------------------------
// HOTA
// ---------------------------------------------------------------------------

inline constexpr int kHotaAlphaCount = 19;

inline double hota_alpha(int k) { return 0.05 * (k + 1); }

struct HotaReport {
    double hota = 0, deta = 0, assa = 0, loca = 0;
    std::array<double, kHotaAlphaCount> hota_alpha{}, deta_alpha{}, assa_alpha{}, loca_alpha{};
};

/// Copy of `tab` restricted to tracks whose label is in `labels`.
inline TrackTable filter_labels(const TrackTable& tab, const std::set<std::string>& labels) {
    TrackTable out{tab.width, tab.height, {}};
    for (const auto& [id, r] : tab.tracks)
        if (labels.contains(r.label)) out.tracks.emplace(id, r);
    return out;
}

/// Higher Order Tracking Accuracy on masks. Per-frame matching maximises
/// global alignment x IoU; a match counts at alpha when IoU >= alpha. With
/// `class_aware`, pairs with different labels have zero similarity.
inline HotaReport hota(const TrackTable& pred, const TrackTable& gt, bool class_aware = false) {
    HotaReport rep;
    const auto gts = detail::records(gt), preds = detail::records(pred);
    if (gts.empty() && preds.empty()) {
        rep.hota_alpha.fill(1.0);
        rep.deta_alpha.fill(1.0);
        rep.assa_alpha.fill(1.0);
        rep.loca_alpha.fill(1.0);
        rep.hota = rep.deta = rep.assa = rep.loca = 1.0;
        return rep;
    }
    if (gts.empty() || preds.empty()) return rep;

    const std::size_t ng = gts.size(), np = preds.size();
    std::set<int> frame_set;
    for (const auto* r : gts)
        for (const auto& [t, f] : r->frames) frame_set.insert(t);
    for (const auto* r : preds)
        for (const auto& [t, f] : r->frames) frame_set.insert(t);

    struct FrameData {
        std::vector<std::size_t> g, p;
        std::vector<double> sim;  // g.size() x p.size()
    };
    std::vector<FrameData> frames;
    std::vector<double> potential(ng * np, 0.0), gt_count(ng, 0.0), pred_count(np, 0.0);
    for (int t : frame_set) {
        FrameData fd;
        for (std::size_t g = 0; g < ng; ++g)
            if (gts[g]->frames.contains(t)) fd.g.push_back(g);
        for (std::size_t p = 0; p < np; ++p)
            if (preds[p]->frames.contains(t)) fd.p.push_back(p);
        fd.sim.assign(fd.g.size() * fd.p.size(), 0.0);
        for (std::size_t a = 0; a < fd.g.size(); ++a)
            for (std::size_t b = 0; b < fd.p.size(); ++b) {
                const TrackRecord& rg = *gts[fd.g[a]];
                const TrackRecord& rp = *preds[fd.p[b]];
                if (class_aware && rg.label != rp.label) continue;
                fd.sim[a * fd.p.size() + b] = mask_iou(*mask_at(rg, t), *mask_at(rp, t));
            }
        std::vector<double> row(fd.g.size(), 0.0), col(fd.p.size(), 0.0);
        for (std::size_t a = 0; a < fd.g.size(); ++a)
            for (std::size_t b = 0; b < fd.p.size(); ++b) {
                row[a] += fd.sim[a * fd.p.size() + b];
                col[b] += fd.sim[a * fd.p.size() + b];
            }
        for (std::size_t a = 0; a < fd.g.size(); ++a)
            for (std::size_t b = 0; b < fd.p.size(); ++b) {
                const double s = fd.sim[a * fd.p.size() + b];
                if (s > 0) potential[fd.g[a] * np + fd.p[b]] += s / (row[a] + col[b] - s);
            }
        for (std::size_t g : fd.g) gt_count[g] += 1;
        for (std::size_t p : fd.p) pred_count[p] += 1;
        frames.push_back(std::move(fd));
    }
    std::vector<double> global(ng * np, 0.0);
    for (std::size_t g = 0; g < ng; ++g)
        for (std::size_t p = 0; p < np; ++p) {
            const double pm = potential[g * np + p];
            global[g * np + p] = pm / (gt_count[g] + pred_count[p] - pm);
        }

    std::array<double, kHotaAlphaCount> tp{}, fn{}, fp{}, loc{};
    std::vector<std::vector<double>> matches(kHotaAlphaCount, std::vector<double>(ng * np, 0.0));
    for (const auto& fd : frames) {
        const std::size_t a_n = fd.g.size(), b_n = fd.p.size();
        if (a_n == 0 || b_n == 0) {
            for (int k = 0; k < kHotaAlphaCount; ++k) {
                fn[k] += a_n;
                fp[k] += b_n;
            }
            continue;
        }
        std::vector<double> score(a_n * b_n);
        for (std::size_t a = 0; a < a_n; ++a)
            for (std::size_t b = 0; b < b_n; ++b)
                score[a * b_n + b] = global[fd.g[a] * np + fd.p[b]] * fd.sim[a * b_n + b];
        const Assignment as = hungarian_max(score, static_cast<int>(a_n), static_cast<int>(b_n), -1.0);
        for (int k = 0; k < kHotaAlphaCount; ++k) {
            const double alpha = hota_alpha(k);
            std::size_t n_tp = 0;
            for (std::size_t a = 0; a < a_n; ++a) {
                const int b = as.row_to_col[a];
                if (b < 0) continue;
                const double s = fd.sim[a * b_n + b];
                if (s >= alpha - std::numeric_limits<double>::epsilon()) {
                    ++n_tp;
                    loc[k] += s;
                    matches[k][fd.g[a] * np + fd.p[b]] += 1;
                }
            }
            tp[k] += n_tp;
            fn[k] += a_n - n_tp;
            fp[k] += b_n - n_tp;
        }
    }

    double hs = 0, ds = 0, as_sum = 0, ls = 0;
    for (int k = 0; k < kHotaAlphaCount; ++k) {
        double ass = 0;
        for (std::size_t g = 0; g < ng; ++g)
            for (std::size_t p = 0; p < np; ++p) {
                const double mc = matches[k][g * np + p];
                if (mc > 0) ass += mc * (mc / (gt_count[g] + pred_count[p] - mc));
            }
        const double denom = tp[k] + fn[k] + fp[k];
        rep.deta_alpha[k] = denom > 0 ? tp[k] / denom : 0.0;
        rep.assa_alpha[k] = tp[k] > 0 ? ass / tp[k] : 0.0;
        rep.loca_alpha[k] = tp[k] > 0 ? loc[k] / tp[k] : 0.0;
        rep.hota_alpha[k] = std::sqrt(rep.deta_alpha[k] * rep.assa_alpha[k]);
        hs += rep.hota_alpha[k];
        ds += rep.deta_alpha[k];
        as_sum += rep.assa_alpha[k];
        ls += rep.loca_alpha[k];
    }
    rep.hota = hs / kHotaAlphaCount;
    rep.deta = ds / kHotaAlphaCount;
    rep.assa = as_sum / kHotaAlphaCount;
    rep.loca = ls / kHotaAlphaCount;
    return rep;
}

/// Identity switches: per frame, GT and predictions are matched at mask
/// IoU >= 0.5; a GT track switches when its matched prediction id differs
/// from the one it was last matched to.
inline int id_switches(const TrackTable& pred, const TrackTable& gt, double threshold = 0.5) {
    const auto gts = detail::records(gt), preds = detail::records(pred);
    std::set<int> frame_set;
    for (const auto* r : gts)
        for (const auto& [t, f] : r->frames) frame_set.insert(t);
    std::map<int, int> last;
    int switches = 0;
    for (int t : frame_set) {
        std::vector<const TrackRecord*> g, p;
        for (const auto* r : gts)
            if (r->frames.contains(t)) g.push_back(r);
        for (const auto* r : preds)
            if (r->frames.contains(t)) p.push_back(r);
        std::vector<double> s(g.size() * p.size(), 0.0);
        for (std::size_t a = 0; a < g.size(); ++a)
            for (std::size_t b = 0; b < p.size(); ++b) {
                const double iou = mask_iou(*mask_at(*g[a], t), *mask_at(*p[b], t));
                s[a * p.size() + b] = iou >= threshold ? iou : 0.0;
            }
        const Assignment as = hungarian_max(s, static_cast<int>(g.size()), static_cast<int>(p.size()));
        for (std::size_t a = 0; a < g.size(); ++a) {
            if (as.row_to_col[a] < 0) continue;
            const int pid = p[as.row_to_col[a]]->id;
            const auto it = last.find(g[a]->id);
            if (it != last.end() && it->second != pid) ++switches;
            last[g[a]->id] = pid;
        }
    }
    return switches;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalOptions {
    Protocol protocol = Protocol::Vos;
    bool class_aware = false;
    std::size_t prediction_cap = 100;
    std::map<std::string, std::set<std::string>> label_subsets;  // e.g. "com", "unc"
};

struct MetricReport {
    Protocol protocol = Protocol::Vos;
    bool class_aware = false;
    std::optional<double> j, f, jf, st_iou;
    std::optional<RecallReport> recall;
    HotaReport hota;
    std::map<std::string, HotaReport> hota_subsets;
    int id_switches = 0;
    std::vector<TrackScore> per_track;
    std::size_t gt_tracks = 0, pred_tracks = 0;
};

/// Rejects pairs whose dimensions differ or whose predictions reach past the
/// last frame (`frames` when known, otherwise the GT's last frame).
inline void check_compatible(const TrackTable& pred, const TrackTable& gt, std::optional<int> frames = std::nullopt) {
    if (!pred.empty() && !gt.empty() && (pred.width != gt.width || pred.height != gt.height))
        throw ProtocolMismatch("prediction and ground truth frame dimensions differ");
    for (const auto* tab : {&pred, &gt})
        for (const auto& [id, r] : tab->tracks)
            if (!r.frames.empty() && r.first_frame() < 0)
                throw ProtocolMismatch("negative frame index in track " + std::to_string(id));
    const int limit = frames ? *frames - 1 : gt.max_frame().value_or(-1);
    if (frames || !gt.empty())
        if (const auto pm = pred.max_frame(); pm && *pm > limit)
            throw ProtocolMismatch("prediction frame " + std::to_string(*pm) + " outside ground-truth range 0.." +
                                   std::to_string(limit));
    if (frames)
        if (const auto gm = gt.max_frame(); gm && *gm > limit)
            throw ProtocolMismatch("ground-truth frame " + std::to_string(*gm) + " outside video range 0.." +
                                   std::to_string(limit));
}

inline MetricReport evaluate(const TrackTable& pred, const TrackTable& gt, const EvalOptions& opt = {}) {
    MetricReport rep;
    rep.protocol = opt.protocol;
    rep.class_aware = opt.class_aware;
    rep.gt_tracks = detail::records(gt).size();
    rep.pred_tracks = detail::records(pred).size();
    const TrackMatching m =
        opt.protocol == Protocol::Vos ? match_first_frame(pred, gt) : match_st_iou(pred, gt);
    rep.j = j_measure(pred, gt, m);
    rep.f = f_measure(pred, gt, m);
    if (rep.j && rep.f) rep.jf = (*rep.j + *rep.f) / 2;
    const int r = boundary_tolerance(gt.width, gt.height);
    double st_sum = 0;
    for (const TrackRecord* g : detail::records(gt)) {
        TrackScore ts;
        ts.gt_id = g->id;
        const TrackRecord* p = nullptr;
        if (const auto it = m.find(g->id); it != m.end()) {
            ts.pred_id = it->second;
            p = &pred.tracks.at(it->second);
        }
        ts.j = detail::track_mean(*g, p, [](const BinaryMask& a, const BinaryMask& b) { return mask_iou(a, b); });
        ts.f = detail::track_mean(*g, p, [r](const BinaryMask& a, const BinaryMask& b) { return f_score(a, b, r); });
        ts.st_iou = p ? st_mask_iou(*g, *p) : 0.0;
        st_sum += ts.st_iou;
        rep.per_track.push_back(ts);
    }
    if (!rep.per_track.empty()) rep.st_iou = st_sum / rep.per_track.size();
    rep.recall = average_recall(pred, gt, opt.prediction_cap);
    rep.hota = hota(pred, gt, opt.class_aware);
    for (const auto& [name, labels] : opt.label_subsets)
        rep.hota_subsets[name] = hota(filter_labels(pred, labels), filter_labels(gt, labels), opt.class_aware);
    rep.id_switches = id_switches(pred, gt);
    return rep;
}

inline json hota_to_json(const HotaReport& h) {
    return json{{"HOTA", h.hota},          {"DetA", h.deta},         {"AssA", h.assa},
                {"LocA", h.loca},          {"HOTA_alpha", h.hota_alpha}, {"DetA_alpha", h.deta_alpha},
                {"AssA_alpha", h.assa_alpha}, {"LocA_alpha", h.loca_alpha}};
}

inline json report_to_json(const MetricReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j{{"protocol", to_string(r.protocol)},
           {"class_aware", r.class_aware},
           {"gt_tracks", r.gt_tracks},
           {"pred_tracks", r.pred_tracks},
           {"J", opt(r.j)},
           {"F", opt(r.f)},
           {"J&F", opt(r.jf)},
           {"st_iou", opt(r.st_iou)},
           {"id_switches", r.id_switches},
           {"hota", hota_to_json(r.hota)}};
    if (r.recall) {
        json ar = json::object();
        for (std::size_t k = 0; k < kRecallThresholds.size(); ++k) {
            char key[16];
            std::snprintf(key, sizeof key, "AR@%.2f", kRecallThresholds[k]);
            ar[key] = r.recall->ar[k];
        }
        j["recall"] = ar;
        j["mAR"] = r.recall->mar;
    } else {
        j["recall"] = nullptr;
        j["mAR"] = nullptr;
    }
    json subsets = json::object();
    for (const auto& [name, h] : r.hota_subsets) subsets[name] = hota_to_json(h);
    j["hota_subsets"] = subsets;
    json tracks = json::array();
    for (const auto& t : r.per_track)
        tracks.push_back({{"gt_id", t.gt_id},
                          {"pred_id", t.pred_id ? json(*t.pred_id) : json(nullptr)},
                          {"J", t.j},
                          {"F", t.f},
                          {"st_iou", t.st_iou}});
    j["per_track"] = tracks;
    return j;
}

inline std::string report_csv_header() {
    return "protocol,class_aware,gt_tracks,pred_tracks,JF,J,F,st_iou,AR50,AR75,mAR,HOTA,DetA,AssA,LocA,id_switches";
}

/// Scores x100 except HOTA components; absent values are empty cells.
inline std::string report_csv_row(const MetricReport& r) {
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", 100.0 * *v);
        return std::string(buf);
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    std::string s = std::string(to_string(r.protocol)) + "," + (r.class_aware ? "1" : "0") + "," +
                    std::to_string(r.gt_tracks) + "," + std::to_string(r.pred_tracks) + "," + pct(r.jf) + "," +
                    pct(r.j) + "," + pct(r.f) + "," + pct(r.st_iou) + ",";
    if (r.recall)
        s += pct(r.recall->at(0.5)) + "," + pct(r.recall->at(0.75)) + "," + pct(r.recall->mar) + ",";
    else
        s += ",,,";
    s += num(r.hota.hota) + "," + num(r.hota.deta) + "," + num(r.hota.assa) + "," + num(r.hota.loca) + "," +
         std::to_string(r.id_switches);
    return s;
}

}  // namespace ovtrack
