#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include "ovtrack/core_io.hpp"
#include "ovtrack/engine.hpp"

namespace ovtrack {

/// Per-frame masks of one track, as read from or written to track NDJSON.
struct TrackRecord {
    int id = 0;
    std::string label;
    double score = 1.0;
    std::map<int, TrackFrame> frames;

    int first_frame() const { return frames.begin()->first; }
    int last_frame() const { return frames.rbegin()->first; }
};

/// Track output of one video: {"frame", "id", "label", "box", "mask"} per line.
struct TrackTable {
    int width = 0;
    int height = 0;
    std::map<int, TrackRecord> tracks;

    bool empty() const { return tracks.empty(); }
    std::optional<int> max_frame() const {
        std::optional<int> m;
        for (const auto& [id, tr] : tracks)
            if (!tr.frames.empty()) m = std::max(m.value_or(0), tr.last_frame());
        return m;
    }
};

inline TrackTable to_table(const TrackSet& ts, int width, int height) {
    TrackTable tab{width, height, {}};
    for (const auto& tr : ts.tracks) {
        if (tr.history.empty()) continue;
        TrackRecord rec{tr.id, tr.label, 1.0, {}};
        for (const auto& f : tr.history) rec.frames.emplace(f.frame, f);
        tab.tracks.emplace(tr.id, std::move(rec));
    }
    return tab;
}

/// Lines ordered by frame, then id.
inline std::string tracks_to_ndjson(const TrackTable& tab) {
    std::map<int, std::vector<std::pair<int, const TrackFrame*>>> by_frame;
    for (const auto& [id, rec] : tab.tracks)
        for (const auto& [f, tf] : rec.frames) by_frame[f].push_back({id, &tf});
    std::string out;
    for (const auto& [f, entries] : by_frame) {
        for (const auto& [id, tf] : entries) {
            json line{{"frame", f},
                      {"id", id},
                      {"label", tab.tracks.at(id).label},
                      {"box", box_to_json(tf->box)},
                      {"mask", mask_to_json(tf->mask)}};
            out += line.dump() + "\n";
        }
    }
    return out;
}

inline std::string tracks_to_ndjson(const TrackSet& ts, int width, int height) {
    return tracks_to_ndjson(to_table(ts, width, height));
}

/// Parses track NDJSON. An optional per-line "score" is averaged into the
/// track score (used for prediction caps). Throws LoadError/MalformedMask.
inline TrackTable tracks_from_ndjson(const std::string& text, const std::string& source = "<tracks>") {
    TrackTable tab;
    std::map<int, std::pair<double, int>> score_sums;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        try {
            const json j = json::parse(line);
            TrackFrame tf;
            tf.frame = j.at("frame").get<int>();
            const int id = j.at("id").get<int>();
            tf.box = box_from_json(j.at("box"));
            tf.mask = mask_from_json(j.at("mask"));
            if (tab.width == 0 && tab.height == 0) {
                tab.width = tf.mask.width();
                tab.height = tf.mask.height();
            } else if (tf.mask.width() != tab.width || tf.mask.height() != tab.height) {
                throw InvalidInput("mask dimensions differ from earlier lines");
            }
            auto& rec = tab.tracks[id];
            rec.id = id;
            rec.label = j.at("label").get<std::string>();
            if (j.contains("score")) {
                auto& s = score_sums[id];
                s.first += j["score"].get<double>();
                s.second += 1;
            }
            if (!rec.frames.emplace(tf.frame, std::move(tf)).second)
                throw InvalidInput("duplicate (frame, id) entry");
        } catch (const MalformedMask& e) {
            throw MalformedMask(where + ": " + e.what());
        } catch (const std::exception& e) {
            throw LoadError(where + ": " + e.what());
        }
    }
    for (auto& [id, s] : score_sums) tab.tracks[id].score = s.first / s.second;
    return tab;
}

inline TrackTable read_tracks_file(const std::filesystem::path& p) {
    return tracks_from_ndjson(read_text_file(p), p.string());
}

inline const char* to_string(TrackState s) {
    switch (s) {
        case TrackState::Active: return "active";
        case TrackState::Terminated: return "terminated";
        case TrackState::Retired: return "retired";
    }
    return "unknown";
}

/// Per-track birth/end frames and merge lineage.
inline json summary_json(const TrackSet& ts) {
    json tracks = json::array();
    for (const auto& tr : ts.tracks) {
        json t{{"id", tr.id},
               {"label", tr.label},
               {"state", to_string(tr.state)},
               {"birth_frame", tr.birth_frame},
               {"end_frame", tr.end_frame},
               {"frames", tr.history.size()},
               {"termination", to_string(tr.termination)},
               {"absorbed", tr.absorbed}};
        t["merged_into"] = tr.merged_into ? json(*tr.merged_into) : json(nullptr);
        tracks.push_back(std::move(t));
    }
    json merges = json::array();
    for (const auto& m : ts.merges)
        merges.push_back({{"frame", m.frame}, {"kept_id", m.kept_id}, {"retired_id", m.retired_id},
                          {"similarity", m.similarity}});
    return json{{"final_frame", ts.frame}, {"tracks", tracks}, {"merges", merges}};
}

}  // namespace ovtrack
