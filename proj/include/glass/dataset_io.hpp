#pragma once

// Annotation records (one JSON object per line) and the run manifest
// (CSV: csv_path,annotation_path,subject_id,split).

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "glass/gaze_data.hpp"
#include "glass/synth.hpp"

namespace glass {

inline void write_annotations(const Annotations& ann, std::ostream& out)
{
    for (const auto& a : ann.vad) {
        nlohmann::json j;
        j["kind"] = "vad";
        j["start_frame"] = a.start_frame;
        j["end_frame"] = a.end_frame;
        j["values"] = {a.label.valence, a.label.arousal, a.label.dominance};
        out << j.dump() << '\n';
    }
    for (const auto& e : ann.behavior) {
        nlohmann::json j;
        j["kind"] = "behavior";
        j["start_frame"] = e.frame;
        j["end_frame"] = e.frame;
        j["values"] = {to_string(e.label)};
        out << j.dump() << '\n';
    }
}

inline Annotations read_annotations(std::istream& in)
{
    Annotations ann;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const auto kind = j.at("kind").get<std::string>();
            const auto start = j.at("start_frame").get<std::size_t>();
            const auto end = j.at("end_frame").get<std::size_t>();
            const auto& values = j.at("values");
            if (kind == "vad") {
                if (values.size() != 3) throw ParseError(row, "vad record needs 3 values");
                if (end < start) throw ParseError(row, "vad range ends before it starts");
                VADLabel v{values[0].get<double>(), values[1].get<double>(), values[2].get<double>()};
                for (double x : v.as_array())
                    if (x < 0 || x > 1) throw ParseError(row, "vad value outside [0, 1]");
                ann.vad.push_back({start, end, v});
            } else if (kind == "behavior") {
                if (values.size() != 1) throw ParseError(row, "behavior record needs one class");
                ann.behavior.push_back({start, behavior_from_string(values[0].get<std::string>())});
            } else {
                throw ParseError(row, "unknown annotation kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(row, e.what());
        } catch (const ConfigError& e) {
            throw ParseError(row, e.what());
        }
    }
    return ann;
}

struct ManifestEntry {
    std::filesystem::path csv_path;
    std::filesystem::path annotation_path;
    std::string subject_id;
    std::string split;  // "train" or "val"
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out)
{
    out << "csv_path,annotation_path,subject_id,split\n";
    for (const auto& e : entries)
        out << e.csv_path.generic_string() << ',' << e.annotation_path.generic_string() << ',' << e.subject_id << ','
            << e.split << '\n';
}

// Relative paths are resolved against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("csv_path");
    const auto header = detail::split_csv_line(line);
    const std::vector<std::string> want{"csv_path", "annotation_path", "subject_id", "split"};
    for (std::size_t i = 0; i < want.size(); ++i)
        if (i >= header.size() || header[i] != want[i]) throw SchemaError(want[i]);
    std::vector<ManifestEntry> out;
    std::size_t row = 1;
    const auto base = path.parent_path();
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 4) throw ParseError(row, "manifest rows need 4 fields");
        if (cells[3] != "train" && cells[3] != "val") throw ParseError(row, "split must be train or val");
        ManifestEntry e{cells[0], cells[1], cells[2], cells[3]};
        if (e.csv_path.is_relative()) e.csv_path = base / e.csv_path;
        if (!cells[1].empty() && e.annotation_path.is_relative()) e.annotation_path = base / e.annotation_path;
        out.push_back(std::move(e));
    }
    return out;
}

// Rejects a subject listed under both splits.
inline void check_disjoint_splits(const std::vector<ManifestEntry>& entries)
{
    std::set<std::string> train, val;
    for (const auto& e : entries) (e.split == "train" ? train : val).insert(e.subject_id);
    for (const auto& s : val)
        if (train.count(s)) throw ConfigError("validation subject " + s + " also appears in training");
}

struct LoadedSubject {
    GazeSequence sequence;
    Annotations annotations;
    std::string split;
};

inline std::vector<LoadedSubject> load_manifest(const std::filesystem::path& path, const ColumnMap& columns = {},
                                                double fps = 30.0)
{
    const auto entries = read_manifest(path);
    check_disjoint_splits(entries);
    std::vector<LoadedSubject> out;
    for (const auto& e : entries) {
        std::ifstream csv(e.csv_path);
        if (!csv) throw IoError("cannot open " + e.csv_path.string());
        LoadedSubject s;
        s.sequence = parse_openface_csv(csv, columns, fps, e.subject_id);
        if (!e.annotation_path.empty()) {
            std::ifstream ann(e.annotation_path);
            if (!ann) throw IoError("cannot open " + e.annotation_path.string());
            s.annotations = read_annotations(ann);
        }
        s.split = e.split;
        out.push_back(std::move(s));
    }
    return out;
}

struct CorpusSpec {
    std::size_t train_subjects = 80;
    std::size_t val_subjects = 6;
    std::uint64_t seed = 1000;
};

inline std::string subject_name(std::size_t i)
{
    std::string id = std::to_string(i);
    return "s" + std::string(id.size() < 3 ? 3 - id.size() : 0, '0') + id;
}

// Synthetic subjects s000.. in memory; the first train_subjects are the
// training split. Subject i uses generator seed spec.seed + i.
inline std::vector<LoadedSubject> synth_corpus(SynthConfig cfg, const CorpusSpec& spec)
{
    if (spec.train_subjects == 0 || spec.val_subjects == 0) throw ConfigError("corpus needs both splits");
    std::vector<LoadedSubject> out;
    for (std::size_t i = 0; i < spec.train_subjects + spec.val_subjects; ++i) {
        cfg.subject_id = subject_name(i);
        auto s = synth_gaze(cfg, spec.seed + i);
        out.push_back({std::move(s.sequence), std::move(s.annotations), i < spec.train_subjects ? "train" : "val"});
    }
    return out;
}

} // namespace glass
