#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "glass/errors.hpp"
#include "glass/tensor.hpp"

namespace glass {

inline constexpr std::size_t gaze_dims = 6;
inline constexpr std::size_t face_dims = 4;

struct GazeFrame {
    std::size_t index = 0;
    double t = 0;
    std::array<double, gaze_dims> gaze{};
    bool valid = true;
    // AU45 (blink), AU01, AU02, AU04 (brows) when the source had them.
    std::vector<double> face_aux;
};

struct NormStats {
    std::array<double, gaze_dims> mean{};
    std::array<double, gaze_dims> std{};
    std::array<bool, gaze_dims> clamped{};

    static constexpr double min_std = 1e-8;
};

struct GazeSequence {
    double fps = 30.0;
    std::vector<GazeFrame> frames;
    std::string subject_id;
    std::optional<NormStats> norm_stats;

    std::size_t size() const { return frames.size(); }
    bool has_face() const { return !frames.empty() && frames.front().face_aux.size() == face_dims; }
};

struct WindowSpec {
    std::size_t input_frames = 150;
    std::size_t output_frames = 150;
    std::size_t stride = 151;

    void validate() const
    {
        if (input_frames == 0 || output_frames == 0 || stride == 0)
            throw ConfigError("window spec needs positive input, output and stride");
    }
};

struct WindowOrigin {
    std::string subject_id;
    std::size_t start_frame = 0;
};

struct GazeWindow {
    Tensor<double> input;                  // T_i x 6
    std::optional<Tensor<double>> target;  // T_o x 6
    std::optional<Tensor<double>> face;    // T_i x 4
    WindowOrigin origin;
};

struct VADLabel {
    double valence = 0;
    double arousal = 0;
    double dominance = 0;

    std::array<double, 3> as_array() const { return {valence, arousal, dominance}; }
    bool operator==(const VADLabel&) const = default;
};

enum class BehaviorClass { laugh = 0, sigh = 1, cry = 2 };
inline constexpr std::size_t behavior_class_count = 3;

inline std::string to_string(BehaviorClass c)
{
    switch (c) {
    case BehaviorClass::laugh: return "laugh";
    case BehaviorClass::sigh: return "sigh";
    case BehaviorClass::cry: return "cry";
    }
    return "?";
}

inline BehaviorClass behavior_from_string(const std::string& s)
{
    if (s == "laugh") return BehaviorClass::laugh;
    if (s == "sigh") return BehaviorClass::sigh;
    if (s == "cry") return BehaviorClass::cry;
    throw ConfigError("unknown behavior class: " + s);
}

struct LabeledWindow {
    GazeWindow window;
    std::variant<VADLabel, BehaviorClass> label;
    // Windows cut from the same annotation share a group and are never
    // split across train and test.
    std::size_t group = 0;

    const VADLabel& vad() const { return std::get<VADLabel>(label); }
    BehaviorClass behavior() const { return std::get<BehaviorClass>(label); }
};

struct VadAnnotation {
    std::size_t start_frame = 0;  // half-open [start, end)
    std::size_t end_frame = 0;
    VADLabel label;
};

struct BehaviorEvent {
    std::size_t frame = 0;
    BehaviorClass label = BehaviorClass::laugh;
};

struct Annotations {
    std::vector<VadAnnotation> vad;
    std::vector<BehaviorEvent> behavior;
};

// ---------------------------------------------------------------------------
// OpenFace CSV

struct ColumnMap {
    std::string frame = "frame";
    std::string success = "success";
    std::string confidence = "confidence";
    std::array<std::string, gaze_dims> gaze{"gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z"};
    std::array<std::string, face_dims> face{"AU45_r", "AU01_r", "AU02_r", "AU04_r"};
    double min_confidence = 0.5;
};

namespace detail {

inline std::string trim(std::string s)
{
    auto issp = [](unsigned char c) { return std::isspace(c); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& cell, std::size_t row, const std::string& column)
{
    double v = 0;
    const char* b = cell.data();
    const char* e = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || cell.empty())
        throw ParseError(row, "non-numeric value '" + cell + "' in column " + column);
    return v;
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace detail

// One frame per data row, in row order. Row numbers in errors count the
// header as row 1.
inline GazeSequence parse_openface_csv(std::istream& in, const ColumnMap& columns = {}, double fps = 30.0,
                                       std::string subject_id = {})
{
    if (!(fps > 0)) throw ConfigError("fps must be positive");
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(columns.gaze[0]);
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);

    std::array<std::size_t, gaze_dims> gaze_col{};
    for (std::size_t k = 0; k < gaze_dims; ++k) {
        auto it = col.find(columns.gaze[k]);
        if (it == col.end()) throw SchemaError(columns.gaze[k]);
        gaze_col[k] = it->second;
    }
    auto optional_col = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = col.find(name);
        if (it == col.end()) return std::nullopt;
        return it->second;
    };
    const auto success_col = optional_col(columns.success);
    const auto confidence_col = optional_col(columns.confidence);
    std::optional<std::array<std::size_t, face_dims>> face_col;
    {
        std::array<std::size_t, face_dims> fc{};
        bool all = true;
        for (std::size_t k = 0; k < face_dims; ++k) {
            auto c = optional_col(columns.face[k]);
            if (!c) all = false;
            else fc[k] = *c;
        }
        if (all) face_col = fc;
    }

    GazeSequence seq;
    seq.fps = fps;
    seq.subject_id = std::move(subject_id);
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        auto cell = [&](std::size_t c, const std::string& name) -> const std::string& {
            if (c >= cells.size()) throw ParseError(row, "missing value for column " + name);
            return cells[c];
        };
        GazeFrame f;
        f.index = seq.frames.size();
        f.t = static_cast<double>(f.index) / fps;
        for (std::size_t k = 0; k < gaze_dims; ++k)
            f.gaze[k] = detail::parse_double(cell(gaze_col[k], columns.gaze[k]), row, columns.gaze[k]);
        if (success_col && detail::parse_double(cell(*success_col, columns.success), row, columns.success) == 0.0)
            f.valid = false;
        if (confidence_col &&
            detail::parse_double(cell(*confidence_col, columns.confidence), row, columns.confidence) < columns.min_confidence)
            f.valid = false;
        if (face_col) {
            f.face_aux.resize(face_dims);
            for (std::size_t k = 0; k < face_dims; ++k)
                f.face_aux[k] = detail::parse_double(cell((*face_col)[k], columns.face[k]), row, columns.face[k]);
        }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

inline void write_openface_csv(const GazeSequence& seq, std::ostream& out, const ColumnMap& columns = {})
{
    out << columns.frame << ",timestamp," << columns.success << ',' << columns.confidence;
    for (const auto& g : columns.gaze) out << ',' << g;
    const bool face = seq.has_face();
    if (face)
        for (const auto& f : columns.face) out << ',' << f;
    out << '\n';
    for (const auto& f : seq.frames) {
        out << f.index << ',' << detail::format_double(f.t) << ',' << (f.valid ? 1 : 0) << ','
            << (f.valid ? "0.98" : "0");
        for (double g : f.gaze) out << ',' << detail::format_double(g);
        if (face)
            for (double a : f.face_aux) out << ',' << detail::format_double(a);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Windows

namespace detail {

inline bool all_valid(const GazeSequence& seq, std::size_t begin, std::size_t end)
{
    for (std::size_t i = begin; i < end; ++i)
        if (!seq.frames[i].valid) return false;
    return true;
}

inline Tensor<double> gaze_block(const GazeSequence& seq, std::size_t begin, std::size_t count)
{
    Tensor<double> t(count, gaze_dims);
    for (std::size_t r = 0; r < count; ++r)
        for (std::size_t k = 0; k < gaze_dims; ++k) t(r, k) = seq.frames[begin + r].gaze[k];
    return t;
}

inline std::optional<Tensor<double>> face_block(const GazeSequence& seq, std::size_t begin, std::size_t count)
{
    if (!seq.has_face()) return std::nullopt;
    Tensor<double> t(count, face_dims);
    for (std::size_t r = 0; r < count; ++r)
        for (std::size_t k = 0; k < face_dims; ++k) t(r, k) = seq.frames[begin + r].face_aux[k];
    return t;
}

} // namespace detail

// Windows start at 0, stride, 2*stride, ...; any window touching an invalid
// frame is dropped.
inline std::vector<GazeWindow> extract_windows(const GazeSequence& seq, const WindowSpec& spec)
{
    spec.validate();
    std::vector<GazeWindow> out;
    const std::size_t span = spec.input_frames + spec.output_frames;
    for (std::size_t s = 0; s + span <= seq.size(); s += spec.stride) {
        if (!detail::all_valid(seq, s, s + span)) continue;
        GazeWindow w;
        w.input = detail::gaze_block(seq, s, spec.input_frames);
        w.target = detail::gaze_block(seq, s + spec.input_frames, spec.output_frames);
        w.face = detail::face_block(seq, s, spec.input_frames);
        w.origin = {seq.subject_id, s};
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline NormStats compute_norm_stats(const std::vector<GazeSequence>& seqs)
{
    std::array<double, gaze_dims> sum{}, sq{};
    std::size_t n = 0;
    for (const auto& s : seqs)
        for (const auto& f : s.frames) {
            if (!f.valid) continue;
            ++n;
            for (std::size_t k = 0; k < gaze_dims; ++k) sum[k] += f.gaze[k];
        }
    if (n == 0) throw ConfigError("normalization needs at least one valid frame");
    NormStats st;
    for (std::size_t k = 0; k < gaze_dims; ++k) st.mean[k] = sum[k] / static_cast<double>(n);
    for (const auto& s : seqs)
        for (const auto& f : s.frames) {
            if (!f.valid) continue;
            for (std::size_t k = 0; k < gaze_dims; ++k) sq[k] += (f.gaze[k] - st.mean[k]) * (f.gaze[k] - st.mean[k]);
        }
    for (std::size_t k = 0; k < gaze_dims; ++k) {
        st.std[k] = std::sqrt(sq[k] / static_cast<double>(n));
        if (st.std[k] < NormStats::min_std) {
            st.std[k] = NormStats::min_std;
            st.clamped[k] = true;
        }
    }
    return st;
}

inline GazeSequence normalize(GazeSequence seq, const NormStats& st)
{
    for (auto& f : seq.frames) {
        if (!f.valid) continue;
        // A clamped dimension carries no signal; it maps to exactly 0.
        for (std::size_t k = 0; k < gaze_dims; ++k)
            f.gaze[k] = st.clamped[k] ? 0.0 : (f.gaze[k] - st.mean[k]) / st.std[k];
    }
    seq.norm_stats = st;
    return seq;
}

inline GazeSequence denormalize(GazeSequence seq, const NormStats& st)
{
    for (auto& f : seq.frames) {
        if (!f.valid) continue;
        for (std::size_t k = 0; k < gaze_dims; ++k) f.gaze[k] = f.gaze[k] * st.std[k] + st.mean[k];
    }
    seq.norm_stats.reset();
    return seq;
}

// Maps a T x 6 block from normalized units back to raw gaze.
inline Tensor<double> denormalize_block(Tensor<double> block, const NormStats& st)
{
    for (std::size_t r = 0; r < block.rows(); ++r)
        for (std::size_t k = 0; k < gaze_dims; ++k) block(r, k) = block(r, k) * st.std[k] + st.mean[k];
    return block;
}

inline Tensor<double> normalize_block(Tensor<double> block, const NormStats& st)
{
    for (std::size_t r = 0; r < block.rows(); ++r)
        for (std::size_t k = 0; k < gaze_dims; ++k)
            block(r, k) = st.clamped[k] ? 0.0 : (block(r, k) - st.mean[k]) / st.std[k];
    return block;
}

// ---------------------------------------------------------------------------
// Labeled windows

inline void check_input_seconds(double input_seconds)
{
    if (input_seconds != 2.0 && input_seconds != 5.0 && input_seconds != 10.0)
        throw ConfigError("input seconds must be one of {2, 5, 10}");
}

// VAD: one window per stride position inside each sentence; behavior: one
// window before each event. Each window holds the input_seconds of frames
// immediately preceding its position.
inline std::vector<LabeledWindow> label_windows(const GazeSequence& seq, const Annotations& ann, double input_seconds,
                                                double stride_seconds = 3.0, std::size_t group_offset = 0)
{
    check_input_seconds(input_seconds);
    if (!(stride_seconds > 0)) throw ConfigError("stride seconds must be positive");
    const auto input = static_cast<std::size_t>(std::llround(input_seconds * seq.fps));
    const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(stride_seconds * seq.fps)));
    std::vector<LabeledWindow> out;
    auto cut = [&](std::size_t pos, std::variant<VADLabel, BehaviorClass> label, std::size_t group) {
        if (pos < input || pos > seq.size()) return;
        if (!detail::all_valid(seq, pos - input, pos)) return;
        LabeledWindow lw;
        lw.window.input = detail::gaze_block(seq, pos - input, input);
        lw.window.face = detail::face_block(seq, pos - input, input);
        lw.window.origin = {seq.subject_id, pos - input};
        lw.label = label;
        lw.group = group;
        out.push_back(std::move(lw));
    };
    std::size_t group = group_offset;
    for (const auto& a : ann.vad) {
        for (std::size_t p = a.start_frame; p < a.end_frame; p += stride) cut(p, a.label, group);
        ++group;
    }
    for (const auto& e : ann.behavior) cut(e.frame, e.label, group++);
    return out;
}

// ---------------------------------------------------------------------------
// Tail upsampling

struct UpsampleResult {
    std::vector<LabeledWindow> samples;
    std::size_t tail_before = 0;
    std::size_t tail_after = 0;
    bool empty_tail = false;
};

inline std::array<double, 3> vad_mean(const std::vector<LabeledWindow>& data)
{
    std::array<double, 3> m{};
    for (const auto& s : data) {
        auto v = s.vad().as_array();
        for (int k = 0; k < 3; ++k) m[k] += v[k];
    }
    for (auto& x : m) x /= static_cast<double>(data.size());
    return m;
}

// Indices of samples whose distance from the mean VAD has a z-score (over
// the distance distribution) of at least sd_threshold.
inline std::vector<std::size_t> vad_tail_indices(const std::vector<LabeledWindow>& data, double sd_threshold)
{
    const auto m = vad_mean(data);
    std::vector<double> dist(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto v = data[i].vad().as_array();
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (v[k] - m[k]) * (v[k] - m[k]);
        dist[i] = std::sqrt(s);
    }
    double mu = 0;
    for (double d : dist) mu += d;
    mu /= static_cast<double>(dist.size());
    double var = 0;
    for (double d : dist) var += (d - mu) * (d - mu);
    const double sd = std::sqrt(var / static_cast<double>(dist.size()));
    std::vector<std::size_t> tail;
    if (sd == 0) return tail;
    for (std::size_t i = 0; i < dist.size(); ++i)
        if ((dist[i] - mu) / sd >= sd_threshold) tail.push_back(i);
    return tail;
}

inline UpsampleResult upsample_tail(std::vector<LabeledWindow> data, double sd_threshold = 2.0,
                                    double target_ratio = 1.0 / 3.0, std::uint64_t seed = 0)
{
    if (data.size() < 2) throw ConfigError("upsampling needs at least two labels");
    if (!(target_ratio > 0 && target_ratio < 1)) throw ConfigError("target ratio must lie in (0, 1)");
    UpsampleResult res;
    const auto tail = vad_tail_indices(data, sd_threshold);
    res.tail_before = tail.size();
    if (tail.empty()) {
        res.empty_tail = true;
        res.samples = std::move(data);
        return res;
    }
    const double body = static_cast<double>(data.size() - tail.size());
    // Smallest tail count t with t / (t + body) >= target_ratio.
    const double need = target_ratio * body / (1.0 - target_ratio);
    const auto want = static_cast<std::size_t>(std::ceil(need - 1e-9));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, tail.size() - 1);
    const std::size_t original = data.size();
    for (std::size_t t = tail.size(); t < want; ++t) data.push_back(data[tail[pick(rng)]]);
    res.tail_after = tail.size() + (data.size() - original);
    std::shuffle(data.begin(), data.end(), rng);
    res.samples = std::move(data);
    return res;
}

} // namespace glass
