#pragma once

// Synthetic gaze/affect generator standing in for a private video corpus.
// A fixed library of latent regimes (energy, tempo, bias) drives both the
// gaze signal and the labels, so the labels are recoverable from gaze.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "glass/gaze_data.hpp"

namespace glass {

struct SynthConfig {
    double duration_s = 60;
    double fps = 30;
    std::size_t regimes = 6;
    // Regimes are shared by every subject generated with the same library seed.
    std::uint64_t library_seed = 7;
    double segment_min_s = 8;
    double segment_max_s = 20;
    double amplitude_scale = 1.0;
    double noise_scale = 1.0;
    double ou_theta = 1.5;
    double ou_sigma = 0.04;
    double gaps_per_min = 1.0;
    double label_noise = 0.03;
    double behavior_threshold = 0.4;
    double behavior_events_per_min = 6;
    std::string subject_id = "s000";

    void validate() const
    {
        if (!(duration_s > 0)) throw ConfigError("synthetic duration must be positive");
        if (!(fps > 0)) throw ConfigError("synthetic fps must be positive");
        if (regimes == 0) throw ConfigError("need at least one regime");
        if (!(segment_min_s > 0) || segment_max_s < segment_min_s) throw ConfigError("bad segment length range");
        if (amplitude_scale < 0 || noise_scale < 0 || ou_theta <= 0 || ou_sigma < 0 || gaps_per_min < 0 ||
            label_noise < 0 || behavior_events_per_min < 0)
            throw ConfigError("synthetic rates and scales must be non-negative");
    }
};

struct Regime {
    double energy = 0;  // drives amplitude, arousal and behavior firing
    double tempo = 0;   // drives frequency, dominance and behavior class
    double bias = 0;    // drives gaze offset, valence and brow lowering
    std::array<double, 2> offset{};             // x, y
    std::array<std::array<double, 2>, 2> amp{};   // [axis][component]
    std::array<std::array<double, 2>, 2> freq{};  // Hz

    VADLabel vad() const { return {0.15 + 0.7 * bias, 0.15 + 0.7 * energy, 0.2 + 0.6 * tempo}; }

    BehaviorClass behavior() const
    {
        if (tempo < 1.0 / 3.0) return BehaviorClass::sigh;
        if (tempo < 2.0 / 3.0) return BehaviorClass::cry;
        return BehaviorClass::laugh;
    }
};

inline std::vector<Regime> make_regime_library(const SynthConfig& cfg)
{
    std::mt19937_64 rng(cfg.library_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<Regime> lib(cfg.regimes);
    for (std::size_t r = 0; r < cfg.regimes; ++r) {
        auto& g = lib[r];
        // Spread latent factors evenly, then jitter, so small libraries still
        // cover the label range.
        const double base = cfg.regimes > 1 ? static_cast<double>(r) / static_cast<double>(cfg.regimes - 1) : 0.5;
        g.energy = std::clamp(base + 0.15 * (u01(rng) - 0.5), 0.0, 1.0);
        g.tempo = u01(rng);
        g.bias = u01(rng);
        g.offset = {-0.25 + 0.5 * g.bias + 0.1 * (u01(rng) - 0.5), 0.3 * (u01(rng) - 0.5)};
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t c = 0; c < 2; ++c) {
                g.amp[a][c] = cfg.amplitude_scale * (0.03 + 0.12 * g.energy) * (0.6 + 0.8 * u01(rng)) * (c == 0 ? 1.0 : 0.5);
                g.freq[a][c] = (0.15 + 1.0 * g.tempo) * (0.8 + 0.45 * u01(rng)) * (c == 0 ? 1.0 : 2.3);
            }
    }
    return lib;
}

struct SynthOutput {
    GazeSequence sequence;
    Annotations annotations;
    // Regime index active at each frame.
    std::vector<std::size_t> regime_of_frame;
};

inline SynthOutput synth_gaze(const SynthConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    const auto lib = make_regime_library(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const auto frames = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fps));
    const double dt = 1.0 / cfg.fps;
    constexpr double two_pi = 2.0 * std::numbers::pi;

    struct Segment {
        std::size_t begin, end, regime;
        std::array<std::array<double, 2>, 2> phase;
    };
    std::vector<Segment> segments;
    for (std::size_t b = 0; b < frames;) {
        const double len_s = cfg.segment_min_s + (cfg.segment_max_s - cfg.segment_min_s) * u01(rng);
        const std::size_t e = std::min(frames, b + std::max<std::size_t>(1, static_cast<std::size_t>(len_s * cfg.fps)));
        Segment s{b, e, static_cast<std::size_t>(u01(rng) * static_cast<double>(cfg.regimes)) % cfg.regimes, {}};
        for (auto& ax : s.phase)
            for (auto& ph : ax) ph = two_pi * u01(rng);
        segments.push_back(s);
        b = e;
    }

    SynthOutput out;
    auto& seq = out.sequence;
    seq.fps = cfg.fps;
    seq.subject_id = cfg.subject_id;
    seq.frames.resize(frames);
    out.regime_of_frame.resize(frames);

    const double decay = std::exp(-cfg.ou_theta * dt);
    const double ou_step = cfg.noise_scale * cfg.ou_sigma * std::sqrt((1.0 - decay * decay) / (2.0 * cfg.ou_theta));
    std::array<double, 2> ou{};
    double blink_left = 0;
    for (const auto& s : segments) {
        const auto& g = lib[s.regime];
        const double blink_rate = 0.2 + 0.4 * g.energy;  // partial blinks per second
        for (std::size_t i = s.begin; i < s.end; ++i) {
            const double t = static_cast<double>(i) * dt;
            std::array<double, 2> xy{};
            for (std::size_t a = 0; a < 2; ++a) {
                ou[a] = ou[a] * decay + ou_step * n01(rng);
                double v = g.offset[a] + ou[a];
                for (std::size_t c = 0; c < 2; ++c) v += g.amp[a][c] * std::sin(two_pi * g.freq[a][c] * t + s.phase[a][c]);
                xy[a] = v;
            }
            auto& f = seq.frames[i];
            f.index = i;
            f.t = t;
            const double lx = xy[0] + 0.03, rx = xy[0] - 0.03, y = xy[1];
            f.gaze = {lx, y, -std::sqrt(std::max(0.0, 1.0 - lx * lx - y * y)),
                      rx, y, -std::sqrt(std::max(0.0, 1.0 - rx * rx - y * y))};
            if (blink_left <= 0 && u01(rng) < blink_rate * dt) blink_left = 5;
            double au45 = 0;
            if (blink_left > 0) {
                au45 = 3.0 * (1.0 - std::abs(blink_left - 3.0) / 3.0);
                blink_left -= 1;
            }
            f.face_aux = {au45, std::max(0.0, 1.5 * g.energy + 0.3 * n01(rng)),
                          std::max(0.0, 1.2 * g.energy + 0.3 * n01(rng)),
                          std::max(0.0, 1.5 * (1.0 - g.bias) + 0.3 * n01(rng))};
            out.regime_of_frame[i] = s.regime;
        }
    }

    // Tracking failures: short runs of invalid frames.
    std::poisson_distribution<int> gap_count(cfg.gaps_per_min * cfg.duration_s / 60.0);
    const int gaps = cfg.gaps_per_min > 0 ? gap_count(rng) : 0;
    for (int k = 0; k < gaps; ++k) {
        const auto start = static_cast<std::size_t>(u01(rng) * static_cast<double>(frames));
        const std::size_t len = 3 + static_cast<std::size_t>(u01(rng) * 6);
        for (std::size_t i = start; i < std::min(frames, start + len); ++i) seq.frames[i].valid = false;
    }

    auto noisy = [&](double v) { return std::clamp(v + cfg.label_noise * n01(rng), 0.0, 1.0); };
    for (const auto& s : segments) {
        const auto& g = lib[s.regime];
        // Sentences laid end to end inside the segment with short pauses.
        double cursor = static_cast<double>(s.begin) + cfg.fps * (0.5 + u01(rng));
        while (true) {
            const double len = cfg.fps * (3.0 + 7.0 * u01(rng));
            if (cursor + len > static_cast<double>(s.end)) break;
            const auto v = g.vad();
            out.annotations.vad.push_back({static_cast<std::size_t>(cursor), static_cast<std::size_t>(cursor + len),
                                           VADLabel{noisy(v.valence), noisy(v.arousal), noisy(v.dominance)}});
            cursor += len + cfg.fps * (1.0 + 3.0 * u01(rng));
        }
        if (g.energy >= cfg.behavior_threshold && cfg.behavior_events_per_min > 0) {
            const double seg_min = static_cast<double>(s.end - s.begin) / cfg.fps / 60.0;
            std::poisson_distribution<int> events(cfg.behavior_events_per_min * seg_min);
            const int count = events(rng);
            for (int k = 0; k < count; ++k) {
                const auto f = s.begin + static_cast<std::size_t>(u01(rng) * static_cast<double>(s.end - s.begin));
                out.annotations.behavior.push_back({f, g.behavior()});
            }
        }
    }
    std::sort(out.annotations.behavior.begin(), out.annotations.behavior.end(),
              [](const BehaviorEvent& a, const BehaviorEvent& b) { return a.frame < b.frame; });
    return out;
}

} // namespace glass
