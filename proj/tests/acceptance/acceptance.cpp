// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. `acceptance 3 8` runs only criteria 3 and 8.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glass/cli.hpp"
#include "glass/grad_check.hpp"
#include "glass/sweep.hpp"
#include "glass/svg.hpp"
#include "support/oracles.hpp"

using namespace glass;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, fixed here rather than read from anywhere.
constexpr double kGradStep = 1e-4;
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradCoords = 64;
constexpr double kAlgebraTol = 1e-6;
constexpr double kOverfitFraction = 0.10;
constexpr std::size_t kOverfitSteps = 200;
constexpr double kOracleTol = 1e-10;
constexpr int kSeeds = 5;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 6)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

class Checks {
public:
    void expect(bool ok, const std::string& what)
    {
        if (!ok) failures_.push_back(what);
    }
    bool ok() const { return failures_.empty(); }
    std::string summary() const
    {
        std::string s;
        for (std::size_t i = 0; i < failures_.size() && i < 3; ++i) s += (i ? "; " : "") + failures_[i];
        return s;
    }

private:
    std::vector<std::string> failures_;
};

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

GazeWindow small_window(std::uint64_t seed)
{
    SynthConfig sc;
    sc.duration_s = 20;
    const auto out = synth_gaze(sc, seed);
    const auto st = compute_norm_stats({out.sequence});
    return extract_windows(normalize(out.sequence, st), WindowSpec{150, 150, 151}).at(0);
}

// 1. Analytic vs central-difference gradients of the joint loss, GLASS-small
// in double precision, half teacher forcing so both decoder inputs are live.
Outcome gradient_correctness()
{
    GlassModel<double> model(GlassConfig::small(), 3);
    const auto w = small_window(1);
    GradCheckOptions opt;
    opt.step = kGradStep;
    opt.tol = kGradTol;
    opt.max_coords_per_param = kGradCoords;
    opt.directional = true;
    const auto rep = grad_check(
        model.params(),
        [&](Tape<double>& t) { return window_loss(t, model, w.input, *w.target, 0.5, 11, LossConfig{}); }, opt);
    const bool all = rep.params_covered == model.params().size() && rep.directions_checked == model.params().size();
    std::string d = "max rel err " + fmt(rep.max_rel_error) + " over " + std::to_string(rep.checked) + " coords + " +
                    std::to_string(rep.directions_checked) + " directions, " + std::to_string(rep.params_covered) + "/" +
                    std::to_string(model.params().size()) + " tensors, " + std::to_string(rep.excluded) + " kink exclusions";
    if (!rep.passed) d += ", worst " + rep.worst.param + "[" + std::to_string(rep.worst.index) + "]";
    return {rep.passed && all && rep.max_rel_error < kGradTol, d};
}

// 2. Closed-form values.
Outcome algebraic_suite()
{
    Checks c;
    c.expect(huber(0.5, 1.0) == 0.125, "huber(0.5)");
    c.expect(huber(2.0, 1.0) == 1.5, "huber(2)");
    c.expect(tf_probability(0.0) == 1.0, "tf(0)");
    c.expect(std::abs(tf_probability(0.3) - 0.5) < 1e-12, "tf(0.3)");
    c.expect(tf_probability(0.6) == 0.0, "tf(0.6)");
    OptimConfig oc;
    c.expect(std::abs(lr_at(oc.warmup_steps, oc) - 3e-4) < 1e-15, "lr at warmup");
    c.expect(std::abs(lr_at(oc.total_steps, oc)) < 1e-15, "lr at total");

    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> q(1, 8), k(1, 8);
        for (auto& v : q.data()) v = n(rng);
        for (auto& v : k.data()) v = n(rng);
        const std::size_t a = rng() % 300, b = a + rng() % 300;
        const auto qa = rope_rotate(q, 1, {a}), kb = rope_rotate(k, 1, {b});
        const double lhs = dot(qa.row(0), kb.row(0));
        const double rhs = dot(q.row(0), rope_rotate(k, 1, {b - a}).row(0));
        c.expect(std::abs(lhs - rhs) < kAlgebraTol, "rope relative identity");
        for (std::size_t i = 0; i < 8; i += 2)
            c.expect(std::abs(std::hypot(qa(0, i), qa(0, i + 1)) - std::hypot(q(0, i), q(0, i + 1))) < kAlgebraTol,
                     "rope norm");
    }

    Tensor<double> win(150, 6);
    for (auto& v : win.data()) v = n(rng);
    for (std::size_t p = 2; p <= 150; ++p) {
        if (150 % p) continue;
        c.expect(unpatchify(patchify(win, p), p) == win, "patchify round trip P=" + std::to_string(p));
        c.expect(151 % p == 1, "151 mod " + std::to_string(p));
    }
    c.expect(PretrainConfig{}.stride == 151, "default stride");
    return {c.ok(), c.ok() ? "huber, tf, lr, rope, patchify, stride all exact" : c.summary()};
}

PretrainResult overfit_run(const PretrainData& data)
{
    PretrainConfig pc;
    pc.optim.base_lr = 3e-3;
    pc.optim.warmup_steps = 20;
    pc.optim.total_steps = kOverfitSteps;
    pc.optim.weight_decay = 0;
    pc.batch_size = 10;
    pc.eval_every = kOverfitSteps;
    pc.seed = 5;
    return run_pretraining(data, pc);
}

// 3. Ten windows, 200 steps, loss below a tenth of its first value; twice.
Outcome overfit()
{
    SynthConfig sc;
    std::vector<GazeSequence> seqs;
    for (int s = 0; s < 2; ++s) {
        sc.subject_id = "s" + std::to_string(s);
        seqs.push_back(synth_gaze(sc, 100 + s).sequence);
    }
    PretrainData data;
    data.stats = compute_norm_stats({seqs[0]});
    data.train = extract_windows(normalize(seqs[0], data.stats), WindowSpec{150, 150, 151});
    data.val = extract_windows(normalize(seqs[1], data.stats), WindowSpec{150, 150, 151});
    if (data.train.size() < 10) return {false, "corpus too short"};
    data.train.resize(10);

    const auto a = overfit_run(data);
    const auto b = overfit_run(data);
    const double first = a.log.front().train_loss, last = a.log.back().train_loss;
    bool same = a.log.size() == b.log.size();
    for (std::size_t i = 0; same && i < a.log.size(); ++i) same = a.log[i].train_loss == b.log[i].train_loss;
    same = same && encode_checkpoint(make_checkpoint(a.best_model)) == encode_checkpoint(make_checkpoint(b.best_model));
    const double ratio = last / first;
    return {ratio < kOverfitFraction && same,
            "loss " + fmt(first) + " -> " + fmt(last) + " (" + fmt(100 * ratio, 3) + "%) in " +
                std::to_string(a.log.size()) + " steps, rerun " + (same ? "identical" : "DIFFERS")};
}

// Standard synthetic corpus: 80 training and 6 validation subjects of 60 s.
std::vector<LoadedSubject> standard_corpus() { return synth_corpus(SynthConfig{}, CorpusSpec{80, 6, 1000}); }

PretrainConfig corpus_pretrain_config(std::uint64_t seed)
{
    PretrainConfig pc;
    pc.optim.base_lr = 2e-3;
    pc.optim.total_steps = 400;
    pc.optim.warmup_steps = 40;
    pc.batch_size = 16;
    pc.eval_every = 50;
    pc.seed = seed;
    return pc;
}

// 4. Forecast correlation above predict-previous, five pretraining seeds.
Outcome beats_predict_previous()
{
    const auto subjects = standard_corpus();
    const auto data = prepare_pretrain_data(subjects, GlassConfig::small(), 151);
    if (data.train.size() < 200 || data.val.size() < 50)
        return {false, "corpus gives " + std::to_string(data.train.size()) + "/" + std::to_string(data.val.size()) +
                           " windows"};
    double model = 0, base = 0;
    std::string per;
    for (int s = 0; s < kSeeds; ++s) {
        const auto r = run_pretraining(data, corpus_pretrain_config(static_cast<std::uint64_t>(s)));
        if (!r.best_val_corr || !r.baseline_val_corr) return {false, "undefined correlation"};
        model += *r.best_val_corr / kSeeds;
        base += *r.baseline_val_corr / kSeeds;
        per += (s ? "," : "") + fmt(*r.best_val_corr, 4);
    }
    return {model > base, std::to_string(data.train.size()) + " train / " + std::to_string(data.val.size()) +
                              " val windows, GLASS " + fmt(model) + " [" + per + "] vs predict-previous " + fmt(base)};
}

// 5. Encoders pretrained for 2 s and 5 s horizons, then a GRU VAD head on
// each over five split seeds.
Outcome horizon_ordering()
{
    const auto subjects = standard_corpus();
    std::map<std::string, double> mean_r;
    std::string per;
    for (const std::string horizon : {"2", "5"}) {
        auto pc = corpus_pretrain_config(0);
        pc.model = apply_sweep_value(GlassConfig::small(), SweepAxis::output_seconds, horizon);
        const auto data = prepare_pretrain_data(subjects, pc.model, pc.stride);
        const auto pre = run_pretraining(data, pc);
        const auto labeled = build_task_dataset(subjects, Task::vad, 5.0, data.stats);
        FinetuneConfig fc;
        fc.head = HeadKind::gru;
        fc.task = Task::vad;
        const auto runs = run_finetune_seeds(pre.best_model, labeled, fc, {0, 1, 2, 3, 4});
        double sum = 0;
        per += horizon + "s [";
        for (std::size_t i = 0; i < runs.size(); ++i) {
            if (!runs[i].pearson_r) return {false, "undefined r for " + horizon + " s, seed " + std::to_string(i)};
            sum += *runs[i].pearson_r;
            per += (i ? "," : "") + fmt(*runs[i].pearson_r, 4);
        }
        per += "] ";
        mean_r[horizon] = sum / static_cast<double>(runs.size());
    }
    const double diff = mean_r["5"] - mean_r["2"];
    return {diff >= 0, "mean r 5s " + fmt(mean_r["5"]) + " vs 2s " + fmt(mean_r["2"]) + ", diff " + fmt(diff) + "; " + per};
}

// 6. Library metrics against the naive oracles, plus the hand examples.
Outcome metric_oracles()
{
    Checks c;
    const auto hand = vad_metrics({{0.5, 0.5, 0.5}}, {{0.328, 0.410, 0.388}});
    c.expect(std::abs(hand.mae - (0.172 + 0.090 + 0.112) / 3) < 1e-15 && std::abs(hand.mae - 0.12467) < 5e-6,
             "mae hand example " + fmt(hand.mae));
    std::vector<BehaviorClass> labels, preds(30, BehaviorClass::laugh);
    for (int i = 0; i < 30; ++i) labels.push_back(static_cast<BehaviorClass>(i % 3));
    c.expect(std::abs(macro_f1(preds, labels) - 1.0 / 6.0) < 1e-15, "macro-f1 hand example");

    std::mt19937_64 rng(20240611);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        const auto inst = oracle::random_instance(rng);
        const auto got = vad_metrics(inst.vad_pred, inst.vad_label);
        const auto want = oracle::vad_metrics(inst.vad_pred, inst.vad_label);
        worst = std::max(worst, std::abs(got.mae - want.mae));
        c.expect(got.pearson_r.has_value() == want.r.has_value(), "r definedness");
        if (got.pearson_r && want.r) worst = std::max(worst, std::abs(*got.pearson_r - *want.r));
        worst = std::max(worst, std::abs(macro_f1(inst.cls_pred, inst.cls_label) -
                                         oracle::macro_f1(inst.cls_pred, inst.cls_label)));
    }
    c.expect(worst < kOracleTol, "oracle gap " + fmt(worst));
    return {c.ok(), c.ok() ? "hand examples exact, 100 random instances, max gap " + fmt(worst) : c.summary()};
}

LabeledWindow vad_sample(double v, double a, double d, std::size_t tag)
{
    LabeledWindow lw;
    lw.window.input = Tensor<double>(1, 6, static_cast<double>(tag));
    lw.label = VADLabel{v, a, d};
    lw.group = tag;
    return lw;
}

// 7. Ten far-off labels among ninety clustered ones.
Outcome upsampling()
{
    std::vector<LabeledWindow> data;
    for (std::size_t i = 0; i < 90; ++i) data.push_back(vad_sample(0.3, 0.4, 0.4, i));
    for (std::size_t i = 0; i < 10; ++i) data.push_back(vad_sample(0.95, 0.9, 0.05 + 0.01 * i, 1000 + i));
    const auto res = upsample_tail(data, 2.0, 1.0 / 3.0, 42);
    std::size_t tail = 0;
    std::set<std::size_t> before, after;
    for (const auto& s : data) before.insert(s.group);
    for (const auto& s : res.samples) {
        tail += s.group >= 1000;
        after.insert(s.group);
    }
    const bool ok = res.tail_before == 10 && tail == 45 && res.tail_after == 45 && before == after;
    return {ok, std::to_string(tail) + " tail samples of " + std::to_string(res.samples.size()) + ", " +
                    std::to_string(after.size()) + " distinct samples (" + (before == after ? "same set" : "set changed") +
                    ")"};
}

struct CliResult {
    int code;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "glass_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, err.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in),
                                                        std::istreambuf_iterator<char>()};
    }
    return files;
}

const char* kRunIni = R"([synth]
duration_s = 30

[corpus]
train_subjects = 4
val_subjects = 2

[model]
input_frames = 60
output_frames = 60
model_dim = 8
heads = 2
encoder_blocks = 1
decoder_blocks = 1

[optim]
total_steps = 6
warmup_steps = 2

[pretrain]
batch_size = 4
eval_every = 2
stride = 61

[finetune]
input_seconds = 2
epochs = 2
hidden = 16

[sweep]
axis = output_seconds
values = 2,5,10

[seeds]
split_seeds = 0,1
)";

// Every subcommand into one directory tree.
std::string run_all_commands(const fs::path& root)
{
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "run.ini") << kRunIni;
    const auto cfg = (root / "run.ini").string();
    auto p = [&](const char* sub) { return (root / sub).string(); };
    const std::vector<std::vector<std::string>> commands{
        {"synth", "--config", cfg, "--out", p("data")},
        {"pretrain", "--config", cfg, "--data", p("data/manifest.csv"), "--out", p("pt")},
        {"pretrain", "--config", cfg, "--sweep", "output_seconds", "--out", p("sw")},
        {"finetune", "--config", cfg, "--checkpoint", p("pt/checkpoint.glss"), "--out", p("ft")},
        {"baseline", "--config", cfg, "--kind", "cnn", "--out", p("bl")},
        {"eval", "--config", cfg, "--checkpoint", p("pt/checkpoint.glss"), "--out", p("ev")},
        {"finetune", "--config", cfg, "--checkpoint", p("sw/sweep-output_seconds-2/checkpoint.glss"), "--checkpoint",
         p("sw/sweep-output_seconds-5/checkpoint.glss"), "--checkpoint", p("sw/sweep-output_seconds-10/checkpoint.glss"),
         "--out", p("swft")},
        {"report", "--input", p("pt/report.csv"), "--input", p("ft/report.csv"), "--out", p("rp")},
        {"report", "--input", p("sw/report.csv"), "--input", p("swft/report.csv"), "--out", p("swrp")},
    };
    for (const auto& c : commands) {
        const auto r = run_cli(c);
        if (r.code != 0) return c[0] + " exited " + std::to_string(r.code) + ": " + r.err;
    }
    return {};
}

// 8. The whole command set twice into the same paths; every file identical.
Outcome reproducibility()
{
    const auto root = fs::temp_directory_path() / "glass_acceptance_repro";
    if (const auto e = run_all_commands(root); !e.empty()) return {false, e};
    const auto first = snapshot(root);
    if (const auto e = run_all_commands(root); !e.empty()) return {false, e};
    const auto second = snapshot(root);
    fs::remove_all(root);

    std::size_t glss = 0, csv = 0, svg = 0;
    std::vector<std::string> differ;
    for (const auto& [name, bytes] : first) {
        const auto it = second.find(name);
        if (it == second.end() || it->second != bytes) differ.push_back(name);
        const auto ext = fs::path(name).extension();
        glss += ext == ".glss";
        csv += ext == ".csv";
        svg += ext == ".svg";
    }
    const bool ok = differ.empty() && first.size() == second.size() && glss > 0 && csv > 0 && svg > 0;
    std::string d = std::to_string(first.size()) + " files (" + std::to_string(glss) + " checkpoints, " +
                    std::to_string(csv) + " CSVs, " + std::to_string(svg) + " SVGs)";
    d += differ.empty() ? " byte-identical" : ", " + std::to_string(differ.size()) + " differ, e.g. " + differ.front();
    return {ok, d};
}

// 9. Six real pretraining runs (three horizons, two seeds) with downstream
// scores planted as increasing functions of validation correlation.
Outcome sweep_correlation()
{
    SynthConfig sc;
    sc.duration_s = 40;
    const auto subjects = synth_corpus(sc, CorpusSpec{6, 2, 300});
    PretrainConfig pc;
    pc.model = GlassConfig::small();
    pc.model.model_dim = 8;
    pc.model.heads = 2;
    pc.model.encoder_blocks = pc.model.decoder_blocks = 1;
    pc.model.input_frames = 60;
    pc.optim.total_steps = 12;
    pc.optim.warmup_steps = 2;
    pc.batch_size = 4;
    pc.eval_every = 4;
    pc.stride = 61;

    MetricsReport report;
    std::vector<std::pair<std::string, double>> runs;
    for (std::uint64_t seed : {0, 1}) {
        pc.seed = seed;
        const auto out = run_sweep(subjects, pc, SweepAxis::output_seconds, {"2", "5", "10"});
        report.append(out.report);
        for (const auto& a : out.runs) runs.emplace_back(a.config_hash, *a.result.best_val_corr);
    }
    std::set<std::string> hashes;
    for (const auto& [h, v] : runs) hashes.insert(h);
    for (const auto& [hash, val] : runs)
        for (std::uint64_t s = 0; s < 3; ++s) {
            const double wiggle = 0.001 * static_cast<double>(s);
            report.add({"planted", "finetune", hash, "mae", 0.5 - 0.3 * val + wiggle, s, std::nullopt});
            report.add({"planted", "finetune", hash, "pearson_r", std::pow(val, 3) - wiggle, s, std::nullopt});
            report.add({"planted", "finetune", hash, "macro_f1", 0.2 + 0.5 * std::exp(val) + wiggle, s, std::nullopt});
        }

    const auto cs = correlate_report(report, report);
    const auto dir = fs::temp_directory_path() / "glass_acceptance_sweep";
    fs::remove_all(dir);
    const auto files = emit_plots(report, dir);
    std::size_t scatters = 0;
    for (const auto& f : files) scatters += f.filename().string().rfind("scatter_", 0) == 0 && fs::file_size(f) > 0;
    fs::remove_all(dir);

    bool positive = cs.size() == 3;
    std::string d = std::to_string(hashes.size()) + " runs;";
    for (const auto& c : cs) {
        positive = positive && c.r && *c.r > 0 && c.points.size() == 6;
        d += " " + c.metric + " r=" + (c.r ? fmt(*c.r, 4) : "n/a");
    }
    d += "; " + std::to_string(scatters) + " scatter SVGs";
    return {positive && hashes.size() == 6 && scatters == 3, d};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"algebraic suite", algebraic_suite},
        {"overfit ten windows", overfit},
        {"beats predict-previous", beats_predict_previous},
        {"horizon ordering", horizon_ordering},
        {"metric oracles", metric_oracles},
        {"tail upsampling", upsampling},
        {"CLI reproducibility", reproducibility},
        {"sweep correlation", sweep_correlation},
    };
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
                  << o.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
    }
    return failed ? 1 : 0;
}
