#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "glass/checkpoint.hpp"
#include "glass/emotion.hpp"
#include "glass/grad_check.hpp"

using namespace glass;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Tensor<double> t(r, c);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

GlassConfig tiny_encoder()
{
    GlassConfig c;
    c.input_frames = c.output_frames = 60;
    c.model_dim = 8;
    c.encoder_blocks = c.decoder_blocks = 1;
    c.heads = 2;
    return c;
}

// Small labeled corpus shared by the fine-tuning tests.
struct Corpus {
    std::vector<LabeledWindow> vad, behavior;
};

const Corpus& corpus()
{
    static const Corpus c = [] {
        SynthConfig sc;
        sc.duration_s = 40;
        const auto subs = synth_corpus(sc, CorpusSpec{6, 1, 300});
        std::vector<GazeSequence> seqs;
        for (const auto& s : subs) seqs.push_back(s.sequence);
        const auto st = compute_norm_stats(seqs);
        return Corpus{build_task_dataset(subs, Task::vad, 2.0, st), build_task_dataset(subs, Task::behavior, 2.0, st)};
    }();
    return c;
}

FinetuneConfig quick(Task task, HeadKind head)
{
    FinetuneConfig fc;
    fc.task = task;
    fc.head = head;
    fc.epochs = 2;
    fc.hidden = 16;
    fc.split_seed = 3;
    return fc;
}

} // namespace

TEST(Names, RoundTrip)
{
    for (auto k : {HeadKind::mlp, HeadKind::tcn, HeadKind::gru, HeadKind::transformer})
        EXPECT_EQ(head_from_string(to_string(k)), k);
    EXPECT_EQ(task_from_string("behavior"), Task::behavior);
    EXPECT_THROW(head_from_string("lstm"), ConfigError);
    EXPECT_THROW(task_from_string("mood"), ConfigError);
}

TEST(EncoderFeatures, ConstantRowsHaveZeroDerivatives)
{
    Tensor<double> e(5, 4, 2.5);
    const auto f = encoder_features(e);
    ASSERT_EQ(f.cols(), 12u);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_EQ(f(r, c), 2.5);
            EXPECT_EQ(f(r, 4 + c), 0.0);
            EXPECT_EQ(f(r, 8 + c), 0.0);
        }
}

TEST(EncoderFeatures, LinearRamp)
{
    Tensor<double> e(6, 2);
    for (std::size_t r = 0; r < 6; ++r) {
        e(r, 0) = 3.0 * static_cast<double>(r);
        e(r, 1) = -1.0 * static_cast<double>(r) + 4;
    }
    const auto f = encoder_features(e);
    for (std::size_t r = 0; r < 6; ++r) {
        EXPECT_NEAR(f(r, 2), 3.0, 1e-12);
        EXPECT_NEAR(f(r, 3), -1.0, 1e-12);
    }
    for (std::size_t r = 1; r + 1 < 6; ++r) {
        EXPECT_NEAR(f(r, 4), 0.0, 1e-12);
        EXPECT_NEAR(f(r, 5), 0.0, 1e-12);
    }
}

TEST(EncoderFeatures, WidthIsThreeD)
{
    EXPECT_EQ(encoder_features(Tensor<double>(10, 32)).cols(), 96u);
    EXPECT_THROW(encoder_features(Tensor<double>(2, 32)), ShapeError);
}

TEST(EncoderFeatures, TimeReversalNegatesFirstDerivative)
{
    const auto e = random_matrix(7, 3, 1);
    Tensor<double> rev(7, 3);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 3; ++c) rev(r, c) = e(6 - r, c);
    const auto f = encoder_features(e), g = encoder_features(rev);
    for (std::size_t r = 1; r + 1 < 7; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(g(6 - r, 3 + c), -f(r, 3 + c), 1e-12);
            EXPECT_NEAR(g(6 - r, 6 + c), f(r, 6 + c), 1e-12);
        }
}

TEST(Chunk, FiveChunksOfTwo)
{
    const auto x = random_matrix(10, 3, 2);
    const auto c = chunk(x, ChunkConfig{1.0, 2.0});
    ASSERT_EQ(c.rows(), 5u);
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(c(k, j), 0.5 * (x(2 * k, j) + x(2 * k + 1, j)), 1e-12);
}

TEST(Chunk, RemainderAndWholeWindow)
{
    const auto x = random_matrix(10, 2, 3);
    const auto c = chunk(x, ChunkConfig{4.0, 2.0});
    ASSERT_EQ(c.rows(), 2u);
    double tail = 0.5 * (x(8, 0) + x(9, 0));
    EXPECT_NEAR(c(1, 0), tail, 1e-12);

    const auto whole = chunk(x, ChunkConfig{5.0, 2.0});
    ASSERT_EQ(whole.rows(), 1u);
    double mean = 0;
    for (std::size_t r = 0; r < 10; ++r) mean += x(r, 1) / 10;
    EXPECT_NEAR(whole(0, 1), mean, 1e-12);
}

TEST(Chunk, WeightedMeanPreservesMass)
{
    for (double secs : {0.5, 1.0, 2.0, 4.0}) {
        const auto x = random_matrix(13, 4, 4);
        const ChunkConfig cfg{secs, 2.0};
        const auto c = chunk(x, cfg);
        const std::size_t per = cfg.rows_per_chunk();
        for (std::size_t j = 0; j < 4; ++j) {
            double want = 0, got = 0;
            for (std::size_t r = 0; r < 13; ++r) want += x(r, j) / 13;
            for (std::size_t k = 0; k < c.rows(); ++k)
                got += c(k, j) * static_cast<double>(std::min(per, 13 - k * per)) / 13;
            EXPECT_NEAR(got, want, 1e-6);
        }
    }
}

TEST(Chunk, TooSmallChunkIsConfigError)
{
    EXPECT_THROW((ChunkConfig{0.1, 2.0}.rows_per_chunk()), ConfigError);
    EXPECT_THROW(chunk(Tensor<double>(0, 3), ChunkConfig{}), ShapeError);
}

TEST(Heads, MlpIsChunkPermutationInvariant)
{
    HeadConfig hc{HeadKind::mlp, Task::vad, 6, 8};
    EmotionHead<double> head(hc, 9);
    const auto x = random_matrix(5, 6, 5);
    Tensor<double> rev(5, 6);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 6; ++c) rev(r, c) = x(4 - r, c);
    const auto a = head.predict(x), b = head.predict(rev);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Heads, OutputArityRangeAndDeterminism)
{
    for (auto kind : {HeadKind::mlp, HeadKind::tcn, HeadKind::gru, HeadKind::transformer})
        for (auto task : {Task::vad, Task::behavior}) {
            EmotionHead<double> head(HeadConfig{kind, task, 6, 8, 0.5}, 11);
            for (std::uint64_t s = 0; s < 5; ++s) {
                const auto x = random_matrix(4, 6, 100 + s);
                const auto out = head.predict(x);
                ASSERT_EQ(out.dims(), (Shape{1, 3})) << to_string(kind);
                EXPECT_TRUE(std::ranges::equal(out.data(), head.predict(x).data()));
                if (task == Task::vad)
                    for (auto v : out.data()) {
                        EXPECT_GE(v, 0.0);
                        EXPECT_LE(v, 1.0);
                    }
            }
        }
}

TEST(Heads, WrongWidthIsShapeError)
{
    EmotionHead<double> head(HeadConfig{HeadKind::gru, Task::vad, 6, 8}, 1);
    EXPECT_THROW(head.predict(Tensor<double>(3, 5)), ShapeError);
}

TEST(Heads, GradientsMatchFiniteDifferences)
{
    for (auto kind : {HeadKind::mlp, HeadKind::tcn, HeadKind::gru, HeadKind::transformer}) {
        EmotionHead<double> head(HeadConfig{kind, Task::behavior, 6, 8, 0.0}, 21);
        const auto x = random_matrix(4, 6, 7);
        auto loss = [&](Tape<double>& tape) { return cross_entropy(head.forward(tape, tape.constant(x), false), 1); };
        const auto rep = grad_check(head.params(), loss, GradCheckOptions{});
        EXPECT_LT(rep.max_rel_error, 1e-5) << to_string(kind) << " worst " << rep.worst.param;
    }
}

TEST(Split, GroupsNeverStraddle)
{
    const auto& data = corpus().vad;
    const auto s = split_by_group(data, 0.2, 4);
    std::set<std::size_t> tr, te;
    for (auto i : s.train) tr.insert(data[i].group);
    for (auto i : s.test) te.insert(data[i].group);
    for (auto g : te) EXPECT_FALSE(tr.count(g));
    EXPECT_EQ(s.train.size() + s.test.size(), data.size());
    EXPECT_FALSE(s.test.empty());
}

TEST(Finetune, EmptyAndMismatchedDatasets)
{
    GlassModel<float> enc(tiny_encoder(), 1);
    EXPECT_THROW(run_finetune(enc, {}, quick(Task::vad, HeadKind::mlp)), ConfigError);
    EXPECT_THROW(run_finetune(enc, corpus().behavior, quick(Task::vad, HeadKind::mlp)), ConfigError);
}

TEST(Finetune, SingleClassBehaviorIsConfigError)
{
    auto data = corpus().behavior;
    for (auto& s : data) s.label = BehaviorClass::laugh;
    GlassModel<float> enc(tiny_encoder(), 1);
    EXPECT_THROW(run_finetune(enc, data, quick(Task::behavior, HeadKind::mlp)), ConfigError);
}

TEST(Finetune, FrozenEncoderUnchangedAndDeterministic)
{
    GlassModel<float> enc(tiny_encoder(), 1);
    const auto before = encode_checkpoint(make_checkpoint(enc));
    const auto a = run_finetune(enc, corpus().vad, quick(Task::vad, HeadKind::gru));
    const auto b = run_finetune(enc, corpus().vad, quick(Task::vad, HeadKind::gru));
    EXPECT_EQ(encode_checkpoint(make_checkpoint(a.encoder)), before);
    ASSERT_TRUE(a.run.mae && b.run.mae);
    EXPECT_EQ(*a.run.mae, *b.run.mae);
    EXPECT_EQ(a.run.pearson_r, b.run.pearson_r);
    EXPECT_FALSE(a.run.macro_f1.has_value());
    EXPECT_DOUBLE_EQ(a.run.input_seconds, 2.0);
    EXPECT_GT(a.run.test_count, 0u);
}

TEST(Finetune, JointTuningMovesOnlyEncoder)
{
    GlassModel<float> enc(tiny_encoder(), 1);
    auto cfg = quick(Task::behavior, HeadKind::mlp);
    cfg.tune_encoder = true;
    const auto res = run_finetune(enc, corpus().behavior, cfg);
    bool enc_moved = false;
    for (const auto& p : enc.params()) {
        const auto& q = res.encoder.params().at(p.name);
        if (GlassModel<float>::is_encoder_param(p.name))
            enc_moved = enc_moved || !std::ranges::equal(p.value.data(), q.value.data());
        else
            EXPECT_TRUE(std::ranges::equal(p.value.data(), q.value.data())) << p.name;
    }
    EXPECT_TRUE(enc_moved);
    ASSERT_TRUE(res.run.macro_f1.has_value());
    EXPECT_GE(*res.run.macro_f1, 0.0);
    EXPECT_LE(*res.run.macro_f1, 1.0);
}

TEST(Finetune, SeedsSummaryAndCsv)
{
    GlassModel<float> enc(tiny_encoder(), 1);
    auto cfg = quick(Task::vad, HeadKind::mlp);
    const auto runs = run_finetune_seeds(enc, corpus().vad, cfg, {0, 1, 2, 3, 4});
    ASSERT_EQ(runs.size(), 5u);
    const auto s = summarize(runs);
    EXPECT_EQ(s.mae.count, 5u);
    EXPECT_EQ(s.macro_f1.count, 0u);
    std::ostringstream os;
    write_finetune_csv(runs, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "seed,task,head,chunk_seconds,input_seconds,mae,pearson_r,macro_f1");
    std::getline(is, line);
    EXPECT_EQ(line.substr(0, 12), "0,vad,mlp,1,");
    EXPECT_EQ(line.back(), ',');
}
