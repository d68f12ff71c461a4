#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "glass/grad_check.hpp"
#include "glass/pretrain.hpp"

using namespace glass;

namespace {

Tensor<double> random_window(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    Tensor<double> t(rows, cols);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

// Straightforward loop oracle for the joint loss.
double joint_loss_oracle(const Tensor<double>& p, const Tensor<double>& y, double lambda, double delta)
{
    auto h = [&](double r) { return std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - 0.5 * delta); };
    double lc = 0, lv = 0;
    for (std::size_t t = 0; t < p.rows(); ++t)
        for (std::size_t k = 0; k < p.cols(); ++k) lc += h(p(t, k) - y(t, k));
    for (std::size_t t = 1; t < p.rows(); ++t)
        for (std::size_t k = 0; k < p.cols(); ++k) lv += h((p(t, k) - p(t - 1, k)) - (y(t, k) - y(t - 1, k)));
    return lc / static_cast<double>(p.size()) + lambda * lv / static_cast<double>((p.rows() - 1) * p.cols());
}

} // namespace

TEST(Huber, BranchValues)
{
    EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
    EXPECT_DOUBLE_EQ(huber(2.0, 1.0), 1.5);
    EXPECT_DOUBLE_EQ(huber(-2.0, 1.0), 1.5);
    for (double d : {0.3, 1.0, 2.5}) {
        EXPECT_DOUBLE_EQ(huber(d, d), 0.5 * d * d);
        EXPECT_DOUBLE_EQ(d * (d - 0.5 * d), 0.5 * d * d);
    }
}

TEST(JointLoss, Examples)
{
    auto y = random_window(150, 6, 1);
    EXPECT_EQ(joint_loss_value(y, y), 0.0);
    Tensor<double> p = y;
    for (auto& v : p.data()) v += 0.5;
    EXPECT_NEAR(joint_loss_value(p, y), 0.125, 1e-12);
    auto q = random_window(150, 6, 2);
    LossConfig no_vel{0.0, 1.0};
    EXPECT_NEAR(joint_loss_value(q, y, no_vel), joint_loss_oracle(q, y, 0.0, 1.0), 1e-12);
    EXPECT_THROW(joint_loss_value(Tensor<double>(10, 6), y), ShapeError);
}

TEST(JointLoss, MatchesOracleAndIsPositive)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto y = random_window(30, 6, 10 + s);
        auto p = random_window(30, 6, 40 + s, 1.5);
        const double v = joint_loss_value(p, y);
        EXPECT_NEAR(v, joint_loss_oracle(p, y, 0.2, 1.0), 1e-12);
        EXPECT_GT(v, 0.0);
        Tape<double> tape;
        EXPECT_NEAR(joint_loss(tape.constant(p), y).value()[0], v, 1e-12);
    }
}

TEST(JointLoss, GradientMatchesFiniteDifferences)
{
    ParameterSet<double> ps;
    ps.add("pred", random_window(20, 6, 3, 1.2));
    auto y = random_window(20, 6, 4);
    auto rep = grad_check(ps, [&](Tape<double>& t) { return joint_loss(t.param(ps, 0), y); });
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    EXPECT_GT(rep.checked, 100u);
}

TEST(JointLoss, KinkCoordinateIsExcluded)
{
    // Residual sits on the Huber boundary: +-step lands on different branches.
    ParameterSet<double> ps;
    ps.add("pred", Tensor<double>(Shape{2, 1}, std::vector<double>{1.0, 0.3}));
    Tensor<double> y(2, 1, 0.0);
    y(1, 0) = 0.3;
    auto rep = grad_check(ps, [&](Tape<double>& t) { return joint_loss(t.param(ps, 0), y); });
    EXPECT_GE(rep.excluded, 1u);
    EXPECT_TRUE(rep.passed);
}

TEST(Schedule, TeacherForcingProbability)
{
    EXPECT_DOUBLE_EQ(tf_probability(0.0), 1.0);
    EXPECT_NEAR(tf_probability(0.3), 0.5, 1e-15);
    EXPECT_DOUBLE_EQ(tf_probability(0.6), 0.0);
    EXPECT_DOUBLE_EQ(tf_probability(0.9), 0.0);
    double prev = 2;
    for (int i = 0; i <= 100; ++i) {
        const double v = tf_probability(i / 100.0);
        EXPECT_LE(v, prev);
        prev = v;
    }
    EXPECT_THROW(tf_probability(1.5), ConfigError);
}

TEST(Schedule, LearningRate)
{
    OptimConfig c;
    EXPECT_EQ(lr_at(0, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(3000, c), 3e-4);
    EXPECT_NEAR(lr_at(c.total_steps, c), 0.0, 1e-20);
    EXPECT_NEAR(lr_at(2999, c), lr_at(3000, c), 2e-7);
    EXPECT_NEAR(lr_at(3001, c), lr_at(3000, c), 1e-10);
    EXPECT_NEAR(lr_at(1500, c), 1.5e-4, 1e-18);
    EXPECT_THROW(lr_at(c.total_steps + 1, c), ConfigError);
    c.warmup_steps = c.total_steps + 1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesWeight)
{
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}, 1.0));
    OptimConfig c;
    c.weight_decay = 0;
    AdamW<double> opt(c);
    opt.step(ps, 3e-4);
    EXPECT_EQ(ps[0].value[0], 1.0);
}

TEST(AdamW, DecayOnlyStep)
{
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}, 1.0));
    AdamW<double> opt(OptimConfig{});
    opt.step(ps, 3e-4);
    EXPECT_NEAR(ps[0].value[0], 1.0 - 3e-8, 1e-16);
}

TEST(AdamW, FirstStepBiasCorrection)
{
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{1}, 0.0));
    ps[0].grad[0] = 1.0;
    AdamW<double> opt(OptimConfig{});
    opt.step(ps, 3e-4);
    EXPECT_NEAR(ps[0].value[0], -3e-4 / (1.0 + 1e-8), 1e-18);
}

TEST(AdamW, NonFiniteGradientNamesParameter)
{
    ParameterSet<double> ps;
    ps.add("enc.embed.weight", Tensor<double>(Shape{2}, 0.0));
    ps[0].grad[1] = std::nan("");
    AdamW<double> opt(OptimConfig{});
    try {
        opt.step(ps, 1e-3);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("enc.embed.weight"), std::string::npos);
    }
}

TEST(AdamW, WithoutDecayMatchesReferenceAdam)
{
    // f(w) = 0.5 * sum(a_i * w_i^2), ten steps against a hand-written Adam.
    const std::vector<double> a{0.5, 2.0, 3.0};
    ParameterSet<double> ps;
    ps.add("w", Tensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5}));
    OptimConfig c;
    c.weight_decay = 0;
    AdamW<double> opt(c);
    std::vector<double> w{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
    const double lr = 0.01;
    for (int t = 1; t <= 10; ++t) {
        for (std::size_t i = 0; i < 3; ++i) {
            ps[0].grad[i] = a[i] * ps[0].value[i];
            const double g = a[i] * w[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
        opt.step(ps, lr);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ps[0].value[i], w[i], 1e-10);
    }
}

TEST(AdamW, FrozenParametersDoNotMove)
{
    ParameterSet<double> ps;
    ps.add("a", Tensor<double>(Shape{1}, 1.0));
    ps.add("b", Tensor<double>(Shape{1}, 1.0));
    ps[0].grad[0] = ps[1].grad[0] = 1.0;
    AdamW<double> opt(OptimConfig{});
    std::vector<bool> trainable{false, true};
    opt.step(ps, 1e-2, &trainable);
    EXPECT_EQ(ps[0].value[0], 1.0);
    EXPECT_LT(ps[1].value[0], 1.0);
}

TEST(ClipGradNorm, RescalesToMaxNorm)
{
    ParameterSet<double> ps;
    ps.add("a", Tensor<double>(Shape{2}, 0.0));
    ps[0].grad[0] = 3;
    ps[0].grad[1] = 4;
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(ps[0].grad[0], 0.6, 1e-15);
    EXPECT_NEAR(ps[0].grad[1], 0.8, 1e-15);
}

TEST(GazeCorrelation, Examples)
{
    std::vector<Tensor<double>> y{random_window(150, 6, 5), random_window(150, 6, 6)};
    EXPECT_NEAR(*gaze_correlation(y, y), 1.0, 1e-12);
    // Zero-mean targets: subtract the pooled mean first.
    double mean = 0;
    for (auto& t : y) for (auto v : t.data()) mean += v;
    mean /= 1800.0;
    for (auto& t : y) for (auto& v : t.data()) v -= mean;
    auto neg = y;
    for (auto& t : neg) for (auto& v : t.data()) v = -v;
    EXPECT_NEAR(*gaze_correlation(neg, y), -1.0, 1e-12);
    std::vector<Tensor<double>> flat{Tensor<double>(150, 6, 0.2), Tensor<double>(150, 6, 0.2)};
    EXPECT_FALSE(gaze_correlation(flat, y).has_value());
    EXPECT_THROW(gaze_correlation({}, {}), ShapeError);
}

TEST(PrepareData, RejectsOverlappingSplits)
{
    SynthConfig sc;
    sc.duration_s = 20;
    auto a = synth_gaze(sc, 1);
    std::vector<LoadedSubject> subs{{a.sequence, a.annotations, "train"}, {a.sequence, a.annotations, "val"}};
    EXPECT_THROW(prepare_pretrain_data(subs, GlassConfig::small(), 151), ConfigError);
    subs.pop_back();
    EXPECT_THROW(prepare_pretrain_data(subs, GlassConfig::small(), 151), ConfigError);
}

TEST(Pretraining, DeterministicAndLogged)
{
    auto subs = synth_corpus(SynthConfig{}, CorpusSpec{2, 1, 50});
    auto mc = GlassConfig::small();
    mc.input_frames = mc.output_frames = 60;
    auto data = prepare_pretrain_data(subs, mc, 61);
    PretrainConfig pc;
    pc.model = mc;
    pc.optim.warmup_steps = 2;
    pc.optim.total_steps = 6;
    pc.batch_size = 3;
    pc.eval_every = 3;
    auto a = run_pretraining(data, pc);
    auto b = run_pretraining(data, pc);
    ASSERT_EQ(a.log.size(), 6u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_TRUE(a.log[2].val_corr.has_value());
    EXPECT_FALSE(a.log[0].val_corr.has_value());
    EXPECT_TRUE(a.baseline_val_corr.has_value());
    std::ostringstream sa, sb;
    write_train_log(a.log, sa);
    write_train_log(b.log, sb);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(sa.str().substr(0, 35), "step,lr,tf_prob,train_loss,val_corr");
    EXPECT_EQ(encode_checkpoint(make_checkpoint(a.best_model)), encode_checkpoint(make_checkpoint(b.best_model)));
}
