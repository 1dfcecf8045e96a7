#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "tlpatch/evaluator.hpp"
#include "tlpatch/trainer.hpp"

using namespace tlpatch;

namespace {

const ClassMap kRedGreen({"red", "green"}, "red_green");

// cls = sum over channels of (v - target)^2 at one pixel.
class QuadraticPixelAdapter final : public DetectorAdapter {
public:
    QuadraticPixelAdapter(int x, int y, double target) : x_(x), y_(y), target_(target) {}

    std::string name() const override { return "quadratic_pixel"; }
    const ClassMap& class_map() const override { return kRedGreen; }
    std::vector<Detection> detect(const Image&) const override { return {}; }
    AttackLosses attack_losses(const Image& image, std::span<const GroundTruth>, Image* grad,
                               LossWeights w) const override
    {
        AttackLosses l;
        for (int c = 0; c < 3; ++c) {
            const double d = image.at(x_, y_, c) - target_;
            l.cls += d * d;
            if (grad != nullptr) grad->at(x_, y_, c) += w.cls * 2.0 * d;
        }
        return l;
    }

private:
    int x_, y_;
    double target_;
};

class ConstantAdapter final : public DetectorAdapter {
public:
    explicit ConstantAdapter(double value) : value_(value) {}
    std::string name() const override { return "constant"; }
    const ClassMap& class_map() const override { return kRedGreen; }
    std::vector<Detection> detect(const Image&) const override { return {}; }
    AttackLosses attack_losses(const Image&, std::span<const GroundTruth>, Image*, LossWeights) const override
    {
        return {value_, 0.0};
    }

private:
    double value_;
};

TargetClassMapping red_to_green()
{
    return TargetClassMapping::parse("red:green", kRedGreen);
}

// One 1-pixel-wide red box whose patch lands on pixel (3, 3) at scale 1.
std::vector<AnnotatedImage> single_pixel_set()
{
    return {AnnotatedImage{"one", Image(8, 8, 3, 0.3), {GroundTruth{BBox{3, 2, 4, 3}, 0}}}};
}

AttackConfig plain_config()
{
    AttackConfig c = digital_profile();
    c.gamma = 0.0;
    c.scale_range = {1.0, 1.0};
    return c;
}

std::vector<AnnotatedImage> scenes(int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    SceneOptions o;
    o.width = 320;
    o.height = 240;
    return render_synthetic(n, o, rng);
}

}  // namespace

TEST(AdamOptimizer, FirstStepMovesByLearningRate)
{
    AdamOptimizer adam(3, 0.05);
    std::vector<double> p{0.5, 0.5, 0.5};
    const std::vector<double> g{2.0, -0.001, 0.0};
    adam.step(p, g);
    EXPECT_NEAR(p[0], 0.45, 1e-9);
    EXPECT_NEAR(p[1], 0.55, 1e-6);
    EXPECT_EQ(p[2], 0.5);
    EXPECT_EQ(adam.steps(), 1);
    adam.reset();
    EXPECT_EQ(adam.steps(), 0);
}

TEST(InitPatch, ModesAndErrors)
{
    std::mt19937_64 rng(1);
    EXPECT_THROW(init_patch(0, PatchInit::gray, rng), ConfigError);
    const Patch gray = init_patch(5, PatchInit::gray, rng);
    for (double v : gray.pixels().values()) EXPECT_EQ(v, 0.5);
    std::mt19937_64 a(4), b(4);
    const Patch r1 = init_patch(16, PatchInit::uniform_random, a);
    const Patch r2 = init_patch(16, PatchInit::uniform_random, b);
    EXPECT_EQ(r1.pixels(), r2.pixels());
    EXPECT_TRUE(r1.pixels().in_unit_range());
    EXPECT_NE(r1.pixels(), gray.pixels());
}

TEST(Train, ZeroGradientLeavesPatchUnchanged)
{
    const auto data = single_pixel_set();
    std::mt19937_64 rng(2);
    const Patch start = init_patch(1, PatchInit::uniform_random, rng);
    const TrainResult r = train_from(start, data, ConstantAdapter(0.25), red_to_green(), plain_config());
    EXPECT_EQ(r.patch.pixels(), start.pixels());
    EXPECT_EQ(r.history.size(), 10u);
    EXPECT_EQ(r.history.front().loss.cls, 0.25);
}

TEST(Train, SinglePixelAdamMatchesRecurrence)
{
    const auto data = single_pixel_set();
    AttackConfig cfg = plain_config();
    cfg.pgd_steps = 200;
    cfg.learning_rate = 0.05;
    const TrainResult r = train_from(Patch(1, 0.1), data, QuadraticPixelAdapter(3, 3, 0.9), red_to_green(), cfg);

    // Independent scalar Adam on f(p) = (p - 0.9)^2 with projection to [0,1].
    double p = 0.1, m = 0.0, v = 0.0;
    for (int t = 1; t <= 200; ++t) {
        const double g = 2.0 * (p - 0.9);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        p = std::clamp(p - 0.05 * mh / (std::sqrt(vh) + 1e-8), 0.0, 1.0);
    }
    for (double got : r.patch.pixels().values()) {
        EXPECT_NEAR(got, p, 1e-12);
        EXPECT_LT(std::abs(got - 0.9), 1e-3);
    }
    ASSERT_EQ(r.history.size(), 200u);
    EXPECT_NEAR(r.history.front().loss.cls, 3 * 0.8 * 0.8, 1e-15);
}

TEST(Train, SignRuleStaysInUnitRange)
{
    const auto data = single_pixel_set();
    AttackConfig cfg = plain_config();
    cfg.update_rule = UpdateRule::sign;
    cfg.learning_rate = 0.7;
    for (long k = 1; k <= 6; ++k) {
        cfg.max_updates = k;
        const TrainResult r = train_from(Patch(1, 0.4), data, QuadraticPixelAdapter(3, 3, 2.0), red_to_green(), cfg);
        EXPECT_TRUE(r.patch.pixels().in_unit_range());
        EXPECT_TRUE(r.truncated);
        EXPECT_EQ(r.history.size(), static_cast<std::size_t>(k));
    }
}

TEST(Train, DeterministicForFixedSeed)
{
    const auto data = scenes(4, 3);
    const ContextBlobDetector det;
    AttackConfig cfg = physical_profile();
    cfg.patch_side = 16;
    cfg.seed = 99;
    cfg.pgd_steps = 3;
    const TrainResult a = train(data, det, red_to_green(), cfg);
    const TrainResult b = train(data, det, red_to_green(), cfg);
    EXPECT_EQ(a.patch.pixels(), b.patch.pixels());
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].loss.total, b.history[i].loss.total);
        EXPECT_EQ(a.history[i].scale_factor, b.history[i].scale_factor);
    }
    cfg.seed = 100;
    EXPECT_NE(train(data, det, red_to_green(), cfg).patch.pixels(), a.patch.pixels());
}

TEST(Train, ClassificationLossDecreases)
{
    const auto data = scenes(20, 5);
    const ContextBlobDetector det;
    AttackConfig cfg = digital_profile();
    cfg.patch_side = 16;
    const TrainResult r = train(data, det, red_to_green(), cfg);
    const std::size_t n = r.history.size();
    ASSERT_GE(n, 50u);
    const std::size_t k = n / 10;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        first += r.history[i].loss.cls;
        last += r.history[n - 1 - i].loss.cls;
    }
    EXPECT_LT(last, first);
}

TEST(Train, OnlyRelevantBoxesAreAttacked)
{
    Image img(64, 64, 3, 0.5);
    std::vector<AnnotatedImage> data{AnnotatedImage{
        "mixed", img,
        {GroundTruth{BBox{5, 5, 10, 15}, 1}, GroundTruth{BBox{30, 5, 35, 15}, 0}, GroundTruth{BBox{40, 50, 45, 64}, 0}}}};
    AttackConfig cfg = plain_config();
    cfg.scale_range = {2.0, 2.0};
    cfg.pgd_steps = 4;
    const TrainResult r = train_from(Patch(4, 0.5), data, ConstantAdapter(1.0), red_to_green(), cfg);
    EXPECT_EQ(r.boxes_irrelevant, 1);
    EXPECT_EQ(r.boxes_attacked, 1);
    EXPECT_EQ(r.boxes_unplaceable, 1);
    ASSERT_EQ(r.history.size(), 4u);
    for (const StepRecord& s : r.history) EXPECT_EQ(s.box_index, 1);
}

TEST(Train, NothingToAttack)
{
    std::vector<AnnotatedImage> data{AnnotatedImage{"g", Image(32, 32, 3, 0.5), {GroundTruth{BBox{2, 2, 6, 10}, 1}}}};
    try {
        train(data, ContextBlobDetector(), red_to_green(), plain_config());
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("nothing to attack"), std::string::npos);
    }
}

TEST(Train, NonFiniteLossNamesStep)
{
    const auto data = single_pixel_set();
    try {
        train_from(Patch(1, 0.5), data, ConstantAdapter(std::numeric_limits<double>::quiet_NaN()), red_to_green(),
                   plain_config());
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    }
}

TEST(Train, ObserverSeesEveryStep)
{
    const auto data = single_pixel_set();
    AttackConfig cfg = plain_config();
    cfg.epochs = 3;
    long seen = 0;
    const TrainResult r = train_from(Patch(1, 0.5), data, ConstantAdapter(0.0), red_to_green(), cfg,
                                     [&](const StepRecord& s) { EXPECT_EQ(s.step, seen++); });
    EXPECT_EQ(seen, 30);
    EXPECT_EQ(r.history.size(), 30u);
    EXPECT_FALSE(r.truncated);
}
