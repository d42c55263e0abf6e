#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "vtm/chipgen.hpp"
#include "vtm/experiments.hpp"
#include "vtm/network.hpp"

using namespace vtm;

namespace {

Tensor random_chip(std::size_t size, std::mt19937_64& rng, std::size_t batch = 1)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(batch * 3 * size * size);
    for (auto& x : v) x = u(rng);
    return Tensor({batch, 3, size, size}, std::move(v));
}

Tensor bow_batch(std::span<const ClassDescription> ds)
{
    std::vector<double> v;
    for (const auto& d : ds) {
        auto b = encode_bow(d, full_vocabulary()).values;
        v.insert(v.end(), b.begin(), b.end());
    }
    return Tensor({ds.size(), full_vocabulary().size()}, std::move(v));
}

// Three-block model on 8x8 input, small enough for finite differences.
VtmConfig small_config(std::uint64_t seed)
{
    VtmConfig c;
    c.input_size = 8;
    c.block_depths = {{4, 4}, {6, 6}, {8, 8, 8}};
    c.visual_dim = 12;
    c.text_dims = {10, 6};
    c.fusion_dim = 8;
    c.seed = seed;
    return c;
}

// y = x W + b for one row, written out longhand
std::vector<double> dense_row(const std::vector<double>& x, const DenseLayer& l)
{
    std::vector<double> y(l.out_dim());
    for (std::size_t j = 0; j < y.size(); ++j) {
        y[j] = l.bias[j];
        for (std::size_t i = 0; i < x.size(); ++i) y[j] += x[i] * l.weights[i * y.size() + j];
    }
    return y;
}

std::vector<double> relu_vec(std::vector<double> v)
{
    for (auto& x : v) x = std::max(x, 0.0);
    return v;
}

}  // namespace

TEST(BuildModel, Presets)
{
    EXPECT_EQ(VtmConfig::full().conv_layer_count(), 13u);
    EXPECT_EQ(VtmConfig::tiny().conv_layer_count(), 13u);
    EXPECT_EQ(VtmConfig::tiny().trunk_output_size(), 2u);
    EXPECT_EQ(VtmConfig::full().trunk_output_size(), 2u);

    auto model = build_model(VtmConfig::tiny());
    EXPECT_EQ(model.conv_layers.size(), 13u);
    EXPECT_EQ(model.visual_fc.in_dim(), 32u * 2 * 2);
    EXPECT_EQ(model.head.out_dim(), 2u);
    for (const auto& l : model.conv_layers) {
        EXPECT_EQ(l.weights.dim(2), 3u);
        EXPECT_EQ(l.stride, 1u);
        EXPECT_EQ(l.padding, 1u);
    }
}

TEST(BuildModel, TrunkOutputIsTwoByTwo)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(1);
    Graph g(GradMode::disabled);
    auto h = g.constant(random_chip(64, rng));
    for (std::size_t i = 0, layer = 0; i < model.config.block_depths.size(); ++i) {
        for (std::size_t j = 0; j < model.config.block_depths[i].size(); ++j)
            h = relu(conv2d_forward(g, model.conv_layers[layer++], h));
        h = maxpool2d(h);
    }
    EXPECT_EQ(h.shape(), (Shape{1, 32, 2, 2}));
}

TEST(BuildModel, DeterministicAndSeedSensitive)
{
    auto a = build_model(VtmConfig::tiny());
    auto b = build_model(VtmConfig::tiny());
    EXPECT_EQ(a.checksum(), b.checksum());
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
    auto cfg = VtmConfig::tiny();
    cfg.seed = 2;
    auto c = build_model(cfg);
    EXPECT_NE(a.checksum(), c.checksum());
    EXPECT_EQ(a.parameter_count(), c.parameter_count());
}

TEST(BuildModel, RejectsInconsistentConfig)
{
    auto cfg = VtmConfig::tiny();
    cfg.input_size = 48;  // not divisible by 32
    EXPECT_THROW(build_model(cfg), std::invalid_argument);
    cfg = VtmConfig::tiny();
    cfg.fusion_dim = 0;
    EXPECT_THROW(build_model(cfg), std::invalid_argument);
    cfg = VtmConfig::tiny();
    cfg.text_dims.clear();
    EXPECT_THROW(build_model(cfg), std::invalid_argument);
    cfg = VtmConfig::tiny();
    cfg.block_depths[1].push_back(0);
    EXPECT_THROW(build_model(cfg), std::invalid_argument);
}

TEST(Forward, ShapeAndErrors)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(2);
    auto classes = all_classes();
    std::vector<ClassDescription> four(classes.begin(), classes.begin() + 4);
    Graph g(GradMode::disabled);
    auto logits = forward(g, model, g.constant(random_chip(64, rng, 4)), g.constant(bow_batch(four)));
    EXPECT_EQ(logits.shape(), (Shape{4, 2}));
    EXPECT_TRUE(logits.value().all_finite());

    EXPECT_THROW(forward(g, model, g.constant(random_chip(32, rng, 4)), g.constant(bow_batch(four))),
                 std::invalid_argument);
    EXPECT_THROW(forward(g, model, g.constant(random_chip(64, rng, 3)), g.constant(bow_batch(four))),
                 std::invalid_argument);
    EXPECT_THROW(forward(g, model, g.constant(random_chip(64, rng, 4)), g.constant(Tensor::zeros({4, 8}))),
                 std::invalid_argument);
}

TEST(Forward, DescriptionChangesLogits)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(3);
    auto chip = random_chip(64, rng);
    std::vector<ClassDescription> a{{VehicleType::car, Color::red}}, b{{VehicleType::truck, Color::blue}};
    Graph g(GradMode::disabled);
    auto la = forward(g, model, g.constant(chip), g.constant(bow_batch(a)));
    auto lb = forward(g, model, g.constant(chip), g.constant(bow_batch(b)));
    EXPECT_NE(la.value(), lb.value());
}

TEST(Forward, BitIdenticalOnRepeat)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(4);
    auto chips = random_chip(64, rng, 3);
    auto classes = all_classes();
    std::vector<ClassDescription> ds(classes.begin() + 5, classes.begin() + 8);
    Graph g1(GradMode::disabled), g2(GradMode::disabled);
    EXPECT_EQ(forward(g1, model, g1.constant(chips), g1.constant(bow_batch(ds))).value(),
              forward(g2, model, g2.constant(chips), g2.constant(bow_batch(ds))).value());
}

TEST(Forward, ZeroInputsPropagateBiases)
{
    auto model = build_model(VtmConfig::tiny());
    for (auto& l : model.conv_layers) l.bias = Tensor::zeros(l.bias.shape());

    Graph g(GradMode::disabled);
    auto logits = forward(g, model, g.constant(Tensor::zeros({1, 3, 64, 64})), g.constant(Tensor::zeros({1, 9})));

    auto visual = relu_vec(model.visual_fc.bias.values());
    std::vector<double> text(model.text_fcs[0].bias.values());
    for (std::size_t i = 1; i < model.text_fcs.size(); ++i) text = dense_row(relu_vec(text), model.text_fcs[i]);
    visual.insert(visual.end(), text.begin(), text.end());
    auto expected = dense_row(relu_vec(dense_row(visual, model.fusion_fc)), model.head);
    ASSERT_EQ(logits.value().size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(logits.value()[k], expected[k], 1e-12);
}

TEST(PairLoss, FinitePositive)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(5);
    Graph g;
    auto loss = pair_loss(g, model, random_chip(64, rng), {VehicleType::car, Color::gray}, 1);
    EXPECT_TRUE(std::isfinite(loss.value()[0]));
    EXPECT_GT(loss.value()[0], 0.0);
    EXPECT_THROW(pair_loss(g, model, random_chip(64, rng), {VehicleType::car, Color::gray}, 2), std::invalid_argument);
}

TEST(PairLoss, GradientsReachEveryParameter)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(6);
    Graph g;
    auto loss = add(pair_loss(g, model, random_chip(64, rng), {VehicleType::car, Color::gray}, 1),
                    pair_loss(g, model, random_chip(64, rng), {VehicleType::truck, Color::white}, 0));
    auto grads = g.backward(loss);
    for (const auto& [name, t] : model.named_parameters()) {
        double norm = 0;
        for (auto& p : model.parameters())
            if (p->shape() == t.shape() && *p == t)
                for (double v : grads.of(*p)) norm += v * v;
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(PairLoss, GradientCheckSmallModel)
{
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto model = build_model(small_config(seed));
        std::mt19937_64 rng(seed);
        auto chip = random_chip(8, rng);
        const ClassDescription d = all_classes()[seed % 14];
        const int label = static_cast<int>(seed % 2);
        auto params = model.parameters();
        auto f = [&](Graph& g) { return pair_loss(g, model, chip, d, label); };
        auto r = finite_difference_check(f, params, 1e-5, {8, seed});
        EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
        EXPECT_GT(r.checked, r.skipped);
    }
}

TEST(PairLoss, InitialLossNearLn2)
{
    std::mt19937_64 rng(7);
    auto classes = all_classes();
    double total = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto cfg = VtmConfig::tiny();
        cfg.seed = seed;
        auto model = build_model(cfg);
        for (int label = 0; label < 2; ++label) {
            const auto truth = classes[rng() % 14];
            auto query = truth;
            while (label == 0 && query == truth) query = classes[rng() % 14];
            auto chip = render_chip({truth, rng(), 64});
            Graph g(GradMode::disabled);
            total += pair_loss(g, model, chip_to_tensor(chip.pixels, 64), query, label).value()[0];
            ++n;
        }
    }
    EXPECT_NEAR(total / static_cast<double>(n), std::log(2.0), 0.15);
}

TEST(Decide, Examples)
{
    const double a[] = {2.0, -1.0};
    auto p = decide(a);
    EXPECT_FALSE(p.yes);
    EXPECT_NEAR(p.confidence, 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
    EXPECT_NEAR(p.confidence, 0.9526, 5e-5);

    const double tie[] = {0.7, 0.7};
    EXPECT_FALSE(decide(tie).yes);
    EXPECT_EQ(decide(tie).confidence, 0.5);

    const double yes[] = {-0.5, 0.25};
    EXPECT_TRUE(decide(yes).yes);
    EXPECT_GT(decide(yes).confidence, 0.5);
}

TEST(Decide, ShiftInvariant)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 200; ++trial) {
        const double l[] = {u(rng), u(rng)};
        const double c = u(rng) * 100;
        const double shifted[] = {l[0] + c, l[1] + c};
        EXPECT_EQ(decide(l).yes, decide(shifted).yes);
        EXPECT_NEAR(decide(l).confidence, decide(shifted).confidence, 1e-12);
    }
}

TEST(Predict, MatchesForward)
{
    auto model = build_model(VtmConfig::tiny());
    std::mt19937_64 rng(9);
    auto chip = random_chip(64, rng);
    const ClassDescription d{VehicleType::truck, Color::green};
    std::vector<ClassDescription> ds{d};
    Graph g(GradMode::disabled);
    auto logits = forward(g, model, g.constant(chip), g.constant(bow_batch(ds)));
    auto expect = decide(logits.value().data());
    auto got = predict(model, chip, d);
    EXPECT_EQ(got.yes, expect.yes);
    EXPECT_EQ(got.confidence, expect.confidence);
}

TEST(TextEmbedding, Shapes)
{
    auto cfg = VtmConfig::tiny();
    cfg.text_dims = {32, 2};
    auto model = build_model(cfg);
    for (const auto& d : all_classes()) {
        auto e = text_embedding(model, d);
        ASSERT_EQ(e.size(), 2u);
        EXPECT_TRUE(std::isfinite(e[0]) && std::isfinite(e[1]));
        EXPECT_EQ(e, text_embedding(model, d));
    }
}

TEST(Training, ToyPairsLossHalvesIn200Steps)
{
    auto cfg = small_config(11);
    auto model = build_model(cfg);
    // Flat red or blue chips; the pair is "yes" when the description names the chip's color.
    auto flat = [](double r, double b) {
        Tensor t = Tensor::zeros({3, 8, 8});
        for (std::size_t i = 0; i < 64; ++i) {
            t[i] = r;
            t[128 + i] = b;
        }
        return t;
    };
    std::vector<double> chip_values;
    std::vector<ClassDescription> ds;
    std::vector<int> labels;
    const ClassDescription red{VehicleType::car, Color::red}, blue{VehicleType::car, Color::blue};
    for (int c = 0; c < 2; ++c)
        for (int q = 0; q < 2; ++q) {
            auto chip = c == 0 ? flat(0.8, -0.8) : flat(-0.8, 0.8);
            chip_values.insert(chip_values.end(), chip.data().begin(), chip.data().end());
            ds.push_back(q == 0 ? red : blue);
            labels.push_back(c == q ? 1 : 0);
        }
    Tensor chips({4, 3, 8, 8}, chip_values);
    auto bows = bow_batch(ds);
    auto params = model.parameters();

    double first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        Graph g;
        auto loss = batch_loss(g, model, g.constant(chips), g.constant(bows), labels);
        if (step == 0) first = loss.value()[0];
        auto grads = g.backward(loss, KeepGrads::parameters_only);
        sgd_step(params, grads, 0.05);
    }
    {
        Graph g(GradMode::disabled);
        last = batch_loss(g, model, g.constant(chips), g.constant(bows), labels).value()[0];
    }
    EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(Checkpoint, ModelRoundTrip)
{
    auto cfg = VtmConfig::tiny();
    cfg.seed = 1234;
    cfg.text_dims = {16, 2};
    auto model = build_model(cfg);
    const auto path = std::filesystem::temp_directory_path() / "vtm_network_test_model.bin";
    save_model(path, model);
    auto loaded = load_model(path);
    std::filesystem::remove(path);
    EXPECT_EQ(loaded.config, model.config);
    EXPECT_EQ(loaded.checksum(), model.checksum());
    std::mt19937_64 rng(10);
    auto chip = random_chip(64, rng);
    EXPECT_EQ(predict(loaded, chip, all_classes()[3]).confidence, predict(model, chip, all_classes()[3]).confidence);
}
