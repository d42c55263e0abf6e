#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "vtm/experiments.hpp"

using namespace vtm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Small on-disk dataset shared by the tests below: 8 chips per class at 32x32.
class ExperimentsTest : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = fs::temp_directory_path() / "vtm_experiments_test";
        fs::remove_all(dir_);
        generate_dataset(8, 5, 0.75, dir_ / "data", 32);
        data_ = new Dataset(load_dataset(dir_ / "data"));
    }
    static void TearDownTestSuite()
    {
        delete data_;
        fs::remove_all(dir_);
    }

    static TrainConfig small_config()
    {
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.model.input_size = 32;
        cfg.model.block_depths = {{4}, {6}, {8}, {8}, {8}};
        cfg.model.visual_dim = 16;
        cfg.model.text_dims = {8, 4};
        cfg.model.fusion_dim = 8;
        return cfg;
    }

    static inline fs::path dir_;
    static inline Dataset* data_ = nullptr;
};

}  // namespace

TEST(Config, DefaultsAndOverrides)
{
    auto cfg = parse_config("");
    EXPECT_EQ(cfg.epochs, 30u);
    EXPECT_EQ(cfg.batch_size, 32u);
    EXPECT_EQ(cfg.learning_rate, 0.01);
    EXPECT_EQ(cfg.neg_per_pos, 1u);

    cfg = parse_config("# comment\npreset = tiny\nepochs = 3   # inline\n\nlearning_rate = 0.05\n"
                       "block_depths = 2,2;4;8\ninput_size = 16\ntext_dims = 32, 2\ninit = uniform_fan_in\n");
    EXPECT_EQ(cfg.epochs, 3u);
    EXPECT_EQ(cfg.learning_rate, 0.05);
    EXPECT_EQ(cfg.model.block_depths, (std::vector<std::vector<std::size_t>>{{2, 2}, {4}, {8}}));
    EXPECT_EQ(cfg.model.text_dims, (std::vector<std::size_t>{32, 2}));
    EXPECT_EQ(cfg.model.init, InitScheme::uniform_fan_in);
    EXPECT_EQ(parse_config("preset = tiny\n").model, VtmConfig::tiny());
}

TEST(Config, Errors)
{
    EXPECT_THROW(parse_config("epoch = 3\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("Epochs = 3\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("epochs = 3\nepochs = 4\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("epochs = -1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("epochs = 0\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("epochs 3\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("learning_rate = fast\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("preset = huge\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("input_size = 40\n"), std::invalid_argument);
    try {
        parse_config("epochs = 2\n\nbogus = 1\n");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Config, FormatRoundTrip)
{
    auto cfg = parse_config("preset = tiny\nlearning_rate = 0.1\nseed = 18446744073709551615\ntext_dims = 5,2\n");
    auto back = parse_config(format_config(cfg));
    EXPECT_EQ(format_config(back), format_config(cfg));
    EXPECT_EQ(back.model, cfg.model);
    EXPECT_EQ(back.learning_rate, 0.1);
    EXPECT_EQ(back.seed, cfg.seed);
}

TEST(MetricsTest, Examples)
{
    const std::vector<bool> truth{true, false, true, false};
    auto perfect = Metrics::from(truth, truth);
    EXPECT_EQ(perfect.accuracy(), 1.0);
    EXPECT_EQ(perfect.tpr(), 1.0);
    EXPECT_EQ(perfect.tnr(), 1.0);

    auto no = Metrics::from(std::vector<bool>(4, false), truth);
    EXPECT_EQ(no.accuracy(), 0.5);
    EXPECT_EQ(no.tpr(), 0.0);
    EXPECT_EQ(no.tnr(), 1.0);

    auto only_neg = Metrics::from({false, true}, {false, false});
    EXPECT_THROW(only_neg.tpr(), std::domain_error);
    EXPECT_EQ(only_neg.tnr(), 0.5);
    EXPECT_THROW(Metrics::from({true}, {true, false}), std::invalid_argument);
}

TEST(MetricsTest, MatchesRecount)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = 2 + rng() % 60;
        std::vector<bool> pred(n), truth(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng() % 2;
            truth[i] = rng() % 3 == 0;
        }
        truth[0] = true;
        truth[1] = false;
        std::map<std::pair<bool, bool>, std::size_t> cells;
        for (std::size_t i = 0; i < n; ++i) ++cells[{pred[i], truth[i]}];
        auto m = Metrics::from(pred, truth);
        EXPECT_EQ(m.tp, (cells[{true, true}]));
        EXPECT_EQ(m.fp, (cells[{true, false}]));
        EXPECT_EQ(m.tn, (cells[{false, false}]));
        EXPECT_EQ(m.fn, (cells[{false, true}]));
        EXPECT_EQ(m.total(), n);
        EXPECT_EQ(m.accuracy(), static_cast<double>(m.tp + m.tn) / static_cast<double>(n));
        EXPECT_NEAR(m.accuracy() * static_cast<double>(n), static_cast<double>(m.tp + m.tn), 1e-9);
        EXPECT_DOUBLE_EQ(m.tpr(), static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn));
        EXPECT_DOUBLE_EQ(m.tnr(), static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp));
    }
}

TEST(Separability, Examples)
{
    using P = std::array<double, 2>;
    std::vector<P> left{{0, 0}, {0, 1}, {1, 0.5}}, right{{3, 0}, {3, 1}, {2.5, 2}};
    EXPECT_TRUE(linearly_separable(left, right));
    std::vector<P> ring{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}, center{{0, 0}};
    EXPECT_FALSE(linearly_separable(ring, center));
    std::vector<P> xa{{0, 0}, {1, 1}}, xb{{0, 1}, {1, 0}};
    EXPECT_FALSE(linearly_separable(xa, xb));
    std::vector<P> touching{{1, 1}};
    EXPECT_FALSE(linearly_separable(touching, touching));
    std::vector<P> diag_a{{0, 0}, {1, 1}, {2, 2}}, diag_b{{0, 0.1}, {1, 1.1}, {2, 2.1}};
    EXPECT_TRUE(linearly_separable(diag_a, diag_b));
}

TEST(Writers, CsvFormats)
{
    const auto dir = fs::temp_directory_path() / "vtm_writers_test";
    fs::create_directories(dir);
    EXPECT_EQ(format_fixed(1.0 / 3.0), "0.333333");
    EXPECT_EQ(format_fixed(2.0), "2.000000");

    const double curve[] = {0.75, 0.5};
    write_curve_csv(dir / "curve.csv", curve);
    EXPECT_EQ(slurp(dir / "curve.csv"), "epoch,loss\n1,0.750000\n2,0.500000\n");

    Metrics m{3, 5, 1, 1};
    write_metrics_csv(dir / "m.csv", m);
    EXPECT_EQ(slurp(dir / "m.csv"), "metric,value\naccuracy,0.800000\ntpr,0.750000\ntnr,0.833333\n");

    EmbeddingPoint pts[] = {{{VehicleType::car, Color::red}, 0.5, -1.25}, {{VehicleType::truck, Color::red}, 1, 2}};
    write_embedding_csv(dir / "e.csv", pts);
    EXPECT_EQ(slurp(dir / "e.csv"), "class,x,y\nred car,0.500000,-1.250000\nred truck,1.000000,2.000000\n");
    write_embedding_svg(dir / "e.svg", pts);
    EXPECT_EQ(slurp(dir / "e.svg").substr(0, 4), "<svg");

    TrainConfig cfg;
    const std::pair<std::string, std::string> extra[] = {{"data", "d"}};
    write_config_echo(dir / "m.csv", cfg, extra);
    auto echo = slurp(dir / "m.csv.config");
    EXPECT_EQ(parse_config(echo).epochs, cfg.epochs);
    EXPECT_NE(echo.find("# data = d"), std::string::npos);
    fs::remove_all(dir);
}

TEST_F(ExperimentsTest, DatasetLoads)
{
    EXPECT_EQ(data_->size(), 14u * 8);
    EXPECT_EQ(data_->chip_size, 32u);
    EXPECT_EQ(data_->indices(Split::train).size(), 14u * 6);
    EXPECT_EQ(data_->images[0].shape(), (Shape{3, 32, 32}));
    for (double v : data_->images[0].data()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST_F(ExperimentsTest, PairCounts)
{
    auto chips = data_->indices(Split::train);
    std::vector<std::size_t> ten(chips.begin(), chips.begin() + 10);
    auto classes = all_classes();
    auto pairs = make_pairs(*data_, ten, classes, 1, 3);
    EXPECT_EQ(pairs.size(), 20u);
    EXPECT_EQ(std::count_if(pairs.begin(), pairs.end(), [](const PairSample& p) { return p.label; }), 10);
    for (const auto& p : pairs) EXPECT_EQ(p.label, p.description == data_->truth(p.chip));
    EXPECT_EQ(make_pairs(*data_, ten, classes, 1, 3), pairs);
    EXPECT_NE(make_pairs(*data_, ten, classes, 1, 4), pairs);
}

TEST_F(ExperimentsTest, ThirteenNegativesProbeEveryClass)
{
    auto chips = data_->indices(Split::test);
    auto classes = all_classes();
    auto pairs = make_pairs(*data_, chips, classes, 13, 7);
    EXPECT_EQ(pairs.size(), chips.size() * 14);
    std::map<std::size_t, std::set<std::size_t>> seen;
    for (const auto& p : pairs) EXPECT_TRUE(seen[p.chip].insert(p.description.index()).second);
    for (const auto& [chip, s] : seen) EXPECT_EQ(s.size(), 14u);
}

TEST_F(ExperimentsTest, PairErrors)
{
    auto chips = data_->indices(Split::train);
    auto classes = all_classes();
    EXPECT_THROW(make_pairs(*data_, chips, classes, 0, 1), std::invalid_argument);
    EXPECT_THROW(make_pairs(*data_, chips, classes, 14, 1), std::invalid_argument);
    std::vector<ClassDescription> few(classes.begin(), classes.begin() + 3);
    EXPECT_THROW(make_pairs(*data_, chips, few, 1, 1), std::invalid_argument);
    EXPECT_THROW(make_pairs(*data_, chips, std::vector<ClassDescription>{}, 1, 1), std::invalid_argument);
}

TEST_F(ExperimentsTest, ZeroLearningRateKeepsParameters)
{
    auto cfg = small_config();
    cfg.learning_rate = 0;
    auto model = build_model(cfg.model);
    const auto before = model.checksum();
    auto chips = data_->indices(Split::train);
    auto pairs = make_pairs(*data_, chips, all_classes(), 1, 1);
    auto r = train(model, *data_, pairs, cfg);
    EXPECT_EQ(model.checksum(), before);
    ASSERT_EQ(r.loss_curve.size(), 2u);
    EXPECT_NEAR(r.loss_curve[0], r.loss_curve[1], 1e-12);
}

TEST_F(ExperimentsTest, TrainingIsDeterministicAndLearns)
{
    auto cfg = small_config();
    cfg.epochs = 4;
    cfg.learning_rate = 0.05;
    auto chips = data_->indices(Split::train);
    auto pairs = make_pairs(*data_, chips, all_classes(), 1, 1);
    auto a = build_model(cfg.model), b = build_model(cfg.model);
    auto ra = train(a, *data_, pairs, cfg), rb = train(b, *data_, pairs, cfg);
    EXPECT_EQ(ra.loss_curve, rb.loss_curve);
    EXPECT_EQ(a.checksum(), b.checksum());
    EXPECT_LT(ra.loss_curve.back(), ra.loss_curve.front());
    EXPECT_THROW(train(a, *data_, std::vector<PairSample>{}, cfg), std::invalid_argument);
}

TEST_F(ExperimentsTest, DivergenceIsReported)
{
    auto cfg = small_config();
    auto model = build_model(cfg.model);
    model.head.bias[0] = std::numeric_limits<double>::quiet_NaN();
    auto pairs = make_pairs(*data_, data_->indices(Split::train), all_classes(), 1, 1);
    try {
        train(model, *data_, pairs, cfg);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
    }
}

TEST_F(ExperimentsTest, EvaluateMatchesPredict)
{
    auto cfg = small_config();
    auto model = build_model(cfg.model);
    auto pairs = make_pairs(*data_, data_->indices(Split::test), all_classes(), 3, 2);
    auto yes = predict_pairs(model, *data_, pairs);
    std::vector<bool> truth;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(yes[i], predict(model, data_->images[pairs[i].chip], pairs[i].description).yes);
        truth.push_back(pairs[i].label);
    }
    EXPECT_EQ(evaluate(model, *data_, pairs), Metrics::from(yes, truth));

    std::vector<PairSample> positives;
    for (const auto& p : pairs)
        if (p.label) positives.push_back(p);
    EXPECT_THROW(evaluate(model, *data_, positives), std::domain_error);
}

TEST_F(ExperimentsTest, OpenSetPairsExcludeHeldOutClass)
{
    auto cfg = small_config();
    for (const auto& k : all_classes()) {
        auto train_pairs = openset_training_pairs(*data_, k, cfg);
        for (const auto& p : train_pairs) {
            EXPECT_NE(data_->truth(p.chip), k);
            EXPECT_NE(p.description, k);
        }
        auto test_pairs = openset_test_pairs(*data_, k, cfg);
        EXPECT_EQ(test_pairs.size(), data_->indices_of_class(k).size() * (1 + cfg.eval_neg_per_pos));
        for (const auto& p : test_pairs) EXPECT_EQ(data_->truth(p.chip), k);
    }
}

TEST_F(ExperimentsTest, OpenSetRunDiffersFromSeenModel)
{
    auto cfg = small_config();
    cfg.epochs = 1;
    const ClassDescription k{VehicleType::truck, Color::yellow};
    auto row = openset_run(*data_, k, cfg);
    auto seen = seen_class_experiment(*data_, cfg);
    EXPECT_NE(row.model_checksum, seen.model.checksum());
    EXPECT_EQ(row.held_out, k);
    EXPECT_EQ(row.yes_rate.size(), 14u);
    EXPECT_EQ(openset_run(*data_, k, cfg).model_checksum, row.model_checksum);
}

TEST_F(ExperimentsTest, EmbeddingNeedsTwoDimensions)
{
    auto cfg = small_config();
    EXPECT_THROW(embedding_export(*data_, cfg), std::invalid_argument);
    cfg.model.text_dims = {8, 2};
    cfg.epochs = 1;
    auto r = embedding_export(*data_, cfg);
    ASSERT_EQ(r.points.size(), 14u);
    for (std::size_t i = 0; i < 14; ++i) EXPECT_EQ(r.points[i].description, all_classes()[i]);
}
