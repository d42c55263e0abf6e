// Command-line front end: dataset generation, training, evaluation and the
// open-set / embedding experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "vtm/experiments.hpp"
#include "vtm/seeding.hpp"

namespace fs = std::filesystem;
using namespace vtm;

namespace {

void log_epoch(std::size_t epoch, double loss)
{
    std::fprintf(stderr, "epoch %zu  loss %s\n", epoch, format_fixed(loss).c_str());
}

fs::path sibling(const fs::path& csv, const std::string& suffix)
{
    auto p = csv;
    p.replace_filename(csv.stem().string() + suffix + csv.extension().string());
    return p;
}

int gen_data(const std::string& out, std::size_t per_class, double fraction, std::uint64_t seed)
{
    auto m = generate_dataset(per_class, seed, fraction, out);
    std::size_t train = 0;
    for (const auto& r : m.records) train += r.split == Split::train;
    std::printf("wrote %zu chips to %s (%zu train, %zu test)\n", m.records.size(), out.c_str(), train,
                m.records.size() - train);
    return 0;
}

int train_cmd(const std::string& data_dir, const std::string& config, const std::string& model_out,
              const std::string& curve_out)
{
    auto cfg = load_config(config);
    auto data = load_dataset(data_dir);
    auto r = seen_class_experiment(data, cfg, log_epoch);
    save_model(model_out, r.model);
    write_curve_csv(curve_out, r.training.loss_curve);
    const std::pair<std::string, std::string> extra[] = {{"data", data_dir}, {"model", model_out}};
    write_config_echo(curve_out, cfg, extra);
    std::printf("test pairs: accuracy %s  tpr %s  tnr %s\n", format_fixed(r.metrics.accuracy()).c_str(),
                format_fixed(r.metrics.tpr()).c_str(), format_fixed(r.metrics.tnr()).c_str());
    return 0;
}

int eval_cmd(const std::string& data_dir, const std::string& model_path, const std::string& out)
{
    auto model = load_model(model_path);
    auto data = load_dataset(data_dir);
    TrainConfig cfg;
    cfg.model = model.config;
    auto pairs = make_pairs(data, data.indices(Split::test), all_classes(), cfg.eval_neg_per_pos,
                            derive_seed(cfg.seed, {0x6576616cull}));
    auto m = evaluate(model, data, pairs);
    write_metrics_csv(out, m);
    const std::pair<std::string, std::string> extra[] = {
        {"data", data_dir}, {"model", model_path}, {"test_pairs", std::to_string(pairs.size())}};
    write_config_echo(out, cfg, extra);
    std::printf("accuracy %s  tpr %s  tnr %s  (%zu pairs)\n", format_fixed(m.accuracy()).c_str(),
                format_fixed(m.tpr()).c_str(), format_fixed(m.tnr()).c_str(), pairs.size());
    return 0;
}

int openset_cmd(const std::string& data_dir, const std::string& config, const std::string& out)
{
    auto cfg = load_config(config);
    auto data = load_dataset(data_dir);
    auto rows = openset_experiment(data, cfg, [](const OpenSetRow& r) {
        std::fprintf(stderr, "held out %-12s accuracy %s  tpr %s  tnr %s\n", r.held_out.str().c_str(),
                     format_fixed(r.metrics.accuracy()).c_str(), format_fixed(r.metrics.tpr()).c_str(),
                     format_fixed(r.metrics.tnr()).c_str());
    });
    write_openset_csv(out, rows);
    const auto cross = sibling(out, "_cross");
    write_openset_cross_csv(cross, rows);
    double acc = 0, bal = 0;
    for (const auto& r : rows) {
        acc += r.metrics.accuracy();
        bal += r.metrics.balanced_accuracy();
    }
    acc /= static_cast<double>(rows.size());
    bal /= static_cast<double>(rows.size());
    const std::pair<std::string, std::string> extra[] = {
        {"data", data_dir}, {"mean_accuracy", format_fixed(acc)}, {"mean_balanced_accuracy", format_fixed(bal)}};
    write_config_echo(out, cfg, extra);
    std::printf("mean held-out accuracy %s  balanced %s\n", format_fixed(acc).c_str(), format_fixed(bal).c_str());
    return 0;
}

int embed_cmd(const std::string& data_dir, const std::string& config, const std::string& out, const std::string& svg)
{
    auto cfg = load_config(config);
    auto data = load_dataset(data_dir);
    auto r = embedding_export(data, cfg, log_epoch);
    write_embedding_csv(out, r.points);
    write_embedding_svg(svg, r.points);
    std::vector<std::array<double, 2>> cars, trucks;
    for (const auto& p : r.points) (p.description.type == VehicleType::car ? cars : trucks).push_back({p.x, p.y});
    const bool separable = linearly_separable(cars, trucks);
    const std::pair<std::string, std::string> extra[] = {
        {"data", data_dir}, {"car_truck_linearly_separable", separable ? "yes" : "no"}};
    write_config_echo(out, cfg, extra);
    std::printf("car/truck embeddings linearly separable: %s\n", separable ? "yes" : "no");
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Visual-textual vehicle matcher"};
    app.require_subcommand(1);

    std::string data_dir, out, config, model, curve, svg;
    std::size_t per_class = 100;
    double fraction = 0.75;
    std::uint64_t seed = 1;

    auto* gen = app.add_subcommand("gen-data", "Render a labeled chip dataset");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--per-class", per_class, "Chips per class")->required();
    gen->add_option("--train-fraction", fraction, "Fraction of each class in the train split")->required();
    gen->add_option("--seed", seed, "Base seed")->required();

    auto* tr = app.add_subcommand("train", "Train on the train split and report test-pair metrics");
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--config", config, "Config file")->required();
    tr->add_option("--out", model, "Model checkpoint to write")->required();
    tr->add_option("--curve", curve, "Loss curve CSV to write")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--model", model, "Model checkpoint")->required();
    ev->add_option("--out", out, "Metrics CSV to write")->required();

    auto* os = app.add_subcommand("openset", "Leave-one-class-out runs over all 14 classes");
    os->add_option("--data", data_dir, "Dataset directory")->required();
    os->add_option("--config", config, "Config file")->required();
    os->add_option("--out", out, "Per-class CSV to write")->required();

    auto* em = app.add_subcommand("embed", "Train with a 2-D text embedding and export it");
    em->add_option("--data", data_dir, "Dataset directory")->required();
    em->add_option("--config", config, "Config file")->required();
    em->add_option("--out", out, "Embedding CSV to write")->required();
    em->add_option("--svg", svg, "Scatter plot to write")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return gen_data(out, per_class, fraction, seed);
        if (tr->parsed()) return train_cmd(data_dir, config, model, curve);
        if (ev->parsed()) return eval_cmd(data_dir, model, out);
        if (os->parsed()) return openset_cmd(data_dir, config, out);
        if (em->parsed()) return embed_cmd(data_dir, config, out, svg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "vtm: %s\n", e.what());
        return 1;
    }
    return 0;
}
