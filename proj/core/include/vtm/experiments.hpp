#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtm/chipgen.hpp"
#include "vtm/network.hpp"
#include "vtm/text.hpp"

namespace vtm {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    std::size_t neg_per_pos = 1;
    /// Negatives per chip when building evaluation pairs; 13 probes every wrong class.
    std::size_t eval_neg_per_pos = 13;
    std::uint64_t seed = 1;
    /// Workers for the independent open-set runs.
    std::size_t threads = 1;
    VtmConfig model;
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys, bad
/// values and duplicate keys throw std::invalid_argument naming the line.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
/// Canonical key = value dump; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& cfg);

/// Manifest plus decoded chips, each normalized to [-1, 1] as a [3,S,S] tensor.
struct Dataset {
    std::filesystem::path root;
    Manifest manifest;
    std::vector<Tensor> images;
    std::size_t chip_size = 0;

    std::size_t size() const { return images.size(); }
    const ClassDescription& truth(std::size_t chip) const { return manifest.records.at(chip).description; }
    std::vector<std::size_t> indices(Split split) const;
    std::vector<std::size_t> indices_of_class(const ClassDescription& d) const;
};

Tensor chip_to_tensor(std::span<const std::uint8_t> rgb, std::size_t size);
Dataset load_dataset(const std::filesystem::path& dir);

struct PairSample {
    std::size_t chip = 0;  ///< index into the dataset
    ClassDescription description;
    bool label = false;    ///< true iff description is the chip's class

    friend bool operator==(const PairSample&, const PairSample&) = default;
};

/// One positive and neg_per_pos negatives per chip, negatives drawn without
/// replacement from `classes` minus the chip's class, then shuffled.
std::vector<PairSample> make_pairs(const Dataset& data, std::span<const std::size_t> chips,
                                   std::span<const ClassDescription> classes, std::size_t neg_per_pos,
                                   std::uint64_t seed);

struct TrainResult {
    std::vector<double> loss_curve;  ///< mean pair loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Minibatch SGD over all parameters jointly. Throws std::runtime_error if
/// the loss stops being finite.
TrainResult train(VtmModel& model, const Dataset& data, std::span<const PairSample> pairs, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct Metrics {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    double accuracy() const;
    /// Throws std::domain_error without positives.
    double tpr() const;
    /// Throws std::domain_error without negatives.
    double tnr() const;
    double balanced_accuracy() const { return 0.5 * (tpr() + tnr()); }

    static Metrics from(const std::vector<bool>& predicted_yes, const std::vector<bool>& truth);
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Yes/no decision for every pair, in pair order.
std::vector<bool> predict_pairs(const VtmModel& model, const Dataset& data, std::span<const PairSample> pairs);

/// Throws std::domain_error if the pairs lack a positive or a negative.
Metrics evaluate(const VtmModel& model, const Dataset& data, std::span<const PairSample> pairs);

struct SeenClassResult {
    VtmModel model;
    TrainResult training;
    Metrics metrics;
};

/// Train on train-split pairs over all 14 classes, evaluate on test-split pairs.
SeenClassResult seen_class_experiment(const Dataset& data, const TrainConfig& cfg,
                                      const EpochCallback& on_epoch = {});

struct OpenSetRow {
    ClassDescription held_out;
    Metrics metrics;
    std::uint64_t model_checksum = 0;
    std::size_t train_pairs = 0;
    /// Fraction of held-out chips accepted for each query class, all_classes() order.
    std::vector<double> yes_rate;
};

/// Training pairs for the run that holds `held_out` aside: chips of every
/// other class, negatives drawn from the other 13 classes only.
std::vector<PairSample> openset_training_pairs(const Dataset& data, const ClassDescription& held_out,
                                               const TrainConfig& cfg);
/// Evaluation pairs: every chip of the held-out class, asked about itself and
/// eval_neg_per_pos other classes.
std::vector<PairSample> openset_test_pairs(const Dataset& data, const ClassDescription& held_out,
                                           const TrainConfig& cfg);

OpenSetRow openset_run(const Dataset& data, const ClassDescription& held_out, const TrainConfig& cfg);

/// 14 leave-one-class-out runs, ordered as all_classes().
std::vector<OpenSetRow> openset_experiment(const Dataset& data, const TrainConfig& cfg,
                                           const std::function<void(const OpenSetRow&)>& on_run = {});

struct EmbeddingPoint {
    ClassDescription description;
    double x = 0, y = 0;
};

struct EmbeddingResult {
    VtmModel model;
    std::vector<EmbeddingPoint> points;  ///< all_classes() order
};

/// Trains as the seen-class experiment does, then reads out the 2-D text
/// embedding of every class. Requires the last text width to be 2.
EmbeddingResult embedding_export(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Whether some line strictly separates the two point sets.
bool linearly_separable(std::span<const std::array<double, 2>> a, std::span<const std::array<double, 2>> b);

// Report writers. Floats carry six decimals; every CSV starts with a header.
void write_curve_csv(const std::filesystem::path& path, std::span<const double> curve);
void write_metrics_csv(const std::filesystem::path& path, const Metrics& m);
void write_openset_csv(const std::filesystem::path& path, std::span<const OpenSetRow> rows);
void write_openset_cross_csv(const std::filesystem::path& path, std::span<const OpenSetRow> rows);
void write_embedding_csv(const std::filesystem::path& path, std::span<const EmbeddingPoint> points);
void write_embedding_svg(const std::filesystem::path& path, std::span<const EmbeddingPoint> points);
/// Sidecar "<path>.config" holding the config echo plus extra key = value lines.
void write_config_echo(const std::filesystem::path& result_path, const TrainConfig& cfg,
                       std::span<const std::pair<std::string, std::string>> extra = {});

std::string format_fixed(double v);

}  // namespace vtm
