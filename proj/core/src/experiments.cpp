#include "vtm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vtm/seeding.hpp"

namespace vtm {

namespace {

constexpr std::size_t kEvalChunk = 32;

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

Tensor gather_chips(const Dataset& data, std::span<const std::size_t> chips)
{
    const auto s = data.chip_size;
    const auto per = 3 * s * s;
    std::vector<double> v(chips.size() * per);
    for (std::size_t i = 0; i < chips.size(); ++i) {
        auto src = data.images.at(chips[i]).data();
        std::copy(src.begin(), src.end(), v.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return Tensor({chips.size(), 3, s, s}, std::move(v));
}

Tensor gather_bows(std::span<const PairSample> pairs, const Vocabulary& vocab)
{
    std::vector<double> v(pairs.size() * vocab.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto bow = encode_bow(pairs[i].description, vocab);
        std::copy(bow.values.begin(), bow.values.end(), v.begin() + static_cast<std::ptrdiff_t>(i * vocab.size()));
    }
    return Tensor({pairs.size(), vocab.size()}, std::move(v));
}

std::vector<ClassDescription> classes_except(const ClassDescription& skip)
{
    std::vector<ClassDescription> out;
    for (const auto& c : all_classes())
        if (c != skip) out.push_back(c);
    return out;
}

}  // namespace

std::vector<std::size_t> Dataset::indices(Split split) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (manifest.records[i].split == split) out.push_back(i);
    return out;
}

std::vector<std::size_t> Dataset::indices_of_class(const ClassDescription& d) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        if (manifest.records[i].description == d) out.push_back(i);
    return out;
}

Tensor chip_to_tensor(std::span<const std::uint8_t> rgb, std::size_t size)
{
    if (rgb.size() != size * size * 3) throw std::invalid_argument("chip_to_tensor: pixel count mismatch");
    std::vector<double> v(rgb.size());
    const auto plane = size * size;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) v[c * plane + p] = rgb[p * 3 + c] / 127.5 - 1.0;
    return Tensor({3, size, size}, std::move(v));
}

Dataset load_dataset(const std::filesystem::path& dir)
{
    Dataset d;
    d.root = dir;
    d.manifest = read_manifest(dir / kManifestName);
    if (d.manifest.records.empty()) throw std::runtime_error("dataset " + dir.string() + " has no records");
    d.images.reserve(d.manifest.records.size());
    for (const auto& r : d.manifest.records) {
        auto img = read_ppm(dir / r.path);
        if (img.width != img.height) throw std::runtime_error("dataset: chip " + r.path + " is not square");
        if (d.chip_size == 0) d.chip_size = img.width;
        if (img.width != d.chip_size) throw std::runtime_error("dataset: chip " + r.path + " has a different size");
        d.images.push_back(chip_to_tensor(img.rgb, img.width));
    }
    return d;
}

std::vector<PairSample> make_pairs(const Dataset& data, std::span<const std::size_t> chips,
                                   std::span<const ClassDescription> classes, std::size_t neg_per_pos,
                                   std::uint64_t seed)
{
    if (neg_per_pos == 0) throw std::invalid_argument("make_pairs: neg_per_pos must be at least 1");
    if (classes.empty()) throw std::invalid_argument("make_pairs: no classes");
    std::mt19937_64 rng(seed);
    std::vector<PairSample> pairs;
    pairs.reserve(chips.size() * (1 + neg_per_pos));
    for (auto chip : chips) {
        const auto& truth = data.truth(chip);
        std::vector<ClassDescription> wrong;
        bool found = false;
        for (const auto& c : classes) {
            if (c == truth) found = true;
            else wrong.push_back(c);
        }
        if (!found)
            throw std::invalid_argument("make_pairs: chip class \"" + truth.str() + "\" is not among the pair classes");
        if (neg_per_pos > wrong.size())
            throw std::invalid_argument("make_pairs: neg_per_pos exceeds the number of other classes");
        pairs.push_back({chip, truth, true});
        // Partial Fisher-Yates: the first neg_per_pos entries are a uniform sample.
        for (std::size_t i = 0; i < neg_per_pos; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, wrong.size() - 1);
            std::swap(wrong[i], wrong[pick(rng)]);
            pairs.push_back({chip, wrong[i], false});
        }
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

TrainResult train(VtmModel& model, const Dataset& data, std::span<const PairSample> pairs, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
    if (pairs.empty()) throw std::invalid_argument("train: no pairs");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
    const auto& vocab = full_vocabulary();
    auto params = model.parameters();
    TrainResult result;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg.seed, {0x7261696eull, e}));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
            const auto n = std::min(cfg.batch_size, order.size() - start);
            std::vector<PairSample> items;
            std::vector<std::size_t> chips;
            std::vector<int> labels;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& p = pairs[order[start + i]];
                items.push_back(p);
                chips.push_back(p.chip);
                labels.push_back(p.label ? 1 : 0);
            }
            Graph g;
            Var loss = batch_loss(g, model, g.constant(gather_chips(data, chips)), g.constant(gather_bows(items, vocab)),
                                  labels);
            const double value = loss.value()[0];
            if (!std::isfinite(value))
                throw std::runtime_error("training diverged: loss is " + std::to_string(value) + " at epoch " +
                                         std::to_string(e + 1) + ", batch " + std::to_string(batch + 1) +
                                         " (learning rate " + std::to_string(cfg.learning_rate) + ")");
            epoch_loss += value * static_cast<double>(n);
            auto grads = g.backward(loss, KeepGrads::parameters_only);
            sgd_step(params, grads, cfg.learning_rate);
        }
        epoch_loss /= static_cast<double>(pairs.size());
        result.loss_curve.push_back(epoch_loss);
        if (on_epoch) on_epoch(e + 1, epoch_loss);
    }
    return result;
}

double Metrics::accuracy() const
{
    if (total() == 0) throw std::domain_error("metrics: no predictions");
    return static_cast<double>(tp + tn) / static_cast<double>(total());
}

double Metrics::tpr() const
{
    if (tp + fn == 0) throw std::domain_error("metrics: true positive rate undefined without positive pairs");
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double Metrics::tnr() const
{
    if (tn + fp == 0) throw std::domain_error("metrics: true negative rate undefined without negative pairs");
    return static_cast<double>(tn) / static_cast<double>(tn + fp);
}

Metrics Metrics::from(const std::vector<bool>& predicted_yes, const std::vector<bool>& truth)
{
    if (predicted_yes.size() != truth.size()) throw std::invalid_argument("metrics: size mismatch");
    Metrics m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) (predicted_yes[i] ? m.tp : m.fn)++;
        else (predicted_yes[i] ? m.fp : m.tn)++;
    }
    return m;
}

std::vector<bool> predict_pairs(const VtmModel& model, const Dataset& data, std::span<const PairSample> pairs)
{
    // The visual trunk dominates the cost and does not depend on the
    // description, so it runs once per distinct chip.
    std::map<std::size_t, std::size_t> slot;
    std::vector<std::size_t> chips;
    for (const auto& p : pairs)
        if (slot.emplace(p.chip, chips.size()).second) chips.push_back(p.chip);

    const auto vdim = model.config.visual_dim;
    std::vector<double> visual(chips.size() * vdim);
    for (std::size_t start = 0; start < chips.size(); start += kEvalChunk) {
        const auto n = std::min(kEvalChunk, chips.size() - start);
        Graph g(GradMode::disabled);
        Var f = visual_features(g, model, g.constant(gather_chips(data, std::span(chips).subspan(start, n))));
        std::copy(f.value().data().begin(), f.value().data().end(), visual.begin() + static_cast<std::ptrdiff_t>(start * vdim));
    }

    const auto classes = all_classes();
    const auto tdim = model.config.text_dim();
    std::vector<double> text(classes.size() * tdim);
    {
        Graph g(GradMode::disabled);
        std::vector<PairSample> probe;
        for (const auto& c : classes) probe.push_back({0, c, false});
        Var t = text_features(g, model, g.constant(gather_bows(probe, full_vocabulary())));
        std::copy(t.value().data().begin(), t.value().data().end(), text.begin());
    }

    std::vector<bool> out;
    out.reserve(pairs.size());
    for (std::size_t start = 0; start < pairs.size(); start += kEvalChunk) {
        const auto n = std::min(kEvalChunk, pairs.size() - start);
        std::vector<double> vrows(n * vdim), trows(n * tdim);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = pairs[start + i];
            std::copy_n(visual.begin() + static_cast<std::ptrdiff_t>(slot[p.chip] * vdim), vdim,
                        vrows.begin() + static_cast<std::ptrdiff_t>(i * vdim));
            std::copy_n(text.begin() + static_cast<std::ptrdiff_t>(p.description.index() * tdim), tdim,
                        trows.begin() + static_cast<std::ptrdiff_t>(i * tdim));
        }
        Graph g(GradMode::disabled);
        Var logits = fuse_and_classify(g, model, g.constant(Tensor({n, vdim}, std::move(vrows))),
                                       g.constant(Tensor({n, tdim}, std::move(trows))));
        for (std::size_t i = 0; i < n; ++i) out.push_back(decide(logits.value().data().subspan(2 * i, 2)).yes);
    }
    return out;
}

Metrics evaluate(const VtmModel& model, const Dataset& data, std::span<const PairSample> pairs)
{
    if (pairs.empty()) throw std::domain_error("evaluate: no pairs");
    std::vector<bool> truth;
    for (const auto& p : pairs) truth.push_back(p.label);
    if (std::none_of(truth.begin(), truth.end(), [](bool t) { return t; }))
        throw std::domain_error("evaluate: no positive pairs, true positive rate undefined");
    if (std::all_of(truth.begin(), truth.end(), [](bool t) { return t; }))
        throw std::domain_error("evaluate: no negative pairs, true negative rate undefined");
    return Metrics::from(predict_pairs(model, data, pairs), truth);
}

SeenClassResult seen_class_experiment(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    const auto classes = all_classes();
    for (const auto& c : classes) {
        bool train = false, test = false;
        for (auto i : data.indices_of_class(c)) (data.manifest.records[i].split == Split::train ? train : test) = true;
        if (!train || !test)
            throw std::invalid_argument("seen-class experiment: class \"" + c.str() + "\" is missing from a split");
    }
    const auto train_chips = data.indices(Split::train);
    const auto test_chips = data.indices(Split::test);
    auto train_pairs = make_pairs(data, train_chips, classes, cfg.neg_per_pos, derive_seed(cfg.seed, {0x7061697273ull, 0}));
    auto test_pairs = make_pairs(data, test_chips, classes, cfg.eval_neg_per_pos, derive_seed(cfg.seed, {0x7061697273ull, 1}));
    SeenClassResult r{build_model(cfg.model), {}, {}};
    r.training = train(r.model, data, train_pairs, cfg, on_epoch);
    r.metrics = evaluate(r.model, data, test_pairs);
    return r;
}

std::vector<PairSample> openset_training_pairs(const Dataset& data, const ClassDescription& held_out,
                                               const TrainConfig& cfg)
{
    std::vector<std::size_t> chips;
    for (auto i : data.indices(Split::train))
        if (data.truth(i) != held_out) chips.push_back(i);
    const auto classes = classes_except(held_out);
    return make_pairs(data, chips, classes, cfg.neg_per_pos, derive_seed(cfg.seed, {0x6f70656eull, held_out.index(), 0}));
}

std::vector<PairSample> openset_test_pairs(const Dataset& data, const ClassDescription& held_out,
                                           const TrainConfig& cfg)
{
    const auto chips = data.indices_of_class(held_out);
    if (chips.empty()) throw std::invalid_argument("open-set: no chips of class \"" + held_out.str() + "\"");
    const auto classes = all_classes();
    return make_pairs(data, chips, classes, cfg.eval_neg_per_pos, derive_seed(cfg.seed, {0x6f70656eull, held_out.index(), 1}));
}

OpenSetRow openset_run(const Dataset& data, const ClassDescription& held_out, const TrainConfig& cfg)
{
    auto train_pairs = openset_training_pairs(data, held_out, cfg);
    auto model = build_model(cfg.model);
    train(model, data, train_pairs, cfg);

    OpenSetRow row;
    row.held_out = held_out;
    row.train_pairs = train_pairs.size();
    row.metrics = evaluate(model, data, openset_test_pairs(data, held_out, cfg));
    row.model_checksum = model.checksum();

    std::vector<PairSample> cross;
    const auto chips = data.indices_of_class(held_out);
    for (const auto& q : all_classes())
        for (auto c : chips) cross.push_back({c, q, q == held_out});
    auto yes = predict_pairs(model, data, cross);
    row.yes_rate.assign(kNumClasses, 0.0);
    for (std::size_t i = 0; i < cross.size(); ++i)
        if (yes[i]) row.yes_rate[cross[i].description.index()] += 1.0;
    for (auto& r : row.yes_rate) r /= static_cast<double>(chips.size());
    return row;
}

std::vector<OpenSetRow> openset_experiment(const Dataset& data, const TrainConfig& cfg,
                                           const std::function<void(const OpenSetRow&)>& on_run)
{
    const auto classes = all_classes();
    for (const auto& c : classes)
        if (data.indices_of_class(c).empty())
            throw std::invalid_argument("open-set experiment: class \"" + c.str() + "\" has no chips");
    std::vector<OpenSetRow> rows(classes.size());
    const auto workers = std::max<std::size_t>(1, std::min(cfg.threads, classes.size()));
    if (workers == 1) {
        for (std::size_t k = 0; k < classes.size(); ++k) {
            rows[k] = openset_run(data, classes[k], cfg);
            if (on_run) on_run(rows[k]);
        }
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::mutex report;
    std::vector<std::exception_ptr> errors(classes.size());
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t k; (k = next++) < classes.size();) {
                    try {
                        rows[k] = openset_run(data, classes[k], cfg);
                        if (on_run) {
                            std::lock_guard lock(report);
                            on_run(rows[k]);
                        }
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return rows;
}

EmbeddingResult embedding_export(const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    if (cfg.model.text_dims.empty() || cfg.model.text_dims.back() != 2)
        throw std::invalid_argument("embedding export: the last text width must be 2");
    auto seen = seen_class_experiment(data, cfg, on_epoch);
    EmbeddingResult r{std::move(seen.model), {}};
    for (const auto& c : all_classes()) {
        auto e = text_embedding(r.model, c);
        r.points.push_back({c, e[0], e[1]});
    }
    return r;
}

bool linearly_separable(std::span<const std::array<double, 2>> a, std::span<const std::array<double, 2>> b)
{
    if (a.empty() || b.empty()) return true;
    std::vector<std::array<double, 2>> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    // Projection order only changes where some pair projects equally, so one
    // probe direction inside each arc between those angles decides the question.
    std::vector<double> critical;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            const double dx = all[j][0] - all[i][0], dy = all[j][1] - all[i][1];
            if (dx == 0 && dy == 0) continue;
            double t = std::atan2(dx, -dy);  // normal to (dx, dy)
            if (t < 0) t += 2 * std::numbers::pi;
            critical.push_back(t);
            critical.push_back(std::fmod(t + std::numbers::pi, 2 * std::numbers::pi));
        }
    std::sort(critical.begin(), critical.end());
    std::vector<double> probes;
    if (critical.empty()) probes.push_back(0.0);
    for (std::size_t i = 0; i < critical.size(); ++i) {
        const double lo = critical[i];
        const double hi = i + 1 < critical.size() ? critical[i + 1] : critical[0] + 2 * std::numbers::pi;
        probes.push_back((lo + hi) / 2);
    }
    for (double t : probes) {
        const double nx = std::cos(t), ny = std::sin(t);
        double max_a = -std::numeric_limits<double>::infinity(), min_b = std::numeric_limits<double>::infinity();
        for (const auto& p : a) max_a = std::max(max_a, nx * p[0] + ny * p[1]);
        for (const auto& p : b) min_b = std::min(min_b, nx * p[0] + ny * p[1]);
        if (max_a < min_b) return true;
    }
    return false;
}

std::string format_fixed(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const double> curve)
{
    auto out = open_out(path);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << "," << format_fixed(curve[i]) << "\n";
}

void write_metrics_csv(const std::filesystem::path& path, const Metrics& m)
{
    auto out = open_out(path);
    out << "metric,value\n"
        << "accuracy," << format_fixed(m.accuracy()) << "\n"
        << "tpr," << format_fixed(m.tpr()) << "\n"
        << "tnr," << format_fixed(m.tnr()) << "\n";
}

void write_openset_csv(const std::filesystem::path& path, std::span<const OpenSetRow> rows)
{
    auto out = open_out(path);
    out << "class,accuracy,tpr,tnr,balanced_accuracy,tp,tn,fp,fn\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << r.held_out.str() << "," << format_fixed(m.accuracy()) << "," << format_fixed(m.tpr()) << ","
            << format_fixed(m.tnr()) << "," << format_fixed(m.balanced_accuracy()) << "," << m.tp << "," << m.tn << ","
            << m.fp << "," << m.fn << "\n";
    }
}

void write_openset_cross_csv(const std::filesystem::path& path, std::span<const OpenSetRow> rows)
{
    auto out = open_out(path);
    out << "held_out";
    for (const auto& q : all_classes()) out << "," << q.str();
    out << "\n";
    for (const auto& r : rows) {
        out << r.held_out.str();
        for (double v : r.yes_rate) out << "," << format_fixed(v);
        out << "\n";
    }
}

void write_embedding_csv(const std::filesystem::path& path, std::span<const EmbeddingPoint> points)
{
    auto out = open_out(path);
    out << "class,x,y\n";
    for (const auto& p : points) out << p.description.str() << "," << format_fixed(p.x) << "," << format_fixed(p.y) << "\n";
}

void write_embedding_svg(const std::filesystem::path& path, std::span<const EmbeddingPoint> points)
{
    if (points.empty()) throw std::invalid_argument("embedding svg: no points");
    constexpr double kSize = 480, kMargin = 60;
    double min_x = points[0].x, max_x = points[0].x, min_y = points[0].y, max_y = points[0].y;
    for (const auto& p : points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const double span = std::max({max_x - min_x, max_y - min_y, 1e-12});
    auto sx = [&](double x) { return kMargin + (x - min_x) / span * (kSize - 2 * kMargin); };
    auto sy = [&](double y) { return kSize - kMargin - (y - min_y) / span * (kSize - 2 * kMargin); };

    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
        << "\" viewBox=\"0 0 " << kSize << " " << kSize << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f0\"/>\n"
        << "<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">text embedding: circle = car, "
           "square = truck</text>\n";
    for (const auto& p : points) {
        const auto rgb = color_palette(p.description.color);
        char fill[16];
        std::snprintf(fill, sizeof fill, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
        const auto x = format_fixed(sx(p.x)), y = format_fixed(sy(p.y));
        if (p.description.type == VehicleType::car)
            out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"8\" fill=\"" << fill << "\" stroke=\"#000\"/>\n";
        else
            out << "<rect x=\"" << format_fixed(sx(p.x) - 8) << "\" y=\"" << format_fixed(sy(p.y) - 8)
                << "\" width=\"16\" height=\"16\" fill=\"" << fill << "\" stroke=\"#000\"/>\n";
        out << "<text x=\"" << format_fixed(sx(p.x) + 11) << "\" y=\"" << format_fixed(sy(p.y) + 4)
            << "\" font-family=\"sans-serif\" font-size=\"10\">" << p.description.str() << "</text>\n";
    }
    out << "</svg>\n";
}

void write_config_echo(const std::filesystem::path& result_path, const TrainConfig& cfg,
                       std::span<const std::pair<std::string, std::string>> extra)
{
    auto path = result_path;
    path += ".config";
    auto out = open_out(path);
    out << format_config(cfg);
    for (const auto& [k, v] : extra) out << "# " << k << " = " << v << "\n";
}

}  // namespace vtm
