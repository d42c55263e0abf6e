#include "vtm/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>

#include "vtm/seeding.hpp"

namespace vtm {

VtmConfig VtmConfig::full() { return VtmConfig{}; }

VtmConfig VtmConfig::tiny()
{
    VtmConfig c;
    c.block_depths = {{8, 8}, {16, 16}, {32, 32, 32}, {32, 32, 32}, {32, 32, 32}};
    return c;
}

std::size_t VtmConfig::conv_layer_count() const
{
    std::size_t n = 0;
    for (const auto& b : block_depths) n += b.size();
    return n;
}

void VtmConfig::validate() const
{
    if (block_depths.empty()) throw std::invalid_argument("config: at least one conv block required");
    for (const auto& b : block_depths) {
        if (b.empty()) throw std::invalid_argument("config: empty conv block");
        for (auto d : b)
            if (d == 0) throw std::invalid_argument("config: conv depth must be positive");
    }
    if (block_depths.size() >= 32) throw std::invalid_argument("config: too many blocks");
    const std::size_t shrink = std::size_t{1} << block_depths.size();
    if (input_size == 0 || input_size % shrink != 0)
        throw std::invalid_argument("config: input_size " + std::to_string(input_size) + " is not divisible by " +
                                    std::to_string(shrink) + " (one halving per block)");
    if (visual_dim == 0 || fusion_dim == 0 || vocab_size == 0)
        throw std::invalid_argument("config: layer widths must be positive");
    if (text_dims.empty()) throw std::invalid_argument("config: text stack needs at least one layer");
    for (auto d : text_dims)
        if (d == 0) throw std::invalid_argument("config: text widths must be positive");
}

namespace {

constexpr std::uint64_t kConvStream = 1, kVisualStream = 2, kTextStream = 3, kFusionStream = 4, kHeadStream = 5;

std::string indexed(const char* prefix, std::size_t i, const char* suffix)
{
    return std::string(prefix) + std::to_string(i) + suffix;
}

}  // namespace

VtmModel build_model(const VtmConfig& config)
{
    config.validate();
    VtmModel m;
    m.config = config;
    std::size_t in_ch = 3, layer = 0;
    for (const auto& block : config.block_depths)
        for (auto out_ch : block) {
            m.conv_layers.push_back(make_conv(in_ch, out_ch, derive_seed(config.seed, {kConvStream, layer}), config.init));
            in_ch = out_ch;
            ++layer;
        }
    const auto spatial = config.trunk_output_size();
    m.visual_fc = make_dense(in_ch * spatial * spatial, config.visual_dim, derive_seed(config.seed, {kVisualStream}),
                             config.init);
    std::size_t in_dim = config.vocab_size;
    for (std::size_t i = 0; i < config.text_dims.size(); ++i) {
        m.text_fcs.push_back(make_dense(in_dim, config.text_dims[i], derive_seed(config.seed, {kTextStream, i}), config.init));
        in_dim = config.text_dims[i];
    }
    m.fusion_fc = make_dense(config.visual_dim + config.text_dim(), config.fusion_dim,
                             derive_seed(config.seed, {kFusionStream}), config.init);
    // The head feeds a softmax, not a ReLU, so it keeps the plain fan-in bound.
    m.head = make_dense(config.fusion_dim, 2, derive_seed(config.seed, {kHeadStream}), InitScheme::uniform_fan_in);
    return m;
}

std::vector<Tensor*> VtmModel::parameters()
{
    std::vector<Tensor*> out;
    for (auto& c : conv_layers) {
        out.push_back(&c.weights);
        out.push_back(&c.bias);
    }
    auto push_dense = [&](DenseLayer& d) {
        out.push_back(&d.weights);
        out.push_back(&d.bias);
    };
    push_dense(visual_fc);
    for (auto& t : text_fcs) push_dense(t);
    push_dense(fusion_fc);
    push_dense(head);
    return out;
}

std::vector<const Tensor*> VtmModel::parameters() const
{
    auto mut = const_cast<VtmModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<NamedTensor> VtmModel::named_parameters() const
{
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < conv_layers.size(); ++i) {
        out.push_back({indexed("conv", i, ".weight"), conv_layers[i].weights});
        out.push_back({indexed("conv", i, ".bias"), conv_layers[i].bias});
    }
    out.push_back({"visual_fc.weight", visual_fc.weights});
    out.push_back({"visual_fc.bias", visual_fc.bias});
    for (std::size_t i = 0; i < text_fcs.size(); ++i) {
        out.push_back({indexed("text_fc", i, ".weight"), text_fcs[i].weights});
        out.push_back({indexed("text_fc", i, ".bias"), text_fcs[i].bias});
    }
    out.push_back({"fusion_fc.weight", fusion_fc.weights});
    out.push_back({"fusion_fc.bias", fusion_fc.bias});
    out.push_back({"head.weight", head.weights});
    out.push_back({"head.bias", head.bias});
    return out;
}

std::size_t VtmModel::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

std::uint64_t VtmModel::checksum() const
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto* p : parameters()) {
        auto d = p->data();
        h = fnv1a({reinterpret_cast<const std::uint8_t*>(d.data()), d.size_bytes()}, h);
    }
    return h;
}

Var visual_features(Graph& g, const VtmModel& model, Var chips)
{
    const auto& cfg = model.config;
    const auto& x = chips.value();
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg.input_size || x.dim(3) != cfg.input_size)
        throw std::invalid_argument("forward: chips must be [B,3," + std::to_string(cfg.input_size) + "," +
                                    std::to_string(cfg.input_size) + "], got " + shape_str(x.shape()));
    Var h = chips;
    std::size_t layer = 0;
    for (const auto& block : cfg.block_depths) {
        for (std::size_t i = 0; i < block.size(); ++i, ++layer)
            h = activate(conv2d_forward(g, model.conv_layers[layer], h), kEncoderActivation);
        h = maxpool2d(h);
    }
    const auto batch = x.dim(0);
    h = reshape(h, {batch, h.value().size() / batch});
    return activate(dense_forward(g, model.visual_fc, h), kEncoderActivation);
}

Var text_features(Graph& g, const VtmModel& model, Var bows)
{
    const auto& b = bows.value();
    if (b.rank() != 2 || b.dim(1) != model.config.vocab_size)
        throw std::invalid_argument("forward: bag-of-words batch must be [B," + std::to_string(model.config.vocab_size) +
                                    "], got " + shape_str(b.shape()));
    Var h = bows;
    for (std::size_t i = 0; i < model.text_fcs.size(); ++i) {
        h = dense_forward(g, model.text_fcs[i], h);
        if (i + 1 < model.text_fcs.size()) h = activate(h, kEncoderActivation);
    }
    return h;
}

Var fuse_and_classify(Graph& g, const VtmModel& model, Var visual, Var text)
{
    Var fused = activate(dense_forward(g, model.fusion_fc, concat_cols(visual, text)), kEncoderActivation);
    return dense_forward(g, model.head, fused);
}

Var forward(Graph& g, const VtmModel& model, Var chips, Var bows)
{
    if (chips.value().dim(0) != bows.value().dim(0))
        throw std::invalid_argument("forward: chip and description batch sizes differ");
    return fuse_and_classify(g, model, visual_features(g, model, chips), text_features(g, model, bows));
}

Var batch_loss(Graph& g, const VtmModel& model, Var chips, Var bows, std::span<const int> labels)
{
    return softmax_cross_entropy(forward(g, model, chips, bows), labels);
}

namespace {

Tensor as_batch_of_one(const Tensor& chip)
{
    if (chip.rank() == 4) return chip;
    if (chip.rank() == 3) return chip.reshaped({1, chip.dim(0), chip.dim(1), chip.dim(2)});
    throw std::invalid_argument("chip must be [3,S,S] or [1,3,S,S], got " + shape_str(chip.shape()));
}

Tensor bow_row(const ClassDescription& d, const Vocabulary& vocab)
{
    auto bow = encode_bow(d, vocab);
    const auto n = bow.values.size();
    return Tensor({1, n}, std::move(bow.values));
}

}  // namespace

Var pair_loss(Graph& g, const VtmModel& model, const Tensor& chip, const ClassDescription& d, int label,
              const Vocabulary& vocab)
{
    const int labels[1] = {label};
    return batch_loss(g, model, g.constant(as_batch_of_one(chip)), g.constant(bow_row(d, vocab)), labels);
}

Prediction decide(std::span<const double> logits)
{
    if (logits.size() != 2) throw std::invalid_argument("decide: expected two logits");
    auto p = softmax(logits);
    const bool yes = logits[1] > logits[0];
    return {yes, yes ? p[1] : p[0]};
}

Prediction predict(const VtmModel& model, const Tensor& chip, const ClassDescription& d, const Vocabulary& vocab)
{
    Graph g(GradMode::disabled);
    Var logits = forward(g, model, g.constant(as_batch_of_one(chip)), g.constant(bow_row(d, vocab)));
    return decide(logits.value().data());
}

std::vector<double> text_embedding(const VtmModel& model, const ClassDescription& d, const Vocabulary& vocab)
{
    Graph g(GradMode::disabled);
    Var e = text_features(g, model, g.constant(bow_row(d, vocab)));
    return e.value().values();
}

void save_model(const std::filesystem::path& path, const VtmModel& model)
{
    std::vector<NamedTensor> records;
    const auto& cfg = model.config;
    std::vector<double> block_layers;
    for (const auto& b : cfg.block_depths) block_layers.push_back(static_cast<double>(b.size()));
    records.push_back({"meta.input_size", Tensor({1}, {static_cast<double>(cfg.input_size)})});
    records.push_back({"meta.block_layers", Tensor({block_layers.size()}, block_layers)});
    // Seeds above 2^53 would not survive the round trip through a double.
    records.push_back({"meta.seed", Tensor({1}, {static_cast<double>(cfg.seed & ((std::uint64_t{1} << 53) - 1))})});
    records.push_back({"meta.init", Tensor({1}, {static_cast<double>(cfg.init)})});
    for (auto& p : model.named_parameters()) records.push_back(std::move(p));
    save_tensors(path, records);
}

VtmModel model_from_tensors(std::span<const NamedTensor> tensors)
{
    std::map<std::string, const Tensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t.tensor;
    auto get = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: missing record " + name);
        return *it->second;
    };
    auto as_count = [](double v) {
        if (!(v >= 0) || v != std::floor(v)) throw std::runtime_error("checkpoint: bad meta value");
        return static_cast<std::size_t>(v);
    };

    VtmConfig cfg;
    cfg.input_size = as_count(get("meta.input_size")[0]);
    cfg.seed = as_count(get("meta.seed")[0]);
    cfg.init = static_cast<InitScheme>(as_count(get("meta.init")[0]));
    const auto& blocks = get("meta.block_layers");
    cfg.block_depths.clear();
    std::size_t layer = 0;
    for (double n : blocks.data()) {
        std::vector<std::size_t> block;
        for (std::size_t i = 0; i < as_count(n); ++i, ++layer)
            block.push_back(get(indexed("conv", layer, ".weight")).dim(0));
        cfg.block_depths.push_back(std::move(block));
    }
    cfg.visual_dim = get("visual_fc.weight").dim(1);
    cfg.text_dims.clear();
    for (std::size_t i = 0; by_name.count(indexed("text_fc", i, ".weight")); ++i)
        cfg.text_dims.push_back(get(indexed("text_fc", i, ".weight")).dim(1));
    if (cfg.text_dims.empty()) throw std::runtime_error("checkpoint: no text layers");
    cfg.vocab_size = get("text_fc0.weight").dim(0);
    cfg.fusion_dim = get("fusion_fc.weight").dim(1);

    VtmModel m = build_model(cfg);
    for (auto& [name, dst] : [&] {
             std::vector<std::pair<std::string, Tensor*>> slots;
             auto named = m.named_parameters();
             auto ptrs = m.parameters();
             for (std::size_t i = 0; i < named.size(); ++i) slots.emplace_back(named[i].name, ptrs[i]);
             return slots;
         }()) {
        const auto& src = get(name);
        if (src.shape() != dst->shape())
            throw std::runtime_error("checkpoint: " + name + " has shape " + shape_str(src.shape()) + ", expected " +
                                     shape_str(dst->shape()));
        *dst = src;
    }
    return m;
}

VtmModel load_model(const std::filesystem::path& path)
{
    auto tensors = load_tensors(path);
    return model_from_tensors(tensors);
}

}  // namespace vtm
