#include "vtm/multibox.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vtm/layers.hpp"

namespace vtm {

void Box::validate() const
{
    if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h) || !(w > 0) || !(h > 0))
        throw std::invalid_argument("box: extent must be positive and finite");
}

double iou(const Box& a, const Box& b)
{
    const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
    const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

std::optional<std::size_t> MatchMatrix::matched_gt(std::size_t d) const
{
    for (std::size_t j = 0; j < gts_; ++j)
        if (at(d, j)) return j;
    return std::nullopt;
}

std::size_t MatchMatrix::matched() const
{
    std::size_t n = 0;
    for (std::size_t d = 0; d < defaults_; ++d) n += matched_gt(d).has_value();
    return n;
}

MatchMatrix match_boxes(std::span<const Box> defaults, std::span<const GroundTruth> gts, double threshold)
{
    if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("match_boxes: threshold must be in (0, 1)");
    if (defaults.empty()) throw std::invalid_argument("match_boxes: no default boxes");
    const auto nd = defaults.size(), ng = gts.size();
    std::vector<double> overlap(nd * ng);
    for (std::size_t d = 0; d < nd; ++d)
        for (std::size_t j = 0; j < ng; ++j) overlap[d * ng + j] = iou(defaults[d], gts[j].box);

    std::vector<std::optional<std::size_t>> assigned(nd);
    for (std::size_t j = 0; j < ng; ++j) {
        std::size_t best = 0;
        for (std::size_t d = 1; d < nd; ++d)
            if (overlap[d * ng + j] > overlap[best * ng + j]) best = d;
        auto& slot = assigned[best];
        if (!slot || overlap[best * ng + j] > overlap[best * ng + *slot]) slot = j;
    }
    for (std::size_t d = 0; d < nd; ++d) {
        if (assigned[d] || ng == 0) continue;
        std::size_t best = 0;
        for (std::size_t j = 1; j < ng; ++j)
            if (overlap[d * ng + j] > overlap[d * ng + best]) best = j;
        if (overlap[d * ng + best] >= threshold) assigned[d] = best;
    }
    MatchMatrix x(nd, ng);
    for (std::size_t d = 0; d < nd; ++d)
        if (assigned[d]) x.set(d, *assigned[d]);
    return x;
}

std::array<double, 4> encode_offsets(const Box& d, const Box& g)
{
    d.validate();
    g.validate();
    return {(g.cx - d.cx) / d.w, (g.cy - d.cy) / d.h, std::log(g.w / d.w), std::log(g.h / d.h)};
}

Box decode_offsets(const Box& d, const std::array<double, 4>& t)
{
    return {d.cx + t[0] * d.w, d.cy + t[1] * d.h, d.w * std::exp(t[2]), d.h * std::exp(t[3])};
}

double smooth_l1(double t)
{
    const double a = std::abs(t);
    return a < 1.0 ? 0.5 * t * t : a - 0.5;
}

double smooth_l1_derivative(double t)
{
    if (std::abs(t) < 1.0) return t;
    return t > 0 ? 1.0 : -1.0;
}

Var smooth_l1(Var x)
{
    const auto& xv = x.value();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = smooth_l1(xv[i]);
    if (x.graph->branch_tracking()) {
        std::vector<std::uint8_t> quad(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) quad[i] = std::abs(xv[i]) < 1.0;
        x.graph->note_branch(fnv1a(quad));
    }
    return x.graph->record("smooth_l1", Tensor(xv.shape(), std::move(out)), {x},
                           [](std::span<const double> go, BackwardContext& ctx) {
                               const auto& in = ctx.input(0);
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * smooth_l1_derivative(in[i]);
                           });
}

MultiboxInstance make_instance(std::vector<Box> defaults, std::vector<GroundTruth> gts, Tensor conf_logits,
                               Tensor loc_preds, double threshold)
{
    for (const auto& b : defaults) b.validate();
    const auto nd = defaults.size();
    if (conf_logits.rank() != 2 || conf_logits.dim(0) != nd || conf_logits.dim(1) < 2)
        throw std::invalid_argument("multibox: confidence logits must be [D, C+1] with C >= 1, got " +
                                    shape_str(conf_logits.shape()));
    if (loc_preds.rank() != 2 || loc_preds.dim(0) != nd || loc_preds.dim(1) != 4)
        throw std::invalid_argument("multibox: location predictions must be [D, 4], got " + shape_str(loc_preds.shape()));
    for (const auto& g : gts) {
        g.box.validate();
        if (g.class_id == 0 || g.class_id >= conf_logits.dim(1))
            throw std::invalid_argument("multibox: ground-truth class " + std::to_string(g.class_id) + " out of range");
    }
    MultiboxInstance inst;
    inst.match = match_boxes(defaults, gts, threshold);
    inst.targets = Tensor::zeros({nd, 4});
    for (std::size_t d = 0; d < nd; ++d)
        if (auto j = inst.match.matched_gt(d)) {
            auto t = encode_offsets(defaults[d], gts[*j].box);
            std::copy(t.begin(), t.end(), inst.targets.data().begin() + static_cast<std::ptrdiff_t>(d * 4));
        }
    inst.defaults = std::move(defaults);
    inst.gts = std::move(gts);
    inst.conf_logits = std::move(conf_logits);
    inst.loc_preds = std::move(loc_preds);
    inst.threshold = threshold;
    return inst;
}

Var multibox_loss(Graph& g, const MultiboxInstance& inst, Var conf_logits, Var loc_preds, MultiboxOptions opts)
{
    const auto n = inst.match.matched();
    if (n == 0) throw std::domain_error("multibox_loss: no matched default boxes");
    if (conf_logits.shape() != inst.conf_logits.shape() || loc_preds.shape() != inst.loc_preds.shape())
        throw std::invalid_argument("multibox_loss: prediction shapes do not match the instance");

    std::vector<std::size_t> labels(inst.num_defaults(), 0);
    std::vector<std::size_t> rows;
    std::vector<double> target_rows;
    for (std::size_t d = 0; d < inst.num_defaults(); ++d)
        if (auto j = inst.match.matched_gt(d)) {
            labels[d] = inst.gts[*j].class_id;
            rows.push_back(d);
            auto t = inst.targets.data().subspan(d * 4, 4);
            target_rows.insert(target_rows.end(), t.begin(), t.end());
        }
    Var conf = cross_entropy(conf_logits, labels, Reduction::sum);
    Var diff = sub(select_rows(loc_preds, rows), g.constant(Tensor({rows.size(), 4}, std::move(target_rows))));
    Var loc = scale(sum(smooth_l1(diff)), opts.loc_weight);
    return scale(add(conf, loc), 1.0 / static_cast<double>(n));
}

double multibox_loss(const MultiboxInstance& inst, MultiboxOptions opts)
{
    Graph g(GradMode::disabled);
    return multibox_loss(g, inst, g.constant(inst.conf_logits), g.constant(inst.loc_preds), opts).value()[0];
}

namespace {

nlohmann::json rows_json(const Tensor& t)
{
    auto j = nlohmann::json::array();
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        auto row = t.data().subspan(r * t.dim(1), t.dim(1));
        j.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return j;
}

Tensor rows_tensor(const nlohmann::json& j, const char* what)
{
    if (!j.is_array() || j.empty()) throw std::invalid_argument(std::string("multibox json: ") + what + " must be a non-empty array");
    const auto cols = j.at(0).size();
    std::vector<double> v;
    for (const auto& row : j) {
        if (row.size() != cols || cols == 0) throw std::invalid_argument(std::string("multibox json: ragged ") + what);
        for (const auto& x : row) v.push_back(x.get<double>());
    }
    return Tensor({j.size(), cols}, std::move(v));
}

Box box_from(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("multibox json: a box is [cx, cy, w, h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string instance_to_json(const MultiboxInstance& inst)
{
    nlohmann::ordered_json j;
    j["threshold"] = inst.threshold;
    auto defaults = nlohmann::json::array();
    for (const auto& b : inst.defaults) defaults.push_back({b.cx, b.cy, b.w, b.h});
    j["defaults"] = defaults;
    auto gts = nlohmann::json::array();
    for (const auto& g : inst.gts)
        gts.push_back({{"box", {g.box.cx, g.box.cy, g.box.w, g.box.h}}, {"class", g.class_id}});
    j["gts"] = gts;
    j["conf_logits"] = rows_json(inst.conf_logits);
    j["loc_preds"] = rows_json(inst.loc_preds);
    return j.dump();
}

MultiboxInstance instance_from_json(std::string_view text)
{
    const auto j = nlohmann::json::parse(text);
    std::vector<Box> defaults;
    for (const auto& b : j.at("defaults")) defaults.push_back(box_from(b));
    std::vector<GroundTruth> gts;
    for (const auto& g : j.at("gts")) gts.push_back({box_from(g.at("box")), g.at("class").get<std::size_t>()});
    return make_instance(std::move(defaults), std::move(gts), rows_tensor(j.at("conf_logits"), "conf_logits"),
                         rows_tensor(j.at("loc_preds"), "loc_preds"), j.value("threshold", kDefaultMatchThreshold));
}

}  // namespace vtm
