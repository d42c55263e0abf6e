#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtm/autograd.hpp"
#include "vtm/tensor.hpp"

namespace vtm {

/// Axis-aligned box in normalized image coordinates, center + extent.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    /// Throws std::invalid_argument unless w, h > 0 and all finite.
    void validate() const;
    friend bool operator==(const Box&, const Box&) = default;
};

struct GroundTruth {
    Box box;
    std::size_t class_id = 1;  ///< 0 is reserved for background
};

double iou(const Box& a, const Box& b);

/// Indicator matrix x[d][j]: default d is assigned to ground truth j.
class MatchMatrix {
public:
    MatchMatrix() = default;
    MatchMatrix(std::size_t defaults, std::size_t gts) : defaults_(defaults), gts_(gts), x_(defaults * gts, 0) {}

    std::size_t defaults() const { return defaults_; }
    std::size_t gts() const { return gts_; }
    bool at(std::size_t d, std::size_t j) const { return x_.at(d * gts_ + j) != 0; }
    void set(std::size_t d, std::size_t j) { x_.at(d * gts_ + j) = 1; }
    std::optional<std::size_t> matched_gt(std::size_t d) const;
    /// N: number of matched defaults.
    std::size_t matched() const;

    friend bool operator==(const MatchMatrix&, const MatchMatrix&) = default;

private:
    std::size_t defaults_ = 0, gts_ = 0;
    std::vector<std::uint8_t> x_;
};

/// Two-stage assignment. First every ground truth claims its highest-IoU
/// default (a default claimed twice keeps the higher-IoU claimant). Then each
/// unclaimed default whose best IoU reaches `threshold` takes that ground
/// truth. Ties go to the lower index throughout.
MatchMatrix match_boxes(std::span<const Box> defaults, std::span<const GroundTruth> gts, double threshold);

/// Center offsets scaled by the default extent, log-ratio extents.
std::array<double, 4> encode_offsets(const Box& d, const Box& g);
Box decode_offsets(const Box& d, const std::array<double, 4>& t);

double smooth_l1(double t);
double smooth_l1_derivative(double t);
/// Elementwise smooth L1 op.
Var smooth_l1(Var x);

inline constexpr double kDefaultMatchThreshold = 0.5;

struct MultiboxInstance {
    std::vector<Box> defaults;
    std::vector<GroundTruth> gts;
    Tensor conf_logits;  ///< [D, C+1], column 0 = background
    Tensor loc_preds;    ///< [D, 4]
    double threshold = kDefaultMatchThreshold;
    MatchMatrix match;   ///< x
    Tensor targets;      ///< g, [D, 4]; zero rows where unmatched

    std::size_t num_defaults() const { return defaults.size(); }
    /// Foreground classes C (logit columns minus background).
    std::size_t num_classes() const { return conf_logits.dim(1) - 1; }
};

/// Validates shapes and fills in match and targets.
MultiboxInstance make_instance(std::vector<Box> defaults, std::vector<GroundTruth> gts, Tensor conf_logits,
                               Tensor loc_preds, double threshold = kDefaultMatchThreshold);

struct MultiboxOptions {
    /// Weight on the localization term; 1 reproduces the plain sum.
    double loc_weight = 1.0;
};

/// (L_conf + loc_weight * L_loc) / N, where L_conf is softmax cross-entropy
/// summed over every default (unmatched ones target background) and L_loc is
/// smooth L1 summed over matched defaults and coordinates. Throws
/// std::domain_error when no default is matched.
Var multibox_loss(Graph& g, const MultiboxInstance& inst, Var conf_logits, Var loc_preds, MultiboxOptions opts = {});
double multibox_loss(const MultiboxInstance& inst, MultiboxOptions opts = {});

/// {"threshold", "defaults": [[cx,cy,w,h]...], "gts": [{"box": [...], "class": k}...],
///  "conf_logits": [[...]...], "loc_preds": [[...]...]}; match and targets are recomputed on load.
std::string instance_to_json(const MultiboxInstance& inst);
MultiboxInstance instance_from_json(std::string_view json);

}  // namespace vtm
