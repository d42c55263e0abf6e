#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vtm/autograd.hpp"
#include "vtm/checkpoint.hpp"
#include "vtm/layers.hpp"
#include "vtm/text.hpp"

namespace vtm {

/// Architecture of the visual-textual matcher.
///
/// The visual trunk is a stack of blocks; each block is a run of 3x3 same-size
/// convolutions followed by one 2x2 max pool, so the trunk shrinks the input
/// by 2^blocks. The text side is a stack of dense layers over a bag-of-words
/// vector, ReLU between layers and linear at the embedding output.
struct VtmConfig {
    std::size_t input_size = 64;
    std::vector<std::vector<std::size_t>> block_depths = {
        {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    std::size_t visual_dim = 256;
    std::vector<std::size_t> text_dims = {32, 32};
    std::size_t fusion_dim = 128;
    std::size_t vocab_size = 9;
    std::uint64_t seed = 1;
    InitScheme init = InitScheme::he_uniform;

    static VtmConfig full();
    static VtmConfig tiny();

    std::size_t conv_layer_count() const;
    std::size_t trunk_output_size() const { return input_size >> block_depths.size(); }
    std::size_t text_dim() const { return text_dims.back(); }
    /// Throws std::invalid_argument when the wiring cannot be built.
    void validate() const;

    friend bool operator==(const VtmConfig&, const VtmConfig&) = default;
};

struct VtmModel {
    VtmConfig config;
    std::vector<Conv2dLayer> conv_layers;
    DenseLayer visual_fc;
    std::vector<DenseLayer> text_fcs;
    DenseLayer fusion_fc;
    DenseLayer head;  ///< fusion_dim -> 2; index 0 = no, 1 = yes

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<NamedTensor> named_parameters() const;
    std::size_t parameter_count() const;
    /// FNV-1a over every parameter's bytes, in parameter order.
    std::uint64_t checksum() const;
};

VtmModel build_model(const VtmConfig& config);

/// chips [B,3,S,S] -> [B, visual_dim]
Var visual_features(Graph& g, const VtmModel& model, Var chips);
/// bows [B,V] -> [B, text_dim]
Var text_features(Graph& g, const VtmModel& model, Var bows);
/// [B,visual_dim], [B,text_dim] -> logits [B,2]
Var fuse_and_classify(Graph& g, const VtmModel& model, Var visual, Var text);
/// Full forward pass: logits [B,2].
Var forward(Graph& g, const VtmModel& model, Var chips, Var bows);

/// Mean two-class cross-entropy of a batch of (chip, description) pairs.
Var batch_loss(Graph& g, const VtmModel& model, Var chips, Var bows, std::span<const int> labels);

/// Loss of a single pair. `chip` is [3,S,S] or [1,3,S,S]; label 1 = yes.
Var pair_loss(Graph& g, const VtmModel& model, const Tensor& chip, const ClassDescription& d, int label,
              const Vocabulary& vocab = full_vocabulary());

struct Prediction {
    bool yes = false;
    double confidence = 0.5;  ///< softmax probability of the decision
};

/// Decision from a [no, yes] logit pair; exact ties resolve to "no".
Prediction decide(std::span<const double> logits);

Prediction predict(const VtmModel& model, const Tensor& chip, const ClassDescription& d,
                   const Vocabulary& vocab = full_vocabulary());

/// Output of the text stack before fusion.
std::vector<double> text_embedding(const VtmModel& model, const ClassDescription& d,
                                   const Vocabulary& vocab = full_vocabulary());

/// Checkpoint = named parameters plus "meta.*" records describing the wiring.
void save_model(const std::filesystem::path& path, const VtmModel& model);
VtmModel load_model(const std::filesystem::path& path);
VtmModel model_from_tensors(std::span<const NamedTensor> tensors);

}  // namespace vtm
