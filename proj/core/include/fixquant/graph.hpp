#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fixquant/layers.hpp"
#include "fixquant/quantizer.hpp"
#include "fixquant/tensor.hpp"

namespace fixquant {

enum class LayerKind {
    Conv2d,
    FullyConnected,
    MaxPool2d,
    Relu,
    BatchNorm,
    Softmax,
    Flatten,
};

LayerKind parse_layer_kind(const std::string& name);
std::string layer_kind_name(LayerKind kind);

/// One layer of a declarative topology. The full identifier is
/// "<scope>/<name>" (scopes may nest via slashes inside the scope string).
struct LayerDef {
    LayerKind kind = LayerKind::Relu;
    std::string name;
    std::string scope;

    // conv2d
    std::size_t filters = 0;
    std::size_t kernel_h = 0, kernel_w = 0;
    bool use_bias = true;
    // conv2d / maxpool2d
    std::size_t stride = 1;
    Padding padding = Padding::Valid;
    // maxpool2d
    std::size_t window = 2;
    // fully_connected
    std::size_t units = 0;
    // batchnorm
    double epsilon = 1e-5;

    std::string full_id() const { return scope.empty() ? name : scope + "/" + name; }
};

struct ModelSpec {
    std::string name;
    std::vector<std::size_t> input_shape;  // per sample, e.g. [28,28,1]
    std::vector<LayerDef> layers;

    void validate() const;
};

ModelSpec load_model_spec(const std::string& path);
ModelSpec parse_model_spec(const std::string& json_text);

/// Ordered (pattern, quantizer) assignments. A pattern matches a layer if it
/// is a substring of the layer's full identifier; a pattern exactly equal to
/// a layer-kind name matches all layers of that kind.
struct QuantizerMap {
    std::vector<std::pair<std::string, QuantizerPtr>> entries;

    bool empty() const { return entries.empty(); }
    void add(std::string pattern, QuantizerPtr q);
};

struct QuantizerMaps {
    QuantizerMap intrinsic, extrinsic, gradient;
};

QuantizerMaps load_quantizer_maps(const std::string& path);
QuantizerMaps parse_quantizer_maps(const std::string& json_text);

struct Resolution {
    std::string pattern;
    QuantizerPtr quantizer;
};

/// Longest matching pattern wins; kind-name wildcards rank below every
/// identifier match; equal-length distinct matches are an error.
std::optional<Resolution> resolve_quantizer(const std::string& layer_id,
                                            LayerKind kind, const QuantizerMap& map);

/// Named parameter tensors, keyed "scope/layer/param" (e.g. "LeNet/conv1/filter").
using WeightStore = std::map<std::string, Tensor>;

WeightStore load_weight_store(const std::string& dir);
void save_weight_store(const std::string& dir, const WeightStore& store);

/// Deterministic random initialization for all trainable parameters of a spec.
WeightStore init_weights(const ModelSpec& spec, std::uint64_t seed);

using LayerParams =
    std::variant<std::monostate, Conv2dParams, DenseParams, MaxPool2dParams,
                 BatchNormParams>;

struct BoundLayer {
    LayerDef def;
    LayerParams params;
    QuantSlots slots;
    QuantizerPtr gradient;  // used by the trainer, not by forward
};

struct ResolutionEntry {
    std::string layer_id;
    std::string slot;     // intrinsic | extrinsic | gradient
    std::string pattern;  // empty when nothing matched
    std::string quantizer;
};

struct BuiltNetwork {
    std::string name;
    std::vector<std::size_t> input_shape;
    std::vector<BoundLayer> layers;
    std::vector<ResolutionEntry> report;
    IntrinsicGranularity granularity = IntrinsicGranularity::EveryOp;

    /// Mutable views of the trainable tensors of layer i, keyed by parameter
    /// name ("filter", "bias", "weight", "gamma", "beta").
    std::vector<std::pair<std::string, Tensor*>> trainable_params(std::size_t layer);
    WeightStore export_weights() const;
};

BuiltNetwork build_network(const ModelSpec& spec, const QuantizerMaps& maps,
                           const WeightStore& weights,
                           IntrinsicGranularity granularity =
                               IntrinsicGranularity::EveryOp);

/// Sequential forward pass; returns the final layer's output (logits when the
/// topology does not end in softmax).
Tensor forward(const BuiltNetwork& net, const Tensor& batch);

/// Text form of the per-layer resolution report, one line per (layer, slot).
std::string format_resolution_report(const BuiltNetwork& net);

}  // namespace fixquant
