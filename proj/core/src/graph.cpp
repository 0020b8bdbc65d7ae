#include "fixquant/graph.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fixquant {

namespace fs = std::filesystem;
using nlohmann::json;

LayerKind parse_layer_kind(const std::string& name) {
    if (name == "conv2d") return LayerKind::Conv2d;
    if (name == "fully_connected") return LayerKind::FullyConnected;
    if (name == "maxpool2d") return LayerKind::MaxPool2d;
    if (name == "relu") return LayerKind::Relu;
    if (name == "batchnorm") return LayerKind::BatchNorm;
    if (name == "softmax") return LayerKind::Softmax;
    if (name == "flatten") return LayerKind::Flatten;
    throw Error("unknown layer kind '" + name + "'");
}

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::FullyConnected: return "fully_connected";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Softmax: return "softmax";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

void ModelSpec::validate() const {
    if (name.empty()) throw Error("model spec needs a name");
    if (input_shape.empty() || input_shape.size() > 3)
        throw Error("model input_shape must have 1..3 per-sample dimensions");
    std::set<std::string> ids;
    for (const auto& l : layers) {
        if (l.name.empty()) throw Error("every layer needs a name");
        if (!ids.insert(l.full_id()).second)
            throw Error("duplicate layer identifier '" + l.full_id() + "'");
        switch (l.kind) {
            case LayerKind::Conv2d:
                if (l.filters == 0 || l.kernel_h == 0 || l.kernel_w == 0)
                    throw Error("conv2d layer '" + l.full_id() +
                                "' needs filters and kernel");
                break;
            case LayerKind::FullyConnected:
                if (l.units == 0)
                    throw Error("fully_connected layer '" + l.full_id() +
                                "' needs units");
                break;
            case LayerKind::MaxPool2d:
                if (l.window == 0) throw Error("maxpool2d layer '" + l.full_id() +
                                               "' needs a window");
                break;
            default:
                break;
        }
    }
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error("malformed JSON in " + what);
    return j;
}

}  // namespace

ModelSpec parse_model_spec(const std::string& json_text) {
    const json j = parse_json(json_text, "model spec");
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    for (const auto& jl : j.at("layers")) {
        LayerDef l;
        l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
        l.name = jl.at("name").get<std::string>();
        l.scope = jl.value("scope", spec.name);
        if (jl.contains("filters")) l.filters = jl["filters"].get<std::size_t>();
        if (jl.contains("kernel")) {
            const auto k = jl["kernel"].get<std::vector<std::size_t>>();
            if (k.size() != 2) throw Error("layer '" + l.name + "': kernel must be [kh,kw]");
            l.kernel_h = k[0];
            l.kernel_w = k[1];
        }
        if (jl.contains("stride")) l.stride = jl["stride"].get<std::size_t>();
        if (jl.contains("padding"))
            l.padding = parse_padding(jl["padding"].get<std::string>());
        if (jl.contains("window")) l.window = jl["window"].get<std::size_t>();
        if (jl.contains("units")) l.units = jl["units"].get<std::size_t>();
        if (jl.contains("epsilon")) l.epsilon = jl["epsilon"].get<double>();
        if (jl.contains("use_bias")) l.use_bias = jl["use_bias"].get<bool>();
        spec.layers.push_back(std::move(l));
    }
    spec.validate();
    return spec;
}

ModelSpec load_model_spec(const std::string& path) {
    return parse_model_spec(read_file(path));
}

void QuantizerMap::add(std::string pattern, QuantizerPtr q) {
    if (pattern.empty()) throw Error("quantizer map patterns must be nonempty");
    for (const auto& [p, _] : entries)
        if (p == pattern) throw Error("duplicate quantizer map pattern '" + pattern + "'");
    entries.emplace_back(std::move(pattern), std::move(q));
}

QuantizerMaps parse_quantizer_maps(const std::string& json_text) {
    const json j = parse_json(json_text, "quantizer map");
    QuantizerMaps maps;
    auto load = [&](const char* key, QuantizerMap& out) {
        if (!j.contains(key)) return;
        for (const auto& e : j[key])
            out.add(e.at("pattern").get<std::string>(),
                    parse_quantizer(e.at("quantizer").get<std::string>()));
    };
    load("intrinsic", maps.intrinsic);
    load("extrinsic", maps.extrinsic);
    load("gradient", maps.gradient);
    return maps;
}

QuantizerMaps load_quantizer_maps(const std::string& path) {
    return parse_quantizer_maps(read_file(path));
}

std::optional<Resolution> resolve_quantizer(const std::string& layer_id,
                                            LayerKind kind, const QuantizerMap& map) {
    const std::string kind_name = layer_kind_name(kind);
    // Identifier substring matches score by pattern length; a kind-name
    // wildcard scores below every identifier match.
    std::optional<Resolution> best;
    std::ptrdiff_t best_score = -1;
    bool ambiguous = false;
    std::string other;
    for (const auto& [pattern, q] : map.entries) {
        std::ptrdiff_t score;
        if (layer_id.find(pattern) != std::string::npos)
            score = static_cast<std::ptrdiff_t>(pattern.size());
        else if (pattern == kind_name)
            score = 0;
        else
            continue;
        if (score > best_score) {
            best = Resolution{pattern, q};
            best_score = score;
            ambiguous = false;
        } else if (score == best_score) {
            ambiguous = true;
            other = pattern;
        }
    }
    if (ambiguous)
        throw Error("ambiguous quantizer assignment for '" + layer_id + "': patterns '" +
                    best->pattern + "' and '" + other + "' both match at equal length");
    return best;
}

namespace {

constexpr std::uint32_t kF32Magic = 1;  // manifest schema version

std::string param_file_name(const std::string& param_id) {
    std::string f = param_id;
    std::replace(f.begin(), f.end(), '/', '_');
    return f + ".bin";
}

void write_f32le(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    for (double v : t.data()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        const unsigned char bytes[4] = {
            static_cast<unsigned char>(bits & 0xff),
            static_cast<unsigned char>((bits >> 8) & 0xff),
            static_cast<unsigned char>((bits >> 16) & 0xff),
            static_cast<unsigned char>((bits >> 24) & 0xff),
        };
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
}

Tensor read_f32le(const std::string& path, const std::vector<std::size_t>& shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read weight file " + path);
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char bytes[4];
        if (!in.read(reinterpret_cast<char*>(bytes), 4))
            throw Error("truncated weight file " + path);
        std::uint32_t bits = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
                             (std::uint32_t(bytes[2]) << 16) |
                             (std::uint32_t(bytes[3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        data[i] = static_cast<double>(f);
    }
    return Tensor(shape, std::move(data));
}

}  // namespace

WeightStore load_weight_store(const std::string& dir) {
    const fs::path manifest = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest))
        throw Error("missing weights manifest: " + manifest.string());
    const json j = parse_json(read_file(manifest.string()), "weights manifest");
    WeightStore store;
    for (const auto& [id, entry] : j.at("entries").items()) {
        const std::string dtype = entry.at("dtype").get<std::string>();
        if (dtype != "f32le")
            throw Error("weight '" + id + "': unsupported dtype '" + dtype + "'");
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        const std::string file = entry.at("file").get<std::string>();
        store[id] = read_f32le((fs::path(dir) / file).string(), shape);
    }
    return store;
}

void save_weight_store(const std::string& dir, const WeightStore& store) {
    fs::create_directories(dir);
    json entries = json::object();
    for (const auto& [id, tensor] : store) {
        const std::string file = param_file_name(id);
        write_f32le((fs::path(dir) / file).string(), tensor);
        entries[id] = {{"file", file},
                       {"shape", tensor.shape()},
                       {"dtype", "f32le"}};
    }
    json manifest = {{"version", kF32Magic}, {"entries", entries}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << '\n';
}

namespace {

/// Per-sample shape of each layer's input, plus the final output shape.
std::vector<std::vector<std::size_t>> propagate_shapes(const ModelSpec& spec) {
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<std::size_t> cur = spec.input_shape;
    for (const auto& l : spec.layers) {
        shapes.push_back(cur);
        switch (l.kind) {
            case LayerKind::Conv2d: {
                if (cur.size() != 3)
                    throw Error("layer '" + l.full_id() + "': conv2d needs [H,W,C] input");
                cur = {conv_output_dim(cur[0], l.kernel_h, l.stride, l.padding),
                       conv_output_dim(cur[1], l.kernel_w, l.stride, l.padding),
                       l.filters};
                break;
            }
            case LayerKind::MaxPool2d: {
                if (cur.size() != 3)
                    throw Error("layer '" + l.full_id() + "': maxpool2d needs [H,W,C] input");
                cur = {conv_output_dim(cur[0], l.window, l.stride, l.padding),
                       conv_output_dim(cur[1], l.window, l.stride, l.padding), cur[2]};
                break;
            }
            case LayerKind::FullyConnected: {
                if (cur.size() != 1)
                    throw Error("layer '" + l.full_id() +
                                "': fully_connected needs flattened input");
                cur = {l.units};
                break;
            }
            case LayerKind::Flatten: {
                std::size_t n = 1;
                for (std::size_t d : cur) n *= d;
                cur = {n};
                break;
            }
            case LayerKind::Relu:
            case LayerKind::BatchNorm:
            case LayerKind::Softmax:
                break;
        }
    }
    shapes.push_back(cur);
    return shapes;
}

Tensor take_weight(const WeightStore& store, const std::string& id,
                   const std::vector<std::size_t>& shape) {
    auto it = store.find(id);
    if (it == store.end()) throw Error("missing weights for '" + id + "'");
    if (it->second.shape() != shape) {
        Tensor expected(shape);
        throw Error("weight '" + id + "' has shape " + it->second.shape_string() +
                    ", expected " + expected.shape_string());
    }
    return it->second;
}

}  // namespace

WeightStore init_weights(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto shapes = propagate_shapes(spec);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    WeightStore store;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto& in = shapes[i];
        const std::string id = l.full_id();
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const double scale =
                    std::sqrt(2.0 / double(l.kernel_h * l.kernel_w * in[2]));
                Tensor filter({l.kernel_h, l.kernel_w, in[2], l.filters});
                for (auto& v : filter.data()) v = normal(gen) * scale;
                store[id + "/filter"] = std::move(filter);
                if (l.use_bias) store[id + "/bias"] = Tensor({l.filters});
                break;
            }
            case LayerKind::FullyConnected: {
                const double scale = std::sqrt(2.0 / double(in[0]));
                Tensor weight({in[0], l.units});
                for (auto& v : weight.data()) v = normal(gen) * scale;
                store[id + "/weight"] = std::move(weight);
                if (l.use_bias) store[id + "/bias"] = Tensor({l.units});
                break;
            }
            case LayerKind::BatchNorm: {
                const std::size_t c = in.back();
                Tensor gamma({c}), var({c});
                for (std::size_t k = 0; k < c; ++k) gamma[k] = 1.0, var[k] = 1.0;
                store[id + "/gamma"] = gamma;
                store[id + "/beta"] = Tensor({c});
                store[id + "/moving_mean"] = Tensor({c});
                store[id + "/moving_variance"] = var;
                break;
            }
            default:
                break;
        }
    }
    return store;
}

BuiltNetwork build_network(const ModelSpec& spec, const QuantizerMaps& maps,
                           const WeightStore& weights,
                           IntrinsicGranularity granularity) {
    spec.validate();
    const auto shapes = propagate_shapes(spec);
    BuiltNetwork net;
    net.name = spec.name;
    net.input_shape = spec.input_shape;
    net.granularity = granularity;

    std::set<std::string> used_patterns;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto& in = shapes[i];
        const std::string id = l.full_id();

        BoundLayer bound;
        bound.def = l;

        auto bind_slot = [&](const QuantizerMap& map, const char* slot_name)
            -> QuantizerPtr {
            auto res = resolve_quantizer(id, l.kind, map);
            ResolutionEntry entry{id, slot_name, "", "none"};
            QuantizerPtr q;
            if (res) {
                entry.pattern = res->pattern;
                entry.quantizer = res->quantizer->descriptor();
                used_patterns.insert(std::string(slot_name) + ":" + res->pattern);
                q = res->quantizer;
            }
            net.report.push_back(std::move(entry));
            return q;
        };
        bound.slots.intrinsic = bind_slot(maps.intrinsic, "intrinsic");
        bound.slots.extrinsic = bind_slot(maps.extrinsic, "extrinsic");
        bound.gradient = bind_slot(maps.gradient, "gradient");

        switch (l.kind) {
            case LayerKind::Conv2d: {
                Conv2dParams p;
                p.filter = take_weight(weights, id + "/filter",
                                       {l.kernel_h, l.kernel_w, in[2], l.filters});
                if (l.use_bias) p.bias = take_weight(weights, id + "/bias", {l.filters});
                p.stride = l.stride;
                p.padding = l.padding;
                if (bound.slots.intrinsic) {
                    p.filter = bound.slots.intrinsic->quantize(p.filter);
                    if (l.use_bias) p.bias = bound.slots.intrinsic->quantize(p.bias);
                }
                bound.params = std::move(p);
                break;
            }
            case LayerKind::FullyConnected: {
                DenseParams p;
                p.weight = take_weight(weights, id + "/weight", {in[0], l.units});
                if (l.use_bias) p.bias = take_weight(weights, id + "/bias", {l.units});
                if (bound.slots.intrinsic) {
                    p.weight = bound.slots.intrinsic->quantize(p.weight);
                    if (l.use_bias) p.bias = bound.slots.intrinsic->quantize(p.bias);
                }
                bound.params = std::move(p);
                break;
            }
            case LayerKind::MaxPool2d: {
                MaxPool2dParams p;
                p.window = l.window;
                p.stride = l.stride;
                p.padding = l.padding;
                bound.params = p;
                break;
            }
            case LayerKind::BatchNorm: {
                const std::size_t c = in.back();
                BatchNormParams p;
                p.gamma = take_weight(weights, id + "/gamma", {c});
                p.beta = take_weight(weights, id + "/beta", {c});
                p.moving_mean = take_weight(weights, id + "/moving_mean", {c});
                p.moving_variance = take_weight(weights, id + "/moving_variance", {c});
                p.epsilon = l.epsilon;
                bound.params = std::move(p);
                break;
            }
            default:
                bound.params = std::monostate{};
        }
        net.layers.push_back(std::move(bound));
    }

    // A pattern matching no layer is most likely a typo in the user's map.
    auto check_unused = [&](const QuantizerMap& map, const char* slot_name) {
        for (const auto& [pattern, _] : map.entries)
            if (!used_patterns.count(std::string(slot_name) + ":" + pattern))
                warn(std::string(slot_name) + " pattern '" + pattern +
                     "' matches no layer in model '" + spec.name + "'");
    };
    check_unused(maps.intrinsic, "intrinsic");
    check_unused(maps.extrinsic, "extrinsic");
    check_unused(maps.gradient, "gradient");
    return net;
}

std::vector<std::pair<std::string, Tensor*>> BuiltNetwork::trainable_params(
    std::size_t layer) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto& bound = layers.at(layer);
    if (auto* conv = std::get_if<Conv2dParams>(&bound.params)) {
        out.emplace_back("filter", &conv->filter);
        if (conv->bias.size() > 0) out.emplace_back("bias", &conv->bias);
    } else if (auto* fc = std::get_if<DenseParams>(&bound.params)) {
        out.emplace_back("weight", &fc->weight);
        if (fc->bias.size() > 0) out.emplace_back("bias", &fc->bias);
    } else if (auto* bn = std::get_if<BatchNormParams>(&bound.params)) {
        out.emplace_back("gamma", &bn->gamma);
        out.emplace_back("beta", &bn->beta);
    }
    return out;
}

WeightStore BuiltNetwork::export_weights() const {
    WeightStore store;
    for (const auto& bound : layers) {
        const std::string id = bound.def.full_id();
        if (const auto* conv = std::get_if<Conv2dParams>(&bound.params)) {
            store[id + "/filter"] = conv->filter;
            if (conv->bias.size() > 0) store[id + "/bias"] = conv->bias;
        } else if (const auto* fc = std::get_if<DenseParams>(&bound.params)) {
            store[id + "/weight"] = fc->weight;
            if (fc->bias.size() > 0) store[id + "/bias"] = fc->bias;
        } else if (const auto* bn = std::get_if<BatchNormParams>(&bound.params)) {
            store[id + "/gamma"] = bn->gamma;
            store[id + "/beta"] = bn->beta;
            store[id + "/moving_mean"] = bn->moving_mean;
            store[id + "/moving_variance"] = bn->moving_variance;
        }
    }
    return store;
}

Tensor forward(const BuiltNetwork& net, const Tensor& batch) {
    if (batch.rank() != net.input_shape.size() + 1)
        throw Error("batch rank " + std::to_string(batch.rank()) +
                    " does not match model input rank " +
                    std::to_string(net.input_shape.size() + 1));
    for (std::size_t i = 0; i < net.input_shape.size(); ++i)
        if (batch.dim(i + 1) != net.input_shape[i])
            throw Error("batch shape " + batch.shape_string() +
                        " does not match model input shape");

    Tensor cur = batch;
    for (const auto& bound : net.layers) {
        try {
            switch (bound.def.kind) {
                case LayerKind::Conv2d:
                    cur = conv2d_forward(cur, std::get<Conv2dParams>(bound.params),
                                         bound.slots, net.granularity);
                    break;
                case LayerKind::FullyConnected:
                    cur = fully_connected_forward(
                        cur, std::get<DenseParams>(bound.params), bound.slots,
                        net.granularity);
                    break;
                case LayerKind::MaxPool2d:
                    cur = maxpool2d_forward(cur, std::get<MaxPool2dParams>(bound.params),
                                            bound.slots);
                    break;
                case LayerKind::Relu:
                    cur = relu_forward(cur, bound.slots);
                    break;
                case LayerKind::BatchNorm:
                    cur = batchnorm_forward(cur, std::get<BatchNormParams>(bound.params),
                                            bound.slots);
                    break;
                case LayerKind::Softmax:
                    cur = softmax_forward(cur, bound.slots);
                    break;
                case LayerKind::Flatten: {
                    std::size_t features = 1;
                    for (std::size_t i = 1; i < cur.rank(); ++i) features *= cur.dim(i);
                    cur = cur.reshaped({cur.dim(0), features});
                    if (bound.slots.extrinsic) cur = bound.slots.extrinsic->quantize(cur);
                    break;
                }
            }
        } catch (const Error& e) {
            throw Error("layer '" + bound.def.full_id() + "': " + e.what());
        }
    }
    return cur;
}

std::string format_resolution_report(const BuiltNetwork& net) {
    std::ostringstream os;
    for (const auto& e : net.report) {
        os << e.layer_id << '\t' << e.slot << '\t'
           << (e.pattern.empty() ? "-" : e.pattern) << '\t' << e.quantizer << '\n';
    }
    return os.str();
}

}  // namespace fixquant
