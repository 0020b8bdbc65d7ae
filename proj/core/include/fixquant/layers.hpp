#pragma once

#include <cstddef>
#include <string>

#include "fixquant/quantizer.hpp"
#include "fixquant/tensor.hpp"

namespace fixquant {

enum class Padding { Same, Valid };

Padding parse_padding(const std::string& name);
std::string padding_name(Padding p);

/// How deep the per-operation quantization reaches inside a layer.
/// EveryOp re-rounds after each multiply and each partial-sum add, the way a
/// fixed-point MAC unit would; SumOnce rounds each product and the completed
/// sum only.
enum class IntrinsicGranularity { EveryOp, SumOnce };

IntrinsicGranularity parse_granularity(const std::string& name);
std::string granularity_name(IntrinsicGranularity g);

/// Quantizers bound to one layer. An empty slot means full-precision
/// computation at that level; when both are present the intrinsically
/// computed result is passed through the extrinsic quantizer afterwards.
struct QuantSlots {
    QuantizerPtr intrinsic;
    QuantizerPtr extrinsic;

    bool empty() const { return !intrinsic && !extrinsic; }
};

struct Conv2dParams {
    Tensor filter;  // [kh, kw, in_ch, out_ch]
    Tensor bias;    // [out_ch], may be empty
    std::size_t stride = 1;
    Padding padding = Padding::Valid;
};

struct DenseParams {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], may be empty
};

struct MaxPool2dParams {
    std::size_t window = 2;
    std::size_t stride = 2;
    Padding padding = Padding::Valid;
};

struct BatchNormParams {
    Tensor gamma, beta, moving_mean, moving_variance;  // per channel
    double epsilon = 1e-5;
};

/// Output extent of a convolution/pool axis for the given padding rule.
std::size_t conv_output_dim(std::size_t in, std::size_t window, std::size_t stride,
                            Padding padding);
/// Leading pad for Same padding (Valid pads nothing).
std::size_t pad_before(std::size_t in, std::size_t window, std::size_t stride,
                       Padding padding);

Tensor conv2d_forward(const Tensor& x, const Conv2dParams& p, const QuantSlots& slots,
                      IntrinsicGranularity g = IntrinsicGranularity::EveryOp);
Tensor fully_connected_forward(const Tensor& x, const DenseParams& p,
                               const QuantSlots& slots,
                               IntrinsicGranularity g = IntrinsicGranularity::EveryOp);
Tensor maxpool2d_forward(const Tensor& x, const MaxPool2dParams& p,
                         const QuantSlots& slots);
Tensor relu_forward(const Tensor& x, const QuantSlots& slots);
Tensor softmax_forward(const Tensor& x, const QuantSlots& slots);
Tensor batchnorm_forward(const Tensor& x, const BatchNormParams& p,
                         const QuantSlots& slots);

/// Warning sink for non-fatal conditions (intrinsic slot on layers that do
/// not support it, quantizer patterns matching nothing). Defaults to stderr.
void set_warning_handler(void (*handler)(const std::string&));
void warn(const std::string& message);

}  // namespace fixquant
