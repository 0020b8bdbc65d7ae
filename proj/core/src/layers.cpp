#include "fixquant/layers.hpp"

#include <cmath>
#include <iostream>

namespace fixquant {

namespace {

void (*g_warning_handler)(const std::string&) = nullptr;

ElementwiseQuantizer* as_elementwise(const QuantizerPtr& q, const char* where) {
    auto* e = dynamic_cast<ElementwiseQuantizer*>(q.get());
    if (!e)
        throw Error(std::string("intrinsic quantization in ") + where +
                    " requires an elementwise quantizer, got " + q->descriptor());
    return e;
}

void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw Error(std::string("non-finite values in ") + what);
}

Tensor apply_extrinsic(Tensor y, const QuantSlots& slots) {
    if (slots.extrinsic) return slots.extrinsic->quantize(y);
    return y;
}

}  // namespace

void set_warning_handler(void (*handler)(const std::string&)) {
    g_warning_handler = handler;
}

void warn(const std::string& message) {
    if (g_warning_handler)
        g_warning_handler(message);
    else
        std::cerr << "[fixquant] warning: " << message << '\n';
}

Padding parse_padding(const std::string& name) {
    if (name == "same") return Padding::Same;
    if (name == "valid") return Padding::Valid;
    throw Error("unknown padding '" + name + "' (expected same|valid)");
}

std::string padding_name(Padding p) { return p == Padding::Same ? "same" : "valid"; }

IntrinsicGranularity parse_granularity(const std::string& name) {
    if (name == "every-op") return IntrinsicGranularity::EveryOp;
    if (name == "sum-once") return IntrinsicGranularity::SumOnce;
    throw Error("unknown intrinsic granularity '" + name +
                "' (expected every-op|sum-once)");
}

std::string granularity_name(IntrinsicGranularity g) {
    return g == IntrinsicGranularity::EveryOp ? "every-op" : "sum-once";
}

std::size_t conv_output_dim(std::size_t in, std::size_t window, std::size_t stride,
                            Padding padding) {
    if (stride == 0) throw Error("stride must be positive");
    if (padding == Padding::Same) return (in + stride - 1) / stride;
    if (window > in)
        throw Error("window " + std::to_string(window) + " exceeds input extent " +
                    std::to_string(in) + " with valid padding");
    return (in - window) / stride + 1;
}

std::size_t pad_before(std::size_t in, std::size_t window, std::size_t stride,
                       Padding padding) {
    if (padding == Padding::Valid) return 0;
    const std::size_t out = conv_output_dim(in, window, stride, padding);
    const std::size_t span = (out - 1) * stride + window;
    const std::size_t total = span > in ? span - in : 0;
    return total / 2;
}

Tensor conv2d_forward(const Tensor& x, const Conv2dParams& p, const QuantSlots& slots,
                      IntrinsicGranularity g) {
    if (x.rank() != 4)
        throw Error("conv2d expects input [N,H,W,C], got " + x.shape_string());
    if (p.filter.rank() != 4)
        throw Error("conv2d filter must be [kh,kw,in,out], got " + p.filter.shape_string());
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t kh = p.filter.dim(0), kw = p.filter.dim(1);
    const std::size_t fin = p.filter.dim(2), cout = p.filter.dim(3);
    if (fin != cin)
        throw Error("conv2d channel mismatch: input has " + std::to_string(cin) +
                    ", filter expects " + std::to_string(fin));
    const bool has_bias = p.bias.size() > 0;
    if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != cout))
        throw Error("conv2d bias shape " + p.bias.shape_string() + " must be [" +
                    std::to_string(cout) + "]");
    require_finite(x, "conv2d input");

    const std::size_t oh = conv_output_dim(h, kh, p.stride, p.padding);
    const std::size_t ow = conv_output_dim(w, kw, p.stride, p.padding);
    const std::size_t ph = pad_before(h, kh, p.stride, p.padding);
    const std::size_t pw = pad_before(w, kw, p.stride, p.padding);
    Tensor out({n, oh, ow, cout});

    if (!slots.intrinsic) {
        // plain float path
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j)
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        double acc = 0.0;
                        for (std::size_t f = 0; f < cin; ++f)
                            for (std::size_t k = 0; k < kh; ++k) {
                                const std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(i * p.stride + k) -
                                    static_cast<std::ptrdiff_t>(ph);
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t l = 0; l < kw; ++l) {
                                    const std::ptrdiff_t iw =
                                        static_cast<std::ptrdiff_t>(j * p.stride + l) -
                                        static_cast<std::ptrdiff_t>(pw);
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    acc += x.at4(b, ih, iw, f) *
                                           p.filter.at4(k, l, f, oc);
                                }
                            }
                        if (has_bias) acc += p.bias[oc];
                        out.at4(b, i, j, oc) = acc;
                    }
        return apply_extrinsic(std::move(out), slots);
    }

    // Intrinsic path. Inputs, filter and bias are quantized up front; each
    // product is re-rounded, and (in EveryOp mode) so is each partial sum.
    // Taps that fall into the padding region are exact zeros and are skipped:
    // they leave the accumulator unchanged.
    auto* q = as_elementwise(slots.intrinsic, "conv2d");
    const Tensor qx = q->quantize(x);
    const Tensor qk = q->quantize(p.filter);
    const Tensor qb = has_bias ? q->quantize(p.bias) : Tensor();
    const bool every_op = (g == IntrinsicGranularity::EveryOp);

    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    double acc = 0.0;
                    for (std::size_t f = 0; f < cin; ++f)
                        for (std::size_t k = 0; k < kh; ++k) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(i * p.stride + k) -
                                static_cast<std::ptrdiff_t>(ph);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t l = 0; l < kw; ++l) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(j * p.stride + l) -
                                    static_cast<std::ptrdiff_t>(pw);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                                    continue;
                                const double prod = q->quantize_value(
                                    qx.at4(b, ih, iw, f) * qk.at4(k, l, f, oc));
                                acc = every_op ? q->quantize_value(acc + prod)
                                               : acc + prod;
                            }
                        }
                    if (!every_op) acc = q->quantize_value(acc);
                    if (has_bias) acc = q->quantize_value(acc + qb[oc]);
                    out.at4(b, i, j, oc) = acc;
                }
    return apply_extrinsic(std::move(out), slots);
}

Tensor fully_connected_forward(const Tensor& x, const DenseParams& p,
                               const QuantSlots& slots, IntrinsicGranularity g) {
    if (x.rank() != 2)
        throw Error("fully_connected expects input [N,in], got " + x.shape_string());
    if (p.weight.rank() != 2)
        throw Error("fully_connected weight must be [in,out], got " +
                    p.weight.shape_string());
    const std::size_t n = x.dim(0), in = x.dim(1);
    if (p.weight.dim(0) != in)
        throw Error("fully_connected dimension mismatch: input " + x.shape_string() +
                    " vs weight " + p.weight.shape_string());
    const std::size_t outdim = p.weight.dim(1);
    const bool has_bias = p.bias.size() > 0;
    if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != outdim))
        throw Error("fully_connected bias shape " + p.bias.shape_string() +
                    " must be [" + std::to_string(outdim) + "]");
    require_finite(x, "fully_connected input");

    Tensor out({n, outdim});
    if (!slots.intrinsic) {
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t o = 0; o < outdim; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < in; ++i)
                    acc += x.at2(b, i) * p.weight.at2(i, o);
                if (has_bias) acc += p.bias[o];
                out.at2(b, o) = acc;
            }
        return apply_extrinsic(std::move(out), slots);
    }

    auto* q = as_elementwise(slots.intrinsic, "fully_connected");
    const Tensor qx = q->quantize(x);
    const Tensor qw = q->quantize(p.weight);
    const Tensor qb = has_bias ? q->quantize(p.bias) : Tensor();
    const bool every_op = (g == IntrinsicGranularity::EveryOp);

    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < outdim; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) {
                const double prod = q->quantize_value(qx.at2(b, i) * qw.at2(i, o));
                acc = every_op ? q->quantize_value(acc + prod) : acc + prod;
            }
            if (!every_op) acc = q->quantize_value(acc);
            if (has_bias) acc = q->quantize_value(acc + qb[o]);
            out.at2(b, o) = acc;
        }
    return apply_extrinsic(std::move(out), slots);
}

Tensor maxpool2d_forward(const Tensor& x, const MaxPool2dParams& p,
                         const QuantSlots& slots) {
    if (x.rank() != 4)
        throw Error("maxpool2d expects input [N,H,W,C], got " + x.shape_string());
    require_finite(x, "maxpool2d input");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t oh = conv_output_dim(h, p.window, p.stride, p.padding);
    const std::size_t ow = conv_output_dim(w, p.window, p.stride, p.padding);
    const std::size_t ph = pad_before(h, p.window, p.stride, p.padding);
    const std::size_t pw = pad_before(w, p.window, p.stride, p.padding);

    // Max over representable values is representable, so intrinsic mode only
    // needs to quantize the input once.
    Tensor input = x;
    if (slots.intrinsic) input = slots.intrinsic->quantize(x);

    Tensor out({n, oh, ow, c});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    bool seen = false;
                    double best = 0.0;
                    for (std::size_t k = 0; k < p.window; ++k) {
                        const std::ptrdiff_t ih =
                            static_cast<std::ptrdiff_t>(i * p.stride + k) -
                            static_cast<std::ptrdiff_t>(ph);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t l = 0; l < p.window; ++l) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(j * p.stride + l) -
                                static_cast<std::ptrdiff_t>(pw);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            const double v = input.at4(b, ih, iw, ch);
                            if (!seen || v > best) best = v;
                            seen = true;
                        }
                    }
                    if (!seen) throw Error("maxpool2d window has no valid taps");
                    out.at4(b, i, j, ch) = best;
                }
    return apply_extrinsic(std::move(out), slots);
}

Tensor relu_forward(const Tensor& x, const QuantSlots& slots) {
    require_finite(x, "relu input");
    Tensor input = x;
    if (slots.intrinsic) input = slots.intrinsic->quantize(x);
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return apply_extrinsic(std::move(out), slots);
}

Tensor softmax_forward(const Tensor& x, const QuantSlots& slots) {
    if (x.rank() != 2)
        throw Error("softmax expects input [N,classes], got " + x.shape_string());
    require_finite(x, "softmax input");
    if (slots.intrinsic)
        warn("softmax is computed in floating point; intrinsic quantizer " +
             slots.intrinsic->descriptor() + " ignored");
    const std::size_t n = x.dim(0), c = x.dim(1);
    Tensor out({n, c});
    for (std::size_t b = 0; b < n; ++b) {
        double m = x.at2(b, 0);
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, x.at2(b, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x.at2(b, j) - m);
        for (std::size_t j = 0; j < c; ++j) out.at2(b, j) = std::exp(x.at2(b, j) - m) / z;
    }
    return apply_extrinsic(std::move(out), slots);
}

Tensor batchnorm_forward(const Tensor& x, const BatchNormParams& p,
                         const QuantSlots& slots) {
    require_finite(x, "batchnorm input");
    const std::size_t c = x.dim(x.rank() - 1);
    auto check = [&](const Tensor& t, const char* name) {
        if (t.rank() != 1 || t.dim(0) != c)
            throw Error(std::string("batchnorm ") + name + " shape " + t.shape_string() +
                        " must be [" + std::to_string(c) + "]");
    };
    check(p.gamma, "gamma");
    check(p.beta, "beta");
    check(p.moving_mean, "moving_mean");
    check(p.moving_variance, "moving_variance");
    for (std::size_t i = 0; i < c; ++i)
        if (p.moving_variance[i] < 0.0) throw Error("batchnorm variance is negative");
    if (slots.intrinsic)
        warn("batchnorm runs in full precision; intrinsic quantizer " +
             slots.intrinsic->descriptor() + " ignored");

    Tensor out(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ch = i % c;
        out[i] = (x[i] - p.moving_mean[ch]) /
                     std::sqrt(p.moving_variance[ch] + p.epsilon) * p.gamma[ch] +
                 p.beta[ch];
    }
    return apply_extrinsic(std::move(out), slots);
}

}  // namespace fixquant
