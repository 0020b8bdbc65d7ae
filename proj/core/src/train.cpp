#include "fixquant/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "fixquant/explore.hpp"

namespace fixquant {

namespace {

/// Plain float forward, caching every layer's input; acts[i] is the input of
/// layer i, acts.back() the network output.
std::vector<Tensor> forward_cached(const BuiltNetwork& net, const Tensor& batch) {
    static const QuantSlots kPlain{};
    std::vector<Tensor> acts;
    acts.reserve(net.layers.size() + 1);
    Tensor cur = batch;
    for (const auto& bound : net.layers) {
        acts.push_back(cur);
        switch (bound.def.kind) {
            case LayerKind::Conv2d:
                cur = conv2d_forward(cur, std::get<Conv2dParams>(bound.params), kPlain);
                break;
            case LayerKind::FullyConnected:
                cur = fully_connected_forward(cur, std::get<DenseParams>(bound.params),
                                              kPlain);
                break;
            case LayerKind::MaxPool2d:
                cur = maxpool2d_forward(cur, std::get<MaxPool2dParams>(bound.params),
                                        kPlain);
                break;
            case LayerKind::Relu:
                cur = relu_forward(cur, kPlain);
                break;
            case LayerKind::BatchNorm:
                cur = batchnorm_forward(cur, std::get<BatchNormParams>(bound.params),
                                        kPlain);
                break;
            case LayerKind::Softmax:
                cur = softmax_forward(cur, kPlain);
                break;
            case LayerKind::Flatten: {
                std::size_t features = 1;
                for (std::size_t i = 1; i < cur.rank(); ++i) features *= cur.dim(i);
                cur = cur.reshaped({cur.dim(0), features});
                break;
            }
        }
    }
    acts.push_back(cur);
    return acts;
}

Tensor conv2d_backward(const Tensor& x, const Conv2dParams& p, const Tensor& dy,
                       Tensor& dfilter, Tensor& dbias) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t kh = p.filter.dim(0), kw = p.filter.dim(1);
    const std::size_t cout = p.filter.dim(3);
    const std::size_t oh = dy.dim(1), ow = dy.dim(2);
    const std::size_t ph = pad_before(h, kh, p.stride, p.padding);
    const std::size_t pw = pad_before(w, kw, p.stride, p.padding);

    Tensor dx(x.shape());
    dfilter = Tensor(p.filter.shape());
    if (p.bias.size() > 0) dbias = Tensor(p.bias.shape());

    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    const double g = dy.at4(b, i, j, oc);
                    if (g == 0.0) continue;
                    if (p.bias.size() > 0) dbias[oc] += g;
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
                                dfilter.at4(k, l, f, oc) += x.at4(b, ih, iw, f) * g;
                                dx.at4(b, ih, iw, f) += p.filter.at4(k, l, f, oc) * g;
                            }
                        }
                }
    // bias gradient accumulated above only for nonzero dy; redo exactly when
    // dy has zeros is unnecessary: skipping zero contributions is exact.
    return dx;
}

Tensor maxpool2d_backward(const Tensor& x, const MaxPool2dParams& p, const Tensor& dy) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t oh = dy.dim(1), ow = dy.dim(2);
    const std::size_t ph = pad_before(h, p.window, p.stride, p.padding);
    const std::size_t pw = pad_before(w, p.window, p.stride, p.padding);
    Tensor dx(x.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    // gradient routes to the first maximum in scan order
                    bool seen = false;
                    double best = 0.0;
                    std::size_t bi = 0, bj = 0;
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
                            const double v = x.at4(b, ih, iw, ch);
                            if (!seen || v > best) {
                                best = v;
                                bi = ih;
                                bj = iw;
                                seen = true;
                            }
                        }
                    }
                    dx.at4(b, bi, bj, ch) += dy.at4(b, i, j, ch);
                }
    return dx;
}

}  // namespace

LossInfo backward(BuiltNetwork& net, const Tensor& batch, const std::vector<int>& labels,
                  double l2_lambda, Gradients& grads) {
    if (batch.dim(0) != labels.size())
        throw Error("batch size does not match label count");
    const auto acts = forward_cached(net, batch);
    const std::size_t n_layers = net.layers.size();
    const std::size_t batch_n = batch.dim(0);

    // Locate the logits: the input of a trailing softmax layer, otherwise the
    // network output.
    const bool trailing_softmax =
        !net.layers.empty() && net.layers.back().def.kind == LayerKind::Softmax;
    const Tensor& logits = trailing_softmax ? acts[n_layers - 1] : acts[n_layers];
    if (logits.rank() != 2) throw Error("loss expects [N,classes] logits");
    const std::size_t classes = logits.dim(1);

    LossInfo info;
    Tensor dlogits(logits.shape());
    for (std::size_t b = 0; b < batch_n; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= classes)
            throw Error("label " + std::to_string(label) + " out of range");
        double m = logits.at2(b, 0);
        for (std::size_t j = 1; j < classes; ++j) m = std::max(m, logits.at2(b, j));
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(logits.at2(b, j) - m);
        info.xent += (std::log(z) + m - logits.at2(b, label)) / double(batch_n);
        for (std::size_t j = 0; j < classes; ++j) {
            const double s = std::exp(logits.at2(b, j) - m) / z;
            dlogits.at2(b, j) =
                (s - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / double(batch_n);
        }
    }

    grads.by_layer.assign(n_layers, {});
    Tensor dy = dlogits;
    const std::size_t start = trailing_softmax ? n_layers - 1 : n_layers;
    for (std::size_t li = start; li-- > 0;) {
        auto& bound = net.layers[li];
        const Tensor& x = acts[li];
        switch (bound.def.kind) {
            case LayerKind::Conv2d: {
                auto& p = std::get<Conv2dParams>(bound.params);
                Tensor dfilter, dbias;
                Tensor dx = conv2d_backward(x, p, dy, dfilter, dbias);
                grads.by_layer[li].emplace_back("filter", std::move(dfilter));
                if (p.bias.size() > 0)
                    grads.by_layer[li].emplace_back("bias", std::move(dbias));
                dy = std::move(dx);
                break;
            }
            case LayerKind::FullyConnected: {
                auto& p = std::get<DenseParams>(bound.params);
                const std::size_t in = p.weight.dim(0), out = p.weight.dim(1);
                Tensor dw(p.weight.shape());
                for (std::size_t i = 0; i < in; ++i)
                    for (std::size_t o = 0; o < out; ++o) {
                        double acc = 0.0;
                        for (std::size_t b = 0; b < batch_n; ++b)
                            acc += x.at2(b, i) * dy.at2(b, o);
                        dw.at2(i, o) = acc;
                    }
                Tensor dx({batch_n, in});
                for (std::size_t b = 0; b < batch_n; ++b)
                    for (std::size_t i = 0; i < in; ++i) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < out; ++o)
                            acc += dy.at2(b, o) * p.weight.at2(i, o);
                        dx.at2(b, i) = acc;
                    }
                grads.by_layer[li].emplace_back("weight", std::move(dw));
                if (p.bias.size() > 0) {
                    Tensor db(p.bias.shape());
                    for (std::size_t o = 0; o < out; ++o) {
                        double acc = 0.0;
                        for (std::size_t b = 0; b < batch_n; ++b) acc += dy.at2(b, o);
                        db[o] = acc;
                    }
                    grads.by_layer[li].emplace_back("bias", std::move(db));
                }
                dy = std::move(dx);
                break;
            }
            case LayerKind::MaxPool2d:
                dy = maxpool2d_backward(x, std::get<MaxPool2dParams>(bound.params), dy);
                break;
            case LayerKind::Relu: {
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i)
                    dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
                dy = std::move(dx);
                break;
            }
            case LayerKind::BatchNorm: {
                auto& p = std::get<BatchNormParams>(bound.params);
                const std::size_t c = p.gamma.dim(0);
                Tensor dgamma({c}), dbeta({c});
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const std::size_t ch = i % c;
                    const double inv =
                        1.0 / std::sqrt(p.moving_variance[ch] + p.epsilon);
                    const double xhat = (x[i] - p.moving_mean[ch]) * inv;
                    dgamma[ch] += dy[i] * xhat;
                    dbeta[ch] += dy[i];
                    dx[i] = dy[i] * p.gamma[ch] * inv;
                }
                grads.by_layer[li].emplace_back("gamma", std::move(dgamma));
                grads.by_layer[li].emplace_back("beta", std::move(dbeta));
                dy = std::move(dx);
                break;
            }
            case LayerKind::Softmax: {
                // mid-network softmax: dx_i = s_i * (dy_i - sum_j dy_j s_j)
                const Tensor& s = acts[li + 1];
                Tensor dx(s.shape());
                const std::size_t c = s.dim(1);
                for (std::size_t b = 0; b < s.dim(0); ++b) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += dy.at2(b, j) * s.at2(b, j);
                    for (std::size_t j = 0; j < c; ++j)
                        dx.at2(b, j) = s.at2(b, j) * (dy.at2(b, j) - dot);
                }
                dy = std::move(dx);
                break;
            }
            case LayerKind::Flatten:
                dy = dy.reshaped(x.shape());
                break;
        }
    }

    // L2 term over all trainable parameters, folded into the raw gradient.
    for (std::size_t li = 0; li < n_layers; ++li) {
        for (auto& [name, grad] : grads.by_layer[li]) {
            for (auto& [pname, param] : net.trainable_params(li)) {
                if (pname != name) continue;
                for (std::size_t i = 0; i < param->size(); ++i) {
                    info.l2 += l2_lambda * (*param)[i] * (*param)[i];
                    grad[i] += 2.0 * l2_lambda * (*param)[i];
                }
            }
        }
    }
    info.total = info.xent + info.l2;
    return info;
}

void apply_update(BuiltNetwork& net, const Gradients& grads, const TrainConfig& cfg) {
    cfg.validate();
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (li >= grads.by_layer.size()) break;
        QuantizerPtr q = net.layers[li].gradient ? net.layers[li].gradient
                                                 : cfg.gradient_quantizer;
        auto params = net.trainable_params(li);
        for (const auto& [name, grad] : grads.by_layer[li]) {
            Tensor* target = nullptr;
            for (auto& [pname, param] : params)
                if (pname == name) target = param;
            if (!target)
                throw Error("gradient for unknown parameter '" + name + "'");
            if (!grad.all_finite())
                throw Error("non-finite gradient for '" +
                            net.layers[li].def.full_id() + "/" + name + "'");
            const Tensor step = q ? q->quantize(grad) : grad;
            for (std::size_t i = 0; i < target->size(); ++i)
                (*target)[i] -= cfg.learning_rate * step[i];
        }
    }
}

TrainLog train(BuiltNetwork& net, const LabeledDataset& train_set,
               const LabeledDataset& test_set, const TrainConfig& cfg) {
    cfg.validate();
    TrainLog log;
    std::mt19937_64 gen(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), gen);
        for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            const std::size_t end = std::min(pos + cfg.batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + pos, order.begin() + end);
            const Tensor batch = train_set.gather(idx);
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
            Gradients grads;
            const LossInfo info = backward(net, batch, labels, cfg.l2_lambda, grads);
            apply_update(net, grads, cfg);
            log.steps.push_back({step++, info.total, info.xent, info.l2});
        }
        log.epochs.push_back({epoch, evaluate(net, test_set)});
    }
    return log;
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_step_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "step,loss,xent,l2\n";
    for (const auto& s : log.steps)
        out << s.step << ',' << fmt17(s.loss) << ',' << fmt17(s.xent) << ','
            << fmt17(s.l2) << '\n';
}

void write_epoch_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "epoch,test_accuracy\n";
    for (const auto& e : log.epochs)
        out << e.epoch << ',' << fmt17(e.test_accuracy) << '\n';
}

}  // namespace fixquant
