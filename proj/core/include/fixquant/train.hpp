#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fixquant/data.hpp"
#include "fixquant/graph.hpp"
#include "fixquant/quantizer.hpp"

namespace fixquant {

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 1;
    std::size_t batch_size = 32;
    double l2_lambda = 0.0;
    QuantizerPtr gradient_quantizer;  // applied to raw gradients before scaling
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate < 0.0) throw Error("learning_rate must be >= 0");
        if (batch_size < 1) throw Error("batch_size must be >= 1");
        if (l2_lambda < 0.0) throw Error("l2_lambda must be >= 0");
        if (epochs < 0) throw Error("epochs must be >= 0");
    }
};

struct StepRecord {
    std::size_t step;
    double loss, xent, l2;
};

struct EpochRecord {
    int epoch;
    double test_accuracy;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

void write_step_log_csv(const TrainLog& log, const std::string& path);
void write_epoch_log_csv(const TrainLog& log, const std::string& path);

/// Gradients mirror trainable_params(): one (name, tensor) list per layer.
struct Gradients {
    std::vector<std::vector<std::pair<std::string, Tensor>>> by_layer;
};

struct LossInfo {
    double total = 0.0, xent = 0.0, l2 = 0.0;
};

/// Analytic gradients of cross_entropy(softmax(logits)) + l2_lambda * sum(w^2)
/// over all trainable parameters, against the plain float forward pass
/// (quantization in the forward path is not differentiated).
LossInfo backward(BuiltNetwork& net, const Tensor& batch, const std::vector<int>& labels,
                  double l2_lambda, Gradients& grads);

/// w <- w - lr * Q(grad), with Q applied to the raw gradient before scaling.
/// A per-layer gradient quantizer bound in the network takes precedence over
/// cfg.gradient_quantizer.
void apply_update(BuiltNetwork& net, const Gradients& grads, const TrainConfig& cfg);

/// Shuffled mini-batch SGD; updates the network weights in place.
TrainLog train(BuiltNetwork& net, const LabeledDataset& train_set,
               const LabeledDataset& test_set, const TrainConfig& cfg);

}  // namespace fixquant
