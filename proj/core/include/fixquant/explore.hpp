#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fixquant/data.hpp"
#include "fixquant/graph.hpp"

namespace fixquant {

/// Fraction of samples whose argmax(logits) equals the label; argmax ties
/// resolve to the lowest class index.
double evaluate(const BuiltNetwork& net, const LabeledDataset& dataset);

enum class SweepSlot { Intrinsic, Extrinsic };

SweepSlot parse_sweep_slot(const std::string& name);
std::string sweep_slot_name(SweepSlot slot);

struct Subunit {
    std::string name;
    std::string pattern;
};

/// Which fractional-bit values to try at each word size.
struct SweepPlan {
    std::vector<Subunit> subunits;
    std::vector<int> word_sizes;
    enum class FracMode { All, Half, Explicit } frac_mode = FracMode::All;
    std::map<int, std::vector<int>> frac_explicit;  // used with FracMode::Explicit
    SweepSlot slot = SweepSlot::Intrinsic;
    RoundingMode mode = RoundingMode::Nearest;
    /// Relative accuracy required to "pass"; <= 0 selects the automatic
    /// threshold (baseline minus one misclassification on the subset).
    double accuracy_threshold = 0.0;
    double eval_subset_fraction = 0.01;
    std::uint64_t subset_seed = 0;
    std::uint64_t stochastic_seed = 0;

    std::vector<int> frac_bits_for(int word_size) const;
    void validate() const;
};

SweepPlan load_sweep_plan(const std::string& path);
SweepPlan parse_sweep_plan(const std::string& json_text);
/// Stable fingerprint of the plan contents, used to guard sweep resumption.
std::uint64_t plan_hash(const SweepPlan& plan);

struct SweepCell {
    std::string subunit;
    int word_size = 0;
    int frac_bits = 0;
    double rel_accuracy = 0.0;
};

struct BestConfig {
    int word_size = 0;
    int frac_bits = 0;
    bool satisfiable = false;
};

struct SweepResult {
    double baseline_accuracy = 0.0;
    double threshold = 0.0;
    std::uint64_t plan_hash = 0;
    std::uint64_t subset_seed = 0;
    std::vector<std::size_t> subset_indices;
    std::vector<SweepCell> grid;
    std::vector<std::pair<std::string, BestConfig>> bests;  // declaration order
    std::string bottleneck;
    bool bottleneck_unsatisfiable = false;
    bool bottleneck_tie = false;
};

/// Smallest (W, then F) passing configuration; the grid is searched
/// exhaustively (accuracy is not assumed monotone in F).
std::optional<std::pair<int, int>> select_minimal_passing(
    const std::vector<SweepCell>& cells, double threshold);

/// Max-W best configuration, ties broken by max F, remaining ties by
/// declaration order (flagged). A subunit with no passing configuration is
/// itself the bottleneck, flagged unsatisfiable.
std::string find_bottleneck(const SweepResult& result, bool* unsatisfiable = nullptr,
                            bool* tie = nullptr);

/// Absolute accuracy of one (subunit, W, F) cell.
using CellEvaluator = std::function<double(const Subunit&, int w, int f)>;

/// Core sweep driver against an injected evaluator; known_cells (from a
/// previous run with the same plan hash) are reused instead of re-evaluated.
SweepResult run_sweep_with_evaluator(
    const SweepPlan& plan, double baseline_accuracy, const CellEvaluator& eval,
    int jobs = 1,
    const std::map<std::tuple<std::string, int, int>, double>* known_cells = nullptr);

/// Full sweep: builds one network per cell quantizing only that subunit and
/// evaluates it on a fixed seeded subset of `dataset`.
SweepResult run_sweep(
    const SweepPlan& plan, const ModelSpec& spec, const WeightStore& weights,
    const LabeledDataset& dataset,
    IntrinsicGranularity granularity = IntrinsicGranularity::EveryOp, int jobs = 1,
    const std::map<std::tuple<std::string, int, int>, double>* known_cells = nullptr);

void write_sweep_csv(const SweepResult& result, const std::string& path);
/// Cells from an earlier CSV, or nullopt when the recorded plan hash differs.
std::optional<std::map<std::tuple<std::string, int, int>, double>> load_sweep_csv(
    const std::string& path, std::uint64_t expected_hash);
void write_sweep_summary_json(const SweepResult& result, const std::string& path);

}  // namespace fixquant
