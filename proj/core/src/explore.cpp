#include "fixquant/explore.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fixquant {

using nlohmann::json;

double evaluate(const BuiltNetwork& net, const LabeledDataset& dataset) {
    if (dataset.size() == 0) throw Error("cannot evaluate on an empty dataset");
    // Chunking bounds intermediate memory; samples are independent and the
    // batch axis is outermost, so results (and stochastic draw order) are
    // identical to a single full-dataset pass.
    constexpr std::size_t kChunk = 256;
    const std::size_t total = dataset.size();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < total; start += kChunk) {
        const std::size_t end = std::min(start + kChunk, total);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Tensor logits = forward(net, dataset.gather(idx));
        if (logits.rank() != 2)
            throw Error("evaluate expects [N,classes] network output, got " +
                        logits.shape_string());
        const std::size_t c = logits.dim(1);
        for (std::size_t b = 0; b < logits.dim(0); ++b) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits.at2(b, j) > logits.at2(b, best)) best = j;
            if (static_cast<int>(best) == dataset.labels[start + b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

SweepSlot parse_sweep_slot(const std::string& name) {
    if (name == "intrinsic") return SweepSlot::Intrinsic;
    if (name == "extrinsic") return SweepSlot::Extrinsic;
    throw Error("unknown sweep slot '" + name + "' (expected intrinsic|extrinsic)");
}

std::string sweep_slot_name(SweepSlot slot) {
    return slot == SweepSlot::Intrinsic ? "intrinsic" : "extrinsic";
}

std::vector<int> SweepPlan::frac_bits_for(int word_size) const {
    switch (frac_mode) {
        case FracMode::All: {
            std::vector<int> out;
            for (int f = 0; f < word_size; ++f) out.push_back(f);
            return out;
        }
        case FracMode::Half:
            return {word_size / 2};
        case FracMode::Explicit: {
            auto it = frac_explicit.find(word_size);
            if (it == frac_explicit.end())
                throw Error("sweep plan: no fractional bits listed for word size " +
                            std::to_string(word_size));
            return it->second;
        }
    }
    return {};
}

void SweepPlan::validate() const {
    if (subunits.empty()) throw Error("sweep plan needs at least one subunit");
    for (const auto& s : subunits) {
        if (s.name.empty() || s.pattern.empty())
            throw Error("sweep subunits need a name and a nonempty pattern");
    }
    if (word_sizes.empty()) throw Error("sweep plan needs word sizes");
    for (int w : word_sizes) {
        if (w < 2 || w > 64) throw Error("sweep word sizes must be in [2,64]");
        for (int f : frac_bits_for(w))
            if (f < 0 || f >= w)
                throw Error("sweep fractional bits must be in [0,W-1]");
    }
    if (accuracy_threshold > 1.0)
        throw Error("accuracy threshold must be in (0,1] (or <=0 for automatic)");
    if (eval_subset_fraction <= 0.0 || eval_subset_fraction > 1.0)
        throw Error("eval_subset_fraction must be in (0,1]");
}

SweepPlan parse_sweep_plan(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw Error("malformed JSON in sweep plan");
    SweepPlan plan;
    for (const auto& s : j.at("subunits"))
        plan.subunits.push_back(
            {s.at("name").get<std::string>(), s.at("pattern").get<std::string>()});
    plan.word_sizes = j.at("word_sizes").get<std::vector<int>>();
    if (j.contains("frac")) {
        const auto& f = j["frac"];
        if (f.is_string()) {
            const std::string mode = f.get<std::string>();
            if (mode == "all")
                plan.frac_mode = SweepPlan::FracMode::All;
            else if (mode == "half")
                plan.frac_mode = SweepPlan::FracMode::Half;
            else
                throw Error("sweep plan: frac must be 'all', 'half' or a {W:[F...]} map");
        } else {
            plan.frac_mode = SweepPlan::FracMode::Explicit;
            for (const auto& [k, v] : f.items())
                plan.frac_explicit[std::stoi(k)] = v.get<std::vector<int>>();
        }
    }
    if (j.contains("slot")) plan.slot = parse_sweep_slot(j["slot"].get<std::string>());
    if (j.contains("mode"))
        plan.mode = parse_rounding_mode(j["mode"].get<std::string>());
    if (j.contains("accuracy_threshold"))
        plan.accuracy_threshold = j["accuracy_threshold"].get<double>();
    if (j.contains("eval_subset_fraction"))
        plan.eval_subset_fraction = j["eval_subset_fraction"].get<double>();
    if (j.contains("subset_seed")) plan.subset_seed = j["subset_seed"].get<std::uint64_t>();
    if (j.contains("stochastic_seed"))
        plan.stochastic_seed = j["stochastic_seed"].get<std::uint64_t>();
    plan.validate();
    return plan;
}

SweepPlan load_sweep_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open sweep plan " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_sweep_plan(os.str());
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string canonical_plan_text(const SweepPlan& plan) {
    std::ostringstream os;
    for (const auto& s : plan.subunits) os << s.name << '=' << s.pattern << ';';
    os << '|';
    for (int w : plan.word_sizes) {
        os << w << ':';
        for (int f : plan.frac_bits_for(w)) os << f << ',';
        os << ';';
    }
    os << '|' << sweep_slot_name(plan.slot) << '|' << rounding_mode_name(plan.mode)
       << '|' << plan.accuracy_threshold << '|' << plan.eval_subset_fraction << '|'
       << plan.subset_seed << '|' << plan.stochastic_seed;
    return os.str();
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::uint64_t plan_hash(const SweepPlan& plan) {
    return fnv1a(canonical_plan_text(plan));
}

std::optional<std::pair<int, int>> select_minimal_passing(
    const std::vector<SweepCell>& cells, double threshold) {
    std::optional<std::pair<int, int>> best;
    for (const auto& c : cells) {
        if (c.rel_accuracy < threshold) continue;
        const std::pair<int, int> cand{c.word_size, c.frac_bits};
        if (!best || cand < *best) best = cand;
    }
    return best;
}

std::string find_bottleneck(const SweepResult& result, bool* unsatisfiable, bool* tie) {
    if (result.bests.empty()) throw Error("find_bottleneck on an empty sweep result");
    if (unsatisfiable) *unsatisfiable = false;
    if (tie) *tie = false;
    for (const auto& [name, best] : result.bests) {
        if (!best.satisfiable) {
            if (unsatisfiable) *unsatisfiable = true;
            return name;
        }
    }
    const std::pair<std::string, BestConfig>* chosen = &result.bests.front();
    for (const auto& entry : result.bests) {
        const auto key = std::pair{entry.second.word_size, entry.second.frac_bits};
        const auto cur = std::pair{chosen->second.word_size, chosen->second.frac_bits};
        if (key > cur) chosen = &entry;
    }
    // equal (W,F) elsewhere means the declaration-order winner is arbitrary
    for (const auto& entry : result.bests) {
        if (&entry == chosen) continue;
        if (entry.second.word_size == chosen->second.word_size &&
            entry.second.frac_bits == chosen->second.frac_bits) {
            if (tie) *tie = true;
            warn("bottleneck tie between subunits '" + chosen->first + "' and '" +
                 entry.first + "'; declaration order decides");
            break;
        }
    }
    return chosen->first;
}

SweepResult run_sweep_with_evaluator(
    const SweepPlan& plan, double baseline_accuracy, const CellEvaluator& eval,
    int jobs, const std::map<std::tuple<std::string, int, int>, double>* known_cells) {
    plan.validate();
    if (baseline_accuracy <= 0.0)
        throw Error("baseline accuracy must be positive for a sweep");

    SweepResult result;
    result.baseline_accuracy = baseline_accuracy;
    result.plan_hash = plan_hash(plan);
    result.subset_seed = plan.subset_seed;
    result.threshold = plan.accuracy_threshold;

    struct CellSpec {
        std::size_t subunit_index;
        int w, f;
    };
    std::vector<CellSpec> todo;
    for (std::size_t si = 0; si < plan.subunits.size(); ++si)
        for (int w : plan.word_sizes)
            for (int f : plan.frac_bits_for(w)) todo.push_back({si, w, f});

    std::vector<double> rel(todo.size());
    std::vector<char> done(todo.size(), 0);
    if (known_cells) {
        for (std::size_t i = 0; i < todo.size(); ++i) {
            const auto key = std::make_tuple(plan.subunits[todo[i].subunit_index].name,
                                             todo[i].w, todo[i].f);
            auto it = known_cells->find(key);
            if (it != known_cells->end()) {
                rel[i] = it->second;
                done[i] = 1;
            }
        }
    }

    auto run_cell = [&](std::size_t i) {
        const auto& cell = todo[i];
        const double abs_acc = eval(plan.subunits[cell.subunit_index], cell.w, cell.f);
        rel[i] = abs_acc / baseline_accuracy;
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < todo.size(); ++i)
            if (!done[i]) run_cell(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (int t = 0; t < jobs; ++t)
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < todo.size();
                     i = next.fetch_add(1))
                    if (!done[i]) run_cell(i);
            });
        for (auto& w : workers) w.join();
    }

    for (std::size_t i = 0; i < todo.size(); ++i)
        result.grid.push_back({plan.subunits[todo[i].subunit_index].name, todo[i].w,
                               todo[i].f, rel[i]});

    for (const auto& sub : plan.subunits) {
        std::vector<SweepCell> cells;
        for (const auto& c : result.grid)
            if (c.subunit == sub.name) cells.push_back(c);
        const auto best = select_minimal_passing(cells, result.threshold);
        BestConfig cfg;
        if (best) cfg = {best->first, best->second, true};
        result.bests.emplace_back(sub.name, cfg);
    }
    result.bottleneck = find_bottleneck(result, &result.bottleneck_unsatisfiable,
                                        &result.bottleneck_tie);
    return result;
}

SweepResult run_sweep(
    const SweepPlan& plan, const ModelSpec& spec, const WeightStore& weights,
    const LabeledDataset& dataset, IntrinsicGranularity granularity, int jobs,
    const std::map<std::tuple<std::string, int, int>, double>* known_cells) {
    plan.validate();

    // fail before any evaluation if a pattern resolves to zero layers
    for (const auto& sub : plan.subunits) {
        bool matched = false;
        for (const auto& l : spec.layers) {
            if (l.full_id().find(sub.pattern) != std::string::npos ||
                sub.pattern == layer_kind_name(l.kind)) {
                matched = true;
                break;
            }
        }
        if (!matched)
            throw Error("sweep subunit '" + sub.name + "' pattern '" + sub.pattern +
                        "' resolves to zero layers");
    }

    const auto indices =
        subset_indices(dataset.size(), plan.eval_subset_fraction, plan.subset_seed);
    const LabeledDataset eval_set = subset_by_indices(dataset, indices);

    const BuiltNetwork baseline_net =
        build_network(spec, QuantizerMaps{}, weights, granularity);
    const double baseline = evaluate(baseline_net, eval_set);
    if (baseline <= 0.0)
        throw Error("baseline network classifies nothing correctly on the subset; "
                    "sweep relative accuracies would be undefined");

    SweepPlan effective = plan;
    if (effective.accuracy_threshold <= 0.0) {
        // pass = losing at most one correctly classified sample vs baseline
        const double correct = baseline * static_cast<double>(eval_set.size());
        effective.accuracy_threshold = (correct - 1.0) / correct;
    }

    const std::uint64_t stochastic_root = plan.stochastic_seed;
    CellEvaluator eval = [&, stochastic_root](const Subunit& sub, int w, int f) {
        std::optional<std::uint64_t> seed;
        if (plan.mode == RoundingMode::Stochastic) {
            const std::uint64_t cell_key =
                fnv1a(sub.name + "/" + std::to_string(w) + "/" + std::to_string(f));
            seed = make_random_source(stochastic_root).derive(cell_key).seed();
        }
        auto q = std::make_shared<FixedPointQuantizer>(FixedPointFormat(w, f),
                                                       plan.mode, seed);
        QuantizerMaps maps;
        if (plan.slot == SweepSlot::Intrinsic)
            maps.intrinsic.add(sub.pattern, q);
        else
            maps.extrinsic.add(sub.pattern, q);
        const BuiltNetwork net = build_network(spec, maps, weights, granularity);
        return evaluate(net, eval_set);
    };

    SweepResult result = run_sweep_with_evaluator(effective, baseline, eval, jobs,
                                                  known_cells);
    result.subset_indices = indices;
    result.plan_hash = plan_hash(plan);
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "# plan_hash=" << result.plan_hash << '\n';
    out << "subunit,W,F,rel_accuracy\n";
    for (const auto& c : result.grid)
        out << c.subunit << ',' << c.word_size << ',' << c.frac_bits << ','
            << fmt17(c.rel_accuracy) << '\n';
}

std::optional<std::map<std::tuple<std::string, int, int>, double>> load_sweep_csv(
    const std::string& path, std::uint64_t expected_hash) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# plan_hash=", 0) != 0)
        return std::nullopt;
    if (std::stoull(line.substr(12)) != expected_hash) return std::nullopt;
    std::getline(in, line);  // header
    std::map<std::tuple<std::string, int, int>, double> cells;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string subunit, w, f, rel;
        std::getline(ls, subunit, ',');
        std::getline(ls, w, ',');
        std::getline(ls, f, ',');
        std::getline(ls, rel, ',');
        cells[{subunit, std::stoi(w), std::stoi(f)}] = std::stod(rel);
    }
    return cells;
}

void write_sweep_summary_json(const SweepResult& result, const std::string& path) {
    json bests = json::object();
    for (const auto& [name, best] : result.bests) {
        if (best.satisfiable)
            bests[name] = {{"word_size", best.word_size},
                           {"frac_bits", best.frac_bits},
                           {"satisfiable", true}};
        else
            bests[name] = {{"satisfiable", false}};
    }
    const json j = {
        {"baseline_accuracy", result.baseline_accuracy},
        {"threshold", result.threshold},
        {"plan_hash", result.plan_hash},
        {"subset_seed", result.subset_seed},
        {"subset_indices", result.subset_indices},
        {"bests", bests},
        {"bottleneck", result.bottleneck},
        {"bottleneck_unsatisfiable", result.bottleneck_unsatisfiable},
    };
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace fixquant
