// Synthetic traces through features, training and held-out metrics, using the library directly.

#include <cstdio>

#include "driftscope/evaluation.hpp"
#include "driftscope/synth.hpp"

int main() {
    using namespace driftscope;
    const TraceMeta meta{"synthetic", 8, 32, 1000, Precision::f32, "sample", true, true};
    const auto records = synthesize_traces(42, 100, 100, 1.0, meta);

    PipelineConfig cfg;
    cfg.features.shift.window = 2;
    const auto set = extract_dataset(meta, records, cfg.features);
    std::printf("%zu records, %zu feature columns\n", set.size(), set.layout.size());

    const auto result = run_holdout(set, cfg);
    std::printf("best epoch %zu of %zu\n", result.history.best_epoch, result.history.epochs.size());
    std::printf("%s\n", to_json(result.report).dump(2).c_str());
}
