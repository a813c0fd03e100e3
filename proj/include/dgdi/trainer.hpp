#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "dgdi/dataio.hpp"
#include "dgdi/objective.hpp"

namespace dgdi {

struct EpochStats {
    int epoch = 0;
    double total = 0.0;
    double dgi = 0.0;
    double infonce = 0.0;
    bool has_dgi = false;
    long long wall_ms = 0;
};

// Optional per-epoch validation hook (validation Recall@10 in the pipeline).
// Higher is better.
using ValMetricFn = std::function<double(const ModelParams&)>;

struct TrainResult {
    ModelParams params;
    std::vector<EpochStats> epochs;
    int best_epoch = -1;          // only set when early stopping is active
    double best_val_metric = 0.0;
};

// Mini-batch Adam training of the full objective. Instance order reshuffles
// every epoch from the "shuffle" stream; corruption reseeds per batch from
// the "corrupt" stream keyed by a global batch counter. With patience > 0
// and a validation hook, keeps the parameters of the best validation epoch
// and stops after `patience` epochs without improvement.
TrainResult train_model(const GeometricGraph& graph, const std::vector<Diffusion>& train,
                        const Hyperparams& hp, Mode mode,
                        const std::filesystem::path& log_path = {},
                        const ValMetricFn& val_metric = {});

}  // namespace dgdi
