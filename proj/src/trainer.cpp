#include "dgdi/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "dgdi/errors.hpp"
#include "dgdi/rng.hpp"

namespace dgdi {

TrainResult train_model(const GeometricGraph& graph, const std::vector<Diffusion>& train,
                        const Hyperparams& hp, Mode mode, const std::filesystem::path& log_path,
                        const ValMetricFn& val_metric) {
    hp.validate();
    if (train.empty()) throw ValidationError("train_model: empty training set");

    TrainResult result;
    result.params = init_params(graph.n_nodes, hp.dim, hp.n_layers, hp.seed);
    AdamState adam;

    std::vector<PrefixInstance> instances = make_prefix_instances(train);
    if (instances.empty()) throw ValidationError("train_model: no trainable prefixes");

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw ValidationError("cannot write training log: " + log_path.string());
    }

    const bool early_stopping = hp.patience > 0 && static_cast<bool>(val_metric);
    ModelParams best_params = result.params;
    double best_metric = -1.0;
    int best_epoch = -1;
    int stale_epochs = 0;
    std::uint64_t batch_counter = 0;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = stream(hp.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(instances);

        EpochStats stats;
        stats.epoch = epoch;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < instances.size(); start += hp.batch_size) {
            const std::size_t len = std::min<std::size_t>(hp.batch_size, instances.size() - start);
            std::span<const PrefixInstance> batch(instances.data() + start, len);
            Tape tape;
            BatchLoss bl = total_loss(tape, graph.norm_adj, train, batch, result.params, hp, mode,
                                      derive_seed(hp.seed, "corrupt", batch_counter));
            ++batch_counter;
            tape.backward(bl.node);
            adam_step(result.params, collect_gradients(tape, bl.params), adam, hp.lr);

            stats.total += bl.total * static_cast<double>(len);
            stats.infonce += bl.infonce * static_cast<double>(len);
            if (bl.has_dgi) {
                stats.dgi += bl.dgi * static_cast<double>(len);
                stats.has_dgi = true;
            }
            seen += len;
        }
        stats.total /= static_cast<double>(seen);
        stats.infonce /= static_cast<double>(seen);
        if (stats.has_dgi) stats.dgi /= static_cast<double>(seen);
        stats.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        result.epochs.push_back(stats);

        if (log) {
            char dgi_col[32];
            if (stats.has_dgi) std::snprintf(dgi_col, sizeof(dgi_col), "%.9g", stats.dgi);
            else std::snprintf(dgi_col, sizeof(dgi_col), "na");
            char line[192];
            std::snprintf(line, sizeof(line), "%d\t%.9g\t%s\t%.9g\t%lld\n", epoch, stats.total,
                          dgi_col, stats.infonce, stats.wall_ms);
            log << line;
        }

        if (early_stopping) {
            const double metric = val_metric(result.params);
            if (metric > best_metric) {
                best_metric = metric;
                best_epoch = epoch;
                best_params = result.params;
                stale_epochs = 0;
            } else if (++stale_epochs >= hp.patience) {
                break;
            }
        }
    }

    if (early_stopping && best_epoch >= 0) {
        result.params = std::move(best_params);
        result.best_epoch = best_epoch;
        result.best_val_metric = best_metric;
    }
    return result;
}

}  // namespace dgdi
