#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dgdi/config.hpp"
#include "dgdi/dataio.hpp"
#include "dgdi/model.hpp"
#include "dgdi/objective.hpp"
#include "dgdi/trainer.hpp"

namespace dgdi {

struct RankedPrediction {
    int diffusion = 0;    // index within the evaluated corpus
    int prefix_len = 0;
    int target = -1;
    int rank = 0;         // 1-based among eligible candidates; 0 when skipped
    int n_candidates = 0;
    bool skipped = false; // target already visited inside the prefix
};

// All unvisited nodes sorted by <h, u_v> descending, ties by ascending index.
std::vector<int> rank_candidates(const Tensor& h, const Tensor& table,
                                 const std::vector<bool>& visited);

// Fraction of scored instances with rank <= k. Skipped instances never enter
// the denominator.
double recall_at_k(std::span<const RankedPrediction> ranks, int k);

// Truncated reciprocal rank of the single target, averaged.
double map_at_k(std::span<const RankedPrediction> ranks, int k);

// Frequency buckets over ascending edges: bucket(f) = #edges <= f, so the
// default edges {7, 14} realize the groups <7, 7-13, >13 for integer counts.
// Contributions use the full scored set as denominator and sum to the overall
// metric.
struct BucketReport {
    std::vector<int> edges;
    std::vector<std::size_t> counts;      // scored instances per bucket
    std::vector<double> recall_contrib;   // per bucket at this k
    std::vector<double> map_contrib;
    int k = 10;
};

BucketReport bucket_report(std::span<const RankedPrediction> ranks,
                           const std::vector<long long>& train_freq, std::span<const int> edges,
                           int k);

// First-order Markov baseline: transition counts between consecutive
// training visits, additive 1e-9 smoothing, popularity tie-break.
struct FmcModel {
    int n_nodes = 0;
    std::vector<std::map<int, long long>> transitions;
    std::vector<long long> global_freq;
};

FmcModel fmc_train(const std::vector<Diffusion>& train, int n_nodes);

std::vector<int> fmc_rank(const FmcModel& model, std::span<const int> prefix,
                          const std::vector<bool>& visited);

struct EvalOptions {
    bool every_prefix = true;
    int workers = 1;
};

// Score every prefix of every diffusion (or just the final one) against the
// trained model; deterministic regardless of the worker count.
std::vector<RankedPrediction> rank_with_model(const GeometricGraph& graph,
                                              const std::vector<Diffusion>& eval_set,
                                              const ModelParams& params, Mode mode,
                                              const EvalOptions& options);

std::vector<RankedPrediction> rank_with_fmc(const FmcModel& model,
                                            const std::vector<Diffusion>& eval_set,
                                            const EvalOptions& options);

struct MetricsReport {
    std::string dataset;
    std::string mode;
    std::vector<std::uint64_t> seeds;
    std::vector<int> k_list;
    std::vector<double> recall_mean, recall_std;  // parallel to k_list, mean +- sample std
    std::vector<double> map_mean, map_std;
    std::vector<std::vector<double>> recall_per_seed, map_per_seed;  // [k][seed]
    std::vector<int> bucket_edges;
    std::vector<std::size_t> bucket_counts;
    std::vector<std::vector<double>> bucket_recall_mean;  // [k][bucket]
    std::vector<std::vector<double>> bucket_map_mean;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
};

std::string metrics_to_json(const MetricsReport& report);
void write_metrics_files(const std::filesystem::path& json_path,
                         const std::filesystem::path& tsv_path, const MetricsReport& report);

// Graph + temporal split + training-set node frequencies for a corpus.
struct PreparedData {
    GeometricGraph graph;
    CorpusSplit split;
    std::vector<long long> train_freq;
};

PreparedData prepare_data(const std::vector<GeoLocation>& locations,
                          std::vector<Diffusion> diffusions, const RunConfig& cfg);

// Aggregate test metrics of per-seed trained models for one ablation mode;
// identical seed lists across modes.
MetricsReport run_ablation(Mode mode, const std::vector<GeoLocation>& locations,
                           const std::vector<Diffusion>& diffusions, const RunConfig& cfg);

// Same protocol for the FMC baseline (deterministic; seeds only label runs).
MetricsReport run_fmc_baseline(const std::vector<GeoLocation>& locations,
                               const std::vector<Diffusion>& diffusions, const RunConfig& cfg);

// Metrics of one trained model (or FMC) on the prepared test split.
MetricsReport evaluate_single(const PreparedData& data, const ModelParams& params, Mode mode,
                              const RunConfig& cfg, std::uint64_t seed);

}  // namespace dgdi
