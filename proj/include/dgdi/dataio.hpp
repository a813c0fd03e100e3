#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dgdi/geograph.hpp"

namespace dgdi {

// One anonymous case: the ordered locations it visited.
struct Diffusion {
    std::string case_id;
    std::vector<std::pair<int, std::int64_t>> visits;  // (node index, epoch seconds)

    std::int64_t start_time() const { return visits.front().second; }
    int length() const { return static_cast<int>(visits.size()); }
};

// Sub-diffusion ending at position prefix_len, paired with the next visit.
struct PrefixInstance {
    int diffusion = 0;   // index into the owning corpus
    int prefix_len = 0;  // k >= 1
    int target = 0;      // node index of visit k+1
};

struct CorpusSplit {
    std::vector<Diffusion> train, val, test;
};

struct LoadReport {
    int dropped_short_cases = 0;  // cases with fewer than 2 resolved visits
};

std::vector<GeoLocation> load_locations(const std::filesystem::path& path);

std::vector<Diffusion> load_diffusions(const std::filesystem::path& path,
                                       const std::map<std::string, int>& id_to_index,
                                       LoadReport* report = nullptr);

std::map<std::string, int> index_by_id(const std::vector<GeoLocation>& locations);

// Sort by first-visit time (ties by case_id), then cut at floor(0.7 M) /
// floor(0.1 M); the remainder is the test set.
CorpusSplit temporal_split(std::vector<Diffusion> diffusions,
                           double train_frac = 0.7, double val_frac = 0.1,
                           double test_frac = 0.2);

// Every diffusion of length L yields L-1 instances (k = 1 .. L-1).
std::vector<PrefixInstance> make_prefix_instances(const std::vector<Diffusion>& diffusions);

struct SynthConfig {
    int n_nodes = 100;
    int n_diffusions = 200;
    double lat_min = 22.0, lat_max = 22.5;
    double lon_min = 114.0, lon_max = 114.5;
    double threshold_km = 3.0;
    double zipf_exponent = 1.0;
    double locality_weight = 1.0;
    std::uint64_t seed = 1;
};

struct SynthResult {
    std::vector<GeoLocation> locations;
    std::vector<Diffusion> diffusions;
};

// Random geometric walks: nodes uniform in the box, popularity Zipf with the
// given exponent, next node drawn proportional to
// popularity(v) * exp(-locality_weight * dist(current, v)) over unvisited
// candidates. Lengths uniform in [2, 8], timestamps strictly increasing.
SynthResult synth_generate(const SynthConfig& cfg);

void write_locations(const std::filesystem::path& path, const std::vector<GeoLocation>& locations);
void write_diffusions(const std::filesystem::path& path, const std::vector<Diffusion>& diffusions,
                      const std::vector<GeoLocation>& locations);
void write_synth_manifest(const std::filesystem::path& path, const SynthConfig& cfg);

}  // namespace dgdi
