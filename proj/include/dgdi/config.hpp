#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgdi/objective.hpp"

namespace dgdi {

// Fully resolved run configuration (CLI flag > config-file key > default).
struct RunConfig {
    std::string locations_path;
    std::string diffusions_path;
    std::string checkpoint_path;
    std::string out_dir;
    std::string dataset_name = "dataset";

    Hyperparams hp;
    double threshold_km = 3.0;
    double train_frac = 0.7, val_frac = 0.1, test_frac = 0.2;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<int> bucket_edges{7, 14};  // frequency groups <7, 7-13, >13
    bool every_prefix = true;              // false: score only the final prefix
    int workers = 1;
};

}  // namespace dgdi
