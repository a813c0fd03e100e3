#pragma once

#include <vector>

namespace dgdi {

// Compressed-row square sparse matrix. Rows keep ascending column order so
// every traversal is deterministic.
struct CsrMatrix {
    int n = 0;
    std::vector<int> row_ptr;  // size n+1
    std::vector<int> col;
    std::vector<double> val;

    double at(int i, int j) const {
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
            if (col[k] == j) return val[k];
        }
        return 0.0;
    }

    std::size_t nnz() const { return col.size(); }
};

}  // namespace dgdi
