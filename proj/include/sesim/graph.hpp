#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sesim/matrix.hpp"

namespace sesim {

// Sparse boolean matrix stored as one sorted, deduplicated list of column
// indices per row.
class BoolMatrix {
public:
    BoolMatrix() = default;
    BoolMatrix(int rows, int cols);

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    void set(int r, int c);  // sorted insert, idempotent
    bool at(int r, int c) const;
    const std::vector<int32_t>& row(int r) const { return rows_data_[r]; }

    int64_t nnz() const;
    bool is_symmetric() const;
    void clear_diagonal();

    friend bool operator==(const BoolMatrix& a, const BoolMatrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
               a.rows_data_ == b.rows_data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<std::vector<int32_t>> rows_data_;
};

// Boolean product: out(i,j) = 1 iff some k has a(i,k) and b(k,j).
BoolMatrix bool_matmul(const BoolMatrix& a, const BoolMatrix& b);
BoolMatrix bool_transpose(const BoolMatrix& a);
BoolMatrix bool_or(const BoolMatrix& a, const BoolMatrix& b);

// One typed relation: boolean biadjacency from src-type to dst-type nodes.
struct Relation {
    int edge_type = 0;
    int src_type = 0;
    int dst_type = 0;
    BoolMatrix adj;
};

struct HetGraph {
    std::map<int, int> node_counts;  // node-type id -> count
    std::vector<Relation> relations;
    int target_type = 0;
    Matrix features;                          // one row per target-type node
    std::optional<std::vector<int>> labels;   // class per target-type node

    int num_target_nodes() const;
    int num_classes() const;  // 0 when unlabeled
};

// Checks node counts vs biadjacency shapes, the heterogeneity condition,
// feature row count, and label ranges. Throws DataError.
void validate_graph(const HetGraph& g);

struct MetapathHop {
    int edge_type = 0;
    bool reverse = false;  // reverse = traverse dst-type -> src-type
};

struct MetapathSpec {
    int id = 0;
    std::vector<MetapathHop> hops;
};

// Homogeneous adjacency over target-type nodes induced by one metapath.
// Boolean, zero diagonal.
struct CollapsedAdj {
    int metapath_id = 0;
    BoolMatrix matrix;
};

// Symmetrically normalized adjacency with self-loops, densified:
// entry (i,j) = (A+I)_ij / sqrt(dh_i * dh_j) with dh the row sums of A+I.
struct NormAdj {
    Matrix matrix;
};

// Throws ArgumentError naming the first hop whose endpoint types do not
// chain, or whose edge type is unknown, or that does not start/end at the
// target type.
void check_metapath(const HetGraph& g, const MetapathSpec& spec);

CollapsedAdj compose_metapath(const HetGraph& g, const MetapathSpec& spec);

// Boolean k-th power: out(i,j) = 1 iff a walk of exactly k edges joins i
// and j. Closed walks count, so the diagonal may be set.
BoolMatrix khop_reach(const CollapsedAdj& a, int k);

NormAdj normalize_adj(const BoolMatrix& a);

// Elementwise OR over a non-empty list of equal-shaped collapsed
// adjacencies; the encoder aggregates over this graph.
BoolMatrix union_adjacency(const std::vector<CollapsedAdj>& adjs);

}  // namespace sesim
