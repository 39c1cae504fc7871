#include "sesim/graph.hpp"

#include <algorithm>
#include <cmath>

namespace sesim {

BoolMatrix::BoolMatrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ArgumentError("BoolMatrix: negative dimension");
    rows_data_.resize(rows);
}

void BoolMatrix::set(int r, int c) {
    if (r < 0 || r >= rows_ || c < 0 || c >= cols_)
        throw ArgumentError("BoolMatrix::set: index out of range");
    auto& row = rows_data_[r];
    auto it = std::lower_bound(row.begin(), row.end(), c);
    if (it == row.end() || *it != c) row.insert(it, c);
}

bool BoolMatrix::at(int r, int c) const {
    if (r < 0 || r >= rows_ || c < 0 || c >= cols_)
        throw ArgumentError("BoolMatrix::at: index out of range");
    const auto& row = rows_data_[r];
    return std::binary_search(row.begin(), row.end(), c);
}

int64_t BoolMatrix::nnz() const {
    int64_t n = 0;
    for (const auto& row : rows_data_) n += static_cast<int64_t>(row.size());
    return n;
}

bool BoolMatrix::is_symmetric() const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
        for (int32_t j : rows_data_[i])
            if (!at(j, i)) return false;
    return true;
}

void BoolMatrix::clear_diagonal() {
    const int n = std::min(rows_, cols_);
    for (int i = 0; i < n; ++i) {
        auto& row = rows_data_[i];
        auto it = std::lower_bound(row.begin(), row.end(), i);
        if (it != row.end() && *it == i) row.erase(it);
    }
}

BoolMatrix bool_matmul(const BoolMatrix& a, const BoolMatrix& b) {
    if (a.cols() != b.rows())
        throw ArgumentError("bool_matmul: inner dimensions differ");
    BoolMatrix out(a.rows(), b.cols());
    std::vector<char> mark(static_cast<size_t>(b.cols()), 0);
    std::vector<int32_t> hits;
    for (int i = 0; i < a.rows(); ++i) {
        hits.clear();
        for (int32_t k : a.row(i)) {
            for (int32_t j : b.row(k)) {
                if (!mark[j]) {
                    mark[j] = 1;
                    hits.push_back(j);
                }
            }
        }
        std::sort(hits.begin(), hits.end());
        for (int32_t j : hits) {
            out.set(i, j);
            mark[j] = 0;
        }
    }
    return out;
}

BoolMatrix bool_transpose(const BoolMatrix& a) {
    BoolMatrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int32_t j : a.row(i)) out.set(j, i);
    return out;
}

BoolMatrix bool_or(const BoolMatrix& a, const BoolMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ArgumentError("bool_or: shape mismatch");
    BoolMatrix out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        const auto& ra = a.row(i);
        const auto& rb = b.row(i);
        std::vector<int32_t> merged;
        merged.reserve(ra.size() + rb.size());
        std::merge(ra.begin(), ra.end(), rb.begin(), rb.end(),
                   std::back_inserter(merged));
        merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
        for (int32_t j : merged) out.set(i, j);
    }
    return out;
}

int HetGraph::num_target_nodes() const {
    auto it = node_counts.find(target_type);
    return it == node_counts.end() ? 0 : it->second;
}

int HetGraph::num_classes() const {
    if (!labels) return 0;
    int c = 0;
    for (int y : *labels) c = std::max(c, y + 1);
    return c;
}

void validate_graph(const HetGraph& g) {
    if (g.node_counts.find(g.target_type) == g.node_counts.end())
        throw DataError("graph: target node type " +
                        std::to_string(g.target_type) + " is not declared");
    for (const auto& [type, count] : g.node_counts)
        if (count < 0)
            throw DataError("graph: node type " + std::to_string(type) +
                            " has negative count");

    std::vector<int> edge_types;
    for (const auto& rel : g.relations) {
        auto src = g.node_counts.find(rel.src_type);
        auto dst = g.node_counts.find(rel.dst_type);
        if (src == g.node_counts.end() || dst == g.node_counts.end())
            throw DataError("graph: relation " + std::to_string(rel.edge_type) +
                            " references an undeclared node type");
        if (rel.adj.rows() != src->second || rel.adj.cols() != dst->second)
            throw DataError("graph: relation " + std::to_string(rel.edge_type) +
                            " biadjacency is " + std::to_string(rel.adj.rows()) +
                            "x" + std::to_string(rel.adj.cols()) +
                            ", expected " + std::to_string(src->second) + "x" +
                            std::to_string(dst->second));
        edge_types.push_back(rel.edge_type);
    }
    std::sort(edge_types.begin(), edge_types.end());
    edge_types.erase(std::unique(edge_types.begin(), edge_types.end()),
                     edge_types.end());

    // |node types| + |edge types| > 2: the heterogeneity condition.
    if (static_cast<int>(g.node_counts.size() + edge_types.size()) <= 2)
        throw DataError("graph: needs more than two node plus edge types");

    const int n = g.num_target_nodes();
    if (g.features.rows() != n)
        throw DataError("graph: feature matrix has " +
                        std::to_string(g.features.rows()) + " rows, expected " +
                        std::to_string(n));
    if (g.labels) {
        if (static_cast<int>(g.labels->size()) != n)
            throw DataError("graph: label vector has " +
                            std::to_string(g.labels->size()) +
                            " entries, expected " + std::to_string(n));
        for (int y : *g.labels)
            if (y < 0) throw DataError("graph: negative class label");
    }
}

namespace {

struct HopView {
    const Relation* rel;
    bool reverse;
    int from_type() const { return reverse ? rel->dst_type : rel->src_type; }
    int to_type() const { return reverse ? rel->src_type : rel->dst_type; }
};

std::vector<HopView> resolve_hops(const HetGraph& g, const MetapathSpec& spec) {
    if (spec.hops.empty())
        throw ArgumentError("metapath " + std::to_string(spec.id) +
                            ": has no hops");
    std::vector<HopView> views;
    for (size_t h = 0; h < spec.hops.size(); ++h) {
        const Relation* found = nullptr;
        for (const auto& rel : g.relations)
            if (rel.edge_type == spec.hops[h].edge_type) {
                found = &rel;
                break;
            }
        if (!found)
            throw ArgumentError("metapath " + std::to_string(spec.id) + " hop " +
                                std::to_string(h) + ": unknown edge type " +
                                std::to_string(spec.hops[h].edge_type));
        views.push_back({found, spec.hops[h].reverse});
    }
    if (views.front().from_type() != g.target_type)
        throw ArgumentError("metapath " + std::to_string(spec.id) +
                            " hop 0: starts at type " +
                            std::to_string(views.front().from_type()) +
                            ", not the target type");
    for (size_t h = 0; h + 1 < views.size(); ++h)
        if (views[h].to_type() != views[h + 1].from_type())
            throw ArgumentError("metapath " + std::to_string(spec.id) + " hop " +
                                std::to_string(h + 1) + ": expects source type " +
                                std::to_string(views[h].to_type()) + ", got " +
                                std::to_string(views[h + 1].from_type()));
    if (views.back().to_type() != g.target_type)
        throw ArgumentError("metapath " + std::to_string(spec.id) + " hop " +
                            std::to_string(views.size() - 1) +
                            ": ends at type " +
                            std::to_string(views.back().to_type()) +
                            ", not the target type");
    return views;
}

}  // namespace

void check_metapath(const HetGraph& g, const MetapathSpec& spec) {
    resolve_hops(g, spec);
}

CollapsedAdj compose_metapath(const HetGraph& g, const MetapathSpec& spec) {
    auto views = resolve_hops(g, spec);
    BoolMatrix acc =
        views[0].reverse ? bool_transpose(views[0].rel->adj) : views[0].rel->adj;
    for (size_t h = 1; h < views.size(); ++h) {
        const BoolMatrix hop = views[h].reverse
                                   ? bool_transpose(views[h].rel->adj)
                                   : views[h].rel->adj;
        acc = bool_matmul(acc, hop);
    }
    acc.clear_diagonal();
    return CollapsedAdj{spec.id, std::move(acc)};
}

BoolMatrix khop_reach(const CollapsedAdj& a, int k) {
    if (k < 1) throw ArgumentError("khop_reach: k must be >= 1");
    BoolMatrix acc = a.matrix;
    for (int i = 1; i < k; ++i) acc = bool_matmul(acc, a.matrix);
    return acc;
}

NormAdj normalize_adj(const BoolMatrix& a) {
    if (a.rows() != a.cols())
        throw ArgumentError("normalize_adj: matrix is not square");
    const int n = a.rows();
    std::vector<double> deg(n);
    for (int i = 0; i < n; ++i) {
        // Row sum of A + I; the added self-loop keeps isolated nodes at
        // degree 1, so no division by zero below.
        deg[i] = static_cast<double>(a.row(i).size()) + 1.0;
    }
    Matrix out(n, n);
    for (int i = 0; i < n; ++i) {
        for (int32_t j : a.row(i))
            out(i, j) = 1.0 / std::sqrt(deg[i] * deg[j]);
        out(i, i) = (a.at(i, i) ? 2.0 : 1.0) / deg[i];
    }
    return NormAdj{std::move(out)};
}

BoolMatrix union_adjacency(const std::vector<CollapsedAdj>& adjs) {
    if (adjs.empty()) throw ArgumentError("union_adjacency: empty list");
    BoolMatrix acc = adjs[0].matrix;
    for (size_t i = 1; i < adjs.size(); ++i) acc = bool_or(acc, adjs[i].matrix);
    return acc;
}

}  // namespace sesim
