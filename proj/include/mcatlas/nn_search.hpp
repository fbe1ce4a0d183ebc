#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "mcatlas/errors.hpp"
#include "mcatlas/types.hpp"

namespace mcatlas {

struct Nearest {
    std::size_t index = 0;
    double sq_dist = std::numeric_limits<double>::infinity();
};

namespace detail {

// (distance, index) lexicographic order makes ties resolve to the lowest index
inline bool closer(double d, std::size_t i, const Nearest& best)
{
    return d < best.sq_dist || (d == best.sq_dist && i < best.index);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PointIndex
// ---------------------------------------------------------------------------
//
// Exact nearest-neighbour queries over a fixed point set. Sets below
// kKdTreeThreshold points are scanned linearly; larger sets get a kd-tree.
// Both paths return the same answer, including ties.

class PointIndex {
public:
    static constexpr std::size_t kKdTreeThreshold = 4096;
    static constexpr std::size_t kLeafSize = 16;

    explicit PointIndex(const PointCloud& pts, bool force_tree = false) : pts_(pts)
    {
        if (pts_.cols() == 0) {
            throw EmptyInput("PointIndex: empty point set");
        }
        if (force_tree || static_cast<std::size_t>(pts_.cols()) >= kKdTreeThreshold) {
            build();
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(pts_.cols()); }
    [[nodiscard]] const PointCloud& points() const noexcept { return pts_; }
    [[nodiscard]] bool uses_tree() const noexcept { return !nodes_.empty(); }

    [[nodiscard]] Nearest nearest(const Vec3& q) const
    {
        return uses_tree() ? tree_query(q) : brute_force(pts_, q);
    }

    static Nearest brute_force(const PointCloud& pts, const Vec3& q)
    {
        Nearest best;
        for (Eigen::Index i = 0; i < pts.cols(); ++i) {
            const double d = (pts.col(i) - q).squaredNorm();
            if (detail::closer(d, static_cast<std::size_t>(i), best)) {
                best = {static_cast<std::size_t>(i), d};
            }
        }
        return best;
    }

private:
    struct Node {
        Eigen::AlignedBox3d box;
        std::size_t begin = 0;  // range in order_
        std::size_t end = 0;
        std::int64_t left = -1;
        std::int64_t right = -1;
    };

    void build()
    {
        order_.resize(size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        nodes_.reserve(2 * size() / kLeafSize + 1);
        build_node(0, size());
    }

    std::int64_t build_node(std::size_t begin, std::size_t end)
    {
        Node n;
        n.begin = begin;
        n.end = end;
        for (auto k = begin; k < end; ++k) {
            n.box.extend(pts_.col(static_cast<Eigen::Index>(order_[k])));
        }
        const auto id = static_cast<std::int64_t>(nodes_.size());
        nodes_.push_back(n);
        if (end - begin > kLeafSize) {
            Eigen::Index axis = 0;
            n.box.sizes().maxCoeff(&axis);
            const auto mid = begin + (end - begin) / 2;
            std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                             order_.begin() + static_cast<std::ptrdiff_t>(mid),
                             order_.begin() + static_cast<std::ptrdiff_t>(end),
                             [&](std::size_t a, std::size_t b) {
                                 const double va = pts_(axis, static_cast<Eigen::Index>(a));
                                 const double vb = pts_(axis, static_cast<Eigen::Index>(b));
                                 return va < vb || (va == vb && a < b);
                             });
            const auto l = build_node(begin, mid);
            const auto r = build_node(mid, end);
            nodes_[static_cast<std::size_t>(id)].left = l;
            nodes_[static_cast<std::size_t>(id)].right = r;
        }
        return id;
    }

    [[nodiscard]] Nearest tree_query(const Vec3& q) const
    {
        Nearest best;
        search(0, q, best);
        return best;
    }

    void search(std::int64_t id, const Vec3& q, Nearest& best) const
    {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        // a box at exactly the best distance may still hold a lower-index tie
        if (n.box.squaredExteriorDistance(q) > best.sq_dist) {
            return;
        }
        if (n.left < 0) {
            for (auto k = n.begin; k < n.end; ++k) {
                const auto i = order_[k];
                const double d = (pts_.col(static_cast<Eigen::Index>(i)) - q).squaredNorm();
                if (detail::closer(d, i, best)) {
                    best = {i, d};
                }
            }
            return;
        }
        const auto& l = nodes_[static_cast<std::size_t>(n.left)];
        const auto& r = nodes_[static_cast<std::size_t>(n.right)];
        if (l.box.squaredExteriorDistance(q) <= r.box.squaredExteriorDistance(q)) {
            search(n.left, q, best);
            search(n.right, q, best);
        } else {
            search(n.right, q, best);
            search(n.left, q, best);
        }
    }

    PointCloud pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

/// Nearest neighbour in `target` of every column of `queries`.
inline std::vector<Nearest> nearest_all(const PointCloud& queries, const PointIndex& target)
{
    std::vector<Nearest> out(static_cast<std::size_t>(queries.cols()));
    for (Eigen::Index i = 0; i < queries.cols(); ++i) {
        out[static_cast<std::size_t>(i)] = target.nearest(queries.col(i));
    }
    return out;
}

inline std::vector<Nearest> nearest_all(const PointCloud& queries, const PointCloud& target)
{
    return nearest_all(queries, PointIndex(target));
}

}  // namespace mcatlas
