#pragma once

// Deterministic parallel reduction. Work is split into a fixed number of
// leaves; partial results are merged along a binary tree fixed by leaf index,
// always as merge(left, right). The result is therefore bit-identical for
// any worker count or completion order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gnsse {

/// Worker count from GNSSE_WORKERS, falling back to hardware concurrency.
inline unsigned default_workers()
{
    if (const char* env = std::getenv("GNSSE_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0)
            return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

struct TreeNode {
    std::size_t lo, hi;
    std::ptrdiff_t parent = -1;
    bool is_left = false;
    std::size_t left = 0, right = 0;
};

inline std::size_t build_tree(std::vector<TreeNode>& nodes, std::vector<std::size_t>& leaf_node, std::size_t lo,
                              std::size_t hi, std::ptrdiff_t parent, bool is_left)
{
    const std::size_t id = nodes.size();
    nodes.push_back(TreeNode{lo, hi, parent, is_left});
    if (hi - lo == 1) {
        leaf_node[lo] = id;
        return id;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t l = build_tree(nodes, leaf_node, lo, mid, static_cast<std::ptrdiff_t>(id), true);
    const std::size_t r = build_tree(nodes, leaf_node, mid, hi, static_cast<std::ptrdiff_t>(id), false);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
}

}  // namespace detail

/// Reduce leaves 0..n_leaves-1. `make(i)` builds the partial result of leaf
/// i, `merge(left, right)` folds right into left. Exceptions thrown by
/// `make` are rethrown on the calling thread.
template <class Acc, class Make, class Merge>
Acc tree_reduce(std::size_t n_leaves, unsigned workers, Make&& make, Merge&& merge)
{
    if (n_leaves == 0)
        throw std::invalid_argument("tree_reduce: no leaves");
    std::vector<detail::TreeNode> nodes;
    std::vector<std::size_t> leaf_node(n_leaves);
    detail::build_tree(nodes, leaf_node, 0, n_leaves, -1, false);

    std::vector<std::optional<Acc>> slot(nodes.size());
    std::optional<Acc> root;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};

    auto worker = [&]() {
        try {
            for (;;) {
                if (failed.load())
                    return;
                const std::size_t leaf = next.fetch_add(1);
                if (leaf >= n_leaves)
                    return;
                Acc acc = make(leaf);
                std::size_t node = leaf_node[leaf];
                for (;;) {
                    const auto parent = nodes[node].parent;
                    if (parent < 0) {
                        std::lock_guard lock(mu);
                        root.emplace(std::move(acc));
                        break;
                    }
                    const auto p = static_cast<std::size_t>(parent);
                    const std::size_t other_id = nodes[node].is_left ? nodes[p].right : nodes[p].left;
                    std::optional<Acc> other;
                    {
                        std::lock_guard lock(mu);
                        if (slot[other_id]) {
                            other = std::move(slot[other_id]);
                            slot[other_id].reset();
                        } else {
                            slot[node].emplace(std::move(acc));
                            break;
                        }
                    }
                    if (nodes[node].is_left) {
                        merge(acc, *other);
                    } else {
                        merge(*other, acc);
                        acc = std::move(*other);
                    }
                    node = p;
                }
            }
        } catch (...) {
            std::lock_guard lock(mu);
            if (!error)
                error = std::current_exception();
            failed.store(true);
        }
    };

    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::min<std::size_t>(n_leaves, 1024))));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    if (error)
        std::rethrow_exception(error);
    return std::move(*root);
}

}  // namespace gnsse
