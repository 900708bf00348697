#include "tinyema/stabilize.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "tinyema/errors.hpp"
#include "tinyema/log.hpp"
#include "tinyema/stats.hpp"

namespace tinyema {
namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }

    // The smaller index becomes the root so roots are group minima.
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (b < a) std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

std::string key_string(const GroupKey& k) {
    return "(" + std::to_string(k.kx) + "," + std::to_string(k.ky) + ")";
}

// Average of group means per key, in key order.
std::map<GroupKey, Vec> observations_by_key(std::span<const EmbeddingGroup> groups,
                                            std::span<const Embedding> embeddings, double delta) {
    std::map<GroupKey, Vec> sums;
    std::map<GroupKey, int> counts;
    for (const auto& g : groups) {
        const GroupKey key = group_key(g, embeddings, delta);
        const Vec m = group_mean(g, embeddings);
        auto [it, inserted] = sums.try_emplace(key, Vec(m.size(), 0.0));
        for (std::size_t d = 0; d < m.size(); ++d) it->second[d] += m[d];
        ++counts[key];
    }
    for (auto& [key, v] : sums) {
        const double n = counts[key];
        if (n > 1) {
            for (double& x : v) x /= n;
        }
    }
    return sums;
}

void update_keyed(std::map<GroupKey, Vec>& table, std::span<const EmbeddingGroup> groups,
                  std::span<const Embedding> embeddings, const StabilizerState& state) {
    for (auto& [key, obs] : observations_by_key(groups, embeddings, state.delta)) {
        auto it = table.find(key);
        if (it == table.end()) {
            table.emplace(key, std::move(obs));
        } else {
            ema_update_inplace(it->second, obs, state.rho);
        }
    }
}

}  // namespace

StabilizerState::StabilizerState(std::size_t dim_, double rho_, double lambda_, double delta_)
    : dim(dim_), rho(rho_), lambda(lambda_), delta(delta_) {
    if (dim == 0) throw ArgumentError("embedding dimension must be positive");
    check_rho(rho);
    if (!(lambda >= 0.0)) throw ArgumentError("lambda must be non-negative");
    if (!(delta > 0.0)) throw ArgumentError("delta must be positive");
}

std::vector<EmbeddingGroup> group_embeddings(std::span<const Embedding> embeddings, double delta) {
    if (!(delta > 0.0)) {
        throw ArgumentError("proximity threshold must be positive");
    }
    const std::size_t n = embeddings.size();
    const double delta2 = delta * delta;
    DisjointSets sets(n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const double dx = embeddings[a].center.x - embeddings[b].center.x;
            const double dy = embeddings[a].center.y - embeddings[b].center.y;
            if (dx * dx + dy * dy < delta2) {
                sets.unite(a, b);
            }
        }
    }
    // Roots are group minima, so scanning in index order numbers groups by
    // their smallest member.
    std::vector<EmbeddingGroup> groups;
    std::vector<int> group_of_root(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = sets.find(i);
        if (group_of_root[r] < 0) {
            group_of_root[r] = static_cast<int>(groups.size());
            groups.push_back({group_of_root[r], {}});
        }
        groups[static_cast<std::size_t>(group_of_root[r])].members.push_back(i);
    }
    return groups;
}

GroupKey group_key(const EmbeddingGroup& group, std::span<const Embedding> embeddings, double delta) {
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t i : group.members) {
        cx += embeddings[i].center.x;
        cy += embeddings[i].center.y;
    }
    const double n = static_cast<double>(group.members.size());
    return {static_cast<long>(std::floor(cx / n / delta)), static_cast<long>(std::floor(cy / n / delta))};
}

Vec group_mean(const EmbeddingGroup& group, std::span<const Embedding> embeddings) {
    if (group.members.empty()) {
        throw ArgumentError("group has no members");
    }
    Vec mean(embeddings[group.members.front()].vector.size(), 0.0);
    for (std::size_t i : group.members) {
        const Vec& e = embeddings[i].vector;
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += e[d];
    }
    const double n = static_cast<double>(group.members.size());
    for (double& v : mean) v /= n;
    return mean;
}

void update_cluster_means(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                          StabilizerState& state) {
    update_keyed(state.cluster_means, groups, embeddings, state);
}

void update_stack(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                  StabilizerState& state) {
    update_keyed(state.stacks, groups, embeddings, state);
}

void update_global_mean(std::span<const Embedding> embeddings, StabilizerState& state) {
    if (embeddings.empty()) {
        log::warn("update_global_mean called with no embeddings; state unchanged");
        return;
    }
    Vec mean(embeddings.front().vector.size(), 0.0);
    for (const auto& e : embeddings) {
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += e.vector[d];
    }
    for (double& v : mean) v /= static_cast<double>(embeddings.size());
    if (state.global_mean.empty()) {
        state.global_mean = std::move(mean);
    } else {
        ema_update_inplace(state.global_mean, mean, state.rho);
    }
}

LossWithGrad cluster_loss(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                          const StabilizerState& state) {
    LossWithGrad out;
    out.grad.resize(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        out.grad[i].assign(embeddings[i].vector.size(), 0.0);
    }
    if (groups.empty()) return out;
    if (state.global_mean.empty()) {
        throw StateError("global embedding mean is not initialized");
    }
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    for (const auto& g : groups) {
        const GroupKey key = group_key(g, embeddings, state.delta);
        const auto it = state.cluster_means.find(key);
        if (it == state.cluster_means.end()) {
            throw StateError("no cluster mean for group key " + key_string(key));
        }
        const Vec& mu = it->second;
        const double inv_size = 1.0 / static_cast<double>(g.members.size());
        double spread = 0.0;
        for (std::size_t i : g.members) {
            const Vec& e = embeddings[i].vector;
            spread += squared_distance(e, mu);
            Vec& gi = out.grad[i];
            for (std::size_t d = 0; d < e.size(); ++d) {
                gi[d] = 2.0 * inv_groups * inv_size * (e[d] - mu[d]);
            }
        }
        out.value += inv_groups * (inv_size * spread + state.lambda * squared_distance(mu, state.global_mean));
    }
    return out;
}

LossWithGrad stack_loss(const EmbeddingGroup& group, std::span<const Embedding> embeddings,
                        const StabilizerState& state) {
    return stack_loss(std::span<const EmbeddingGroup>(&group, 1), embeddings, state);
}

LossWithGrad stack_loss(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                        const StabilizerState& state) {
    LossWithGrad out;
    out.grad.resize(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        out.grad[i].assign(embeddings[i].vector.size(), 0.0);
    }
    if (groups.empty()) return out;
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    for (const auto& g : groups) {
        const GroupKey key = group_key(g, embeddings, state.delta);
        const auto it = state.stacks.find(key);
        if (it == state.stacks.end()) {
            throw StateError("no stacked embedding for group key " + key_string(key));
        }
        const Vec& target = it->second;
        const double inv_size = 1.0 / static_cast<double>(g.members.size());
        double spread = 0.0;
        for (std::size_t i : g.members) {
            const Vec& e = embeddings[i].vector;
            spread += squared_distance(e, target);
            for (std::size_t d = 0; d < e.size(); ++d) {
                out.grad[i][d] += 2.0 * inv_groups * inv_size * (e[d] - target[d]);
            }
        }
        out.value += inv_groups * inv_size * spread;
    }
    return out;
}

}  // namespace tinyema
