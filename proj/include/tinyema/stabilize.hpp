#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "tinyema/vector_ops.hpp"

namespace tinyema {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct Embedding {
    Vec vector;
    Point2 center;
};

struct EmbeddingGroup {
    int id = 0;
    std::vector<std::size_t> members;  // ascending indices into the embedding list
};

/// Spatial cell of a group's centroid, side length delta. This is how group
/// means are associated across iterations.
struct GroupKey {
    long kx = 0;
    long ky = 0;
    auto operator<=>(const GroupKey&) const = default;
};

struct StabilizerState {
    std::size_t dim = 16;
    double rho = 0.05;
    double lambda = 1.0;
    double delta = 30.0;
    std::map<GroupKey, Vec> cluster_means;
    std::map<GroupKey, Vec> stacks;
    Vec global_mean;  // empty until first update

    StabilizerState() = default;
    /// Throws ArgumentError for dim == 0, rho outside (0,1], negative lambda or
    /// non-positive delta.
    StabilizerState(std::size_t dim, double rho, double lambda, double delta);

    bool operator==(const StabilizerState&) const = default;
};

/// Single-link connected components of the relation |c_a - c_b| < delta.
/// Groups are ordered by their smallest member index and numbered from 0.
std::vector<EmbeddingGroup> group_embeddings(std::span<const Embedding> embeddings, double delta);

GroupKey group_key(const EmbeddingGroup& group, std::span<const Embedding> embeddings, double delta);

/// Mean vector of the group's members.
Vec group_mean(const EmbeddingGroup& group, std::span<const Embedding> embeddings);

/// EMA of each group's key toward the group mean; unseen keys are seeded with
/// the mean. Groups sharing a key contribute the average of their means.
void update_cluster_means(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                          StabilizerState& state);

/// EMA toward the mean of all embeddings; seeded on first touch. An empty list
/// leaves the state unchanged and logs a warning.
void update_global_mean(std::span<const Embedding> embeddings, StabilizerState& state);

/// Same recurrence as update_cluster_means, applied to the stacked means.
void update_stack(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                  StabilizerState& state);

/// Clustering consistency loss. Cluster and global means are constants under
/// differentiation. Throws StateError when a group key or the global mean is
/// missing.
LossWithGrad cluster_loss(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                          const StabilizerState& state);

/// Mean squared distance of one group's members to its stacked mean.
LossWithGrad stack_loss(const EmbeddingGroup& group, std::span<const Embedding> embeddings,
                        const StabilizerState& state);

/// Unweighted mean of stack_loss over groups.
LossWithGrad stack_loss(std::span<const EmbeddingGroup> groups, std::span<const Embedding> embeddings,
                        const StabilizerState& state);

}  // namespace tinyema
