#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "peav/embedding.hpp"
#include "peav/objective.hpp"

namespace peav {

/// Counts collective calls and the floats they move. Monotone within a
/// step; callers reset between steps.
struct CollectiveLedger {
    std::size_t gather_calls = 0;
    std::size_t payload_floats = 0;

    void reset() {
        gather_calls = 0;
        payload_floats = 0;
    }
};

/// One data-parallel batch split over W shards. Every shard carries the
/// same stream set in the same C_h; local batch sizes may differ.
struct ShardedBatch {
    std::vector<EmbeddingBundle> shards;

    std::size_t world_size() const { return shards.size(); }
    std::size_t global_batch() const;

    /// Splits a bundle into `world_size` shards by contiguous row blocks.
    static ShardedBatch split(const EmbeddingBundle& global, std::size_t world_size);
};

/// Global loss of a sharded step plus the gradients scattered back to each
/// shard's own rows.
struct GatherResult {
    double total = 0.0;
    std::vector<double> per_pair;
    std::vector<double> d_alpha, d_beta;
    std::vector<StreamGrads> shard_grads;  // one map per shard
};

/// Two all-gathers per loss pair (2P collectives total): gather the left
/// streams, gather the right streams, evaluate on the global batch.
GatherResult gather_naive(const ShardedBatch& batch, const PairRegistry& registry,
                          CollectiveLedger& ledger);

/// Stacks all pairs' left arguments along the batch dimension (and
/// likewise the right arguments), issues one all-gather per side — two
/// collectives total regardless of P — and splits by the recorded batch
/// sizes before computing losses. Numerically identical to gather_naive.
GatherResult gather_packed(const ShardedBatch& batch, const PairRegistry& registry,
                           CollectiveLedger& ledger);

/// Analytic cost model of one step under both strategies. Wall-clock
/// speedups are hardware specific; only the structural call counts are
/// guaranteed.
struct GatherBenchReport {
    std::size_t world_size = 0, pairs = 0, batch = 0, dim = 0;
    std::size_t naive_calls = 0, packed_calls = 0;
    std::size_t naive_payload_floats = 0, packed_payload_floats = 0;
    double naive_time_s = 0.0, packed_time_s = 0.0;
    double modeled_speedup = 0.0;

    std::string to_json() const;
};

GatherBenchReport bench_gather(std::size_t world_size, std::size_t pairs, std::size_t batch,
                               std::size_t dim, double latency_per_call_s,
                               double floats_per_second);

}  // namespace peav
