#include "peav/collective.hpp"

#include <nlohmann/json.hpp>

#include "peav/numeric.hpp"

namespace peav {

namespace {

constexpr StreamTag kAllTags[] = {StreamTag::A,   StreamTag::V,    StreamTag::AV,
                                  StreamTag::AT,  StreamTag::VT,   StreamTag::AVT,
                                  StreamTag::A_VT, StreamTag::V_AT};

// Ordered concatenation over shard index; the in-process stand-in for an
// all_gather collective.
Tensor concat_rows(const std::vector<Tensor>& parts) {
    std::size_t rows = 0;
    const std::size_t cols = parts.empty() ? 0 : parts.front().shape()[1];
    for (const Tensor& p : parts) rows += p.shape()[0];
    Tensor out = Tensor::zeros({rows, cols});
    std::size_t at = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < p.shape()[0]; ++i, ++at) {
            for (std::size_t j = 0; j < cols; ++j) out.at2(at, j) = p.at2(i, j);
        }
    }
    return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
    const std::size_t cols = t.shape()[1];
    Tensor out = Tensor::zeros({count, cols});
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out.at2(i, j) = t.at2(begin + i, j);
    }
    return out;
}

void check_shards(const ShardedBatch& batch, const PairRegistry& registry) {
    if (batch.shards.empty()) throw config_error("sharded batch: no shards");
    for (std::size_t w = 0; w < batch.shards.size(); ++w) {
        for (const LossPairSpec& p : registry.pairs) {
            if (!batch.shards[w].has(p.left) || !batch.shards[w].has(p.right)) {
                throw config_error("shard " + std::to_string(w) + " is missing a stream of pair " +
                                   p.name());
            }
        }
    }
    const std::size_t ch = batch.shards.front().dim();
    for (const EmbeddingBundle& shard : batch.shards) {
        if (shard.dim() != ch) throw config_error("sharded batch: mismatched C_h across shards");
    }
}

// Scatters a global-row gradient back onto per-shard maps following the
// gather layout: shard w owns rows [offset_w, offset_w + b_w).
void scatter_grad(std::vector<StreamGrads>& shard_grads, const std::vector<std::size_t>& counts,
                  StreamTag tag, const Tensor& global_grad) {
    std::size_t at = 0;
    for (std::size_t w = 0; w < counts.size(); ++w) {
        accumulate_stream_grad(shard_grads[w], tag, slice_rows(global_grad, at, counts[w]));
        at += counts[w];
    }
}

}  // namespace

std::size_t ShardedBatch::global_batch() const {
    std::size_t b = 0;
    for (const EmbeddingBundle& s : shards) b += s.batch_size();
    return b;
}

ShardedBatch ShardedBatch::split(const EmbeddingBundle& global, std::size_t world_size) {
    if (world_size == 0) throw config_error("split: world size must be positive");
    const std::size_t b = global.batch_size();
    if (b < world_size) throw config_error("split: batch smaller than world size");
    ShardedBatch out;
    std::size_t at = 0;
    for (std::size_t w = 0; w < world_size; ++w) {
        const std::size_t count = b / world_size + (w < b % world_size ? 1 : 0);
        EmbeddingBundle shard;
        for (StreamTag tag : kAllTags) {
            if (global.has(tag)) shard.set(tag, slice_rows(global.get(tag), at, count));
        }
        out.shards.push_back(std::move(shard));
        at += count;
    }
    return out;
}

GatherResult gather_naive(const ShardedBatch& batch, const PairRegistry& registry,
                          CollectiveLedger& ledger) {
    registry.validate();
    check_shards(batch, registry);
    const std::size_t w = batch.world_size();
    std::vector<std::size_t> counts(w);
    for (std::size_t i = 0; i < w; ++i) counts[i] = batch.shards[i].batch_size();

    GatherResult out;
    out.shard_grads.resize(w);
    for (const LossPairSpec& p : registry.pairs) {
        std::vector<Tensor> left_parts, right_parts;
        for (const EmbeddingBundle& shard : batch.shards) {
            left_parts.push_back(shard.get(p.left));
            right_parts.push_back(shard.get(p.right));
        }
        Tensor left = concat_rows(left_parts);
        Tensor right = concat_rows(right_parts);
        ledger.gather_calls += 2;
        ledger.payload_floats += left.size() + right.size();

        PairLossResult r = sigmoid_pair_loss(left, right, p.alpha(), p.beta);
        out.per_pair.push_back(r.loss);
        out.total += p.weight * r.loss;
        out.d_alpha.push_back(p.weight * r.d_alpha);
        out.d_beta.push_back(p.weight * r.d_beta);
        if (p.weight != 0.0) {
            r.d_left *= p.weight;
            r.d_right *= p.weight;
            scatter_grad(out.shard_grads, counts, p.left, r.d_left);
            scatter_grad(out.shard_grads, counts, p.right, r.d_right);
        }
    }
    return out;
}

GatherResult gather_packed(const ShardedBatch& batch, const PairRegistry& registry,
                           CollectiveLedger& ledger) {
    registry.validate();
    check_shards(batch, registry);
    const std::size_t w = batch.world_size();
    const std::size_t n_pairs = registry.pairs.size();
    std::vector<std::size_t> counts(w);
    for (std::size_t i = 0; i < w; ++i) counts[i] = batch.shards[i].batch_size();

    // Stack all pairs' arguments along the batch dimension per shard, then
    // gather each side once.
    std::vector<Tensor> left_stacks, right_stacks;
    for (const EmbeddingBundle& shard : batch.shards) {
        std::vector<Tensor> lp, rp;
        for (const LossPairSpec& p : registry.pairs) {
            lp.push_back(shard.get(p.left));
            rp.push_back(shard.get(p.right));
        }
        left_stacks.push_back(concat_rows(lp));
        right_stacks.push_back(concat_rows(rp));
    }
    Tensor left_global = concat_rows(left_stacks);
    Tensor right_global = concat_rows(right_stacks);
    ledger.gather_calls += 2;
    ledger.payload_floats += left_global.size() + right_global.size();

    // Split by the recorded batch sizes: shard w's block holds its P local
    // segments in registry order.
    std::vector<std::size_t> shard_offsets(w, 0);
    {
        std::size_t at = 0;
        for (std::size_t i = 0; i < w; ++i) {
            shard_offsets[i] = at;
            at += counts[i] * n_pairs;
        }
    }
    GatherResult out;
    out.shard_grads.resize(w);
    for (std::size_t pi = 0; pi < n_pairs; ++pi) {
        const LossPairSpec& p = registry.pairs[pi];
        std::vector<Tensor> lg, rg;
        for (std::size_t i = 0; i < w; ++i) {
            const std::size_t begin = shard_offsets[i] + pi * counts[i];
            lg.push_back(slice_rows(left_global, begin, counts[i]));
            rg.push_back(slice_rows(right_global, begin, counts[i]));
        }
        Tensor left = concat_rows(lg);
        Tensor right = concat_rows(rg);

        PairLossResult r = sigmoid_pair_loss(left, right, p.alpha(), p.beta);
        out.per_pair.push_back(r.loss);
        out.total += p.weight * r.loss;
        out.d_alpha.push_back(p.weight * r.d_alpha);
        out.d_beta.push_back(p.weight * r.d_beta);
        if (p.weight != 0.0) {
            r.d_left *= p.weight;
            r.d_right *= p.weight;
            scatter_grad(out.shard_grads, counts, p.left, r.d_left);
            scatter_grad(out.shard_grads, counts, p.right, r.d_right);
        }
    }
    return out;
}

std::string GatherBenchReport::to_json() const {
    nlohmann::json j;
    j["world_size"] = world_size;
    j["pairs"] = pairs;
    j["batch"] = batch;
    j["dim"] = dim;
    j["naive"] = {{"strategy", "naive"},
                  {"calls", naive_calls},
                  {"payload_floats", naive_payload_floats},
                  {"modeled_time_s", naive_time_s}};
    j["packed"] = {{"strategy", "packed"},
                   {"calls", packed_calls},
                   {"payload_floats", packed_payload_floats},
                   {"modeled_time_s", packed_time_s}};
    j["modeled_speedup"] = modeled_speedup;
    return j.dump(2);
}

GatherBenchReport bench_gather(std::size_t world_size, std::size_t pairs, std::size_t batch,
                               std::size_t dim, double latency_per_call_s,
                               double floats_per_second) {
    if (world_size == 0 || pairs == 0 || batch == 0 || dim == 0) {
        throw param_error("bench_gather: all extents must be positive");
    }
    if (latency_per_call_s < 0.0 || floats_per_second <= 0.0) {
        throw param_error("bench_gather: invalid cost constants");
    }
    GatherBenchReport r;
    r.world_size = world_size;
    r.pairs = pairs;
    r.batch = batch;
    r.dim = dim;
    r.naive_calls = 2 * pairs;
    r.packed_calls = 2;
    // The packed scheme removes calls, not bytes: payloads are equal.
    r.naive_payload_floats = 2 * pairs * batch * dim;
    r.packed_payload_floats = r.naive_payload_floats;
    r.naive_time_s = double(r.naive_calls) * latency_per_call_s +
                     double(r.naive_payload_floats) / floats_per_second;
    r.packed_time_s = double(r.packed_calls) * latency_per_call_s +
                      double(r.packed_payload_floats) / floats_per_second;
    r.modeled_speedup = r.naive_time_s / r.packed_time_s;
    return r;
}

}  // namespace peav
