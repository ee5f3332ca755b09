#pragma once

#include <cmath>

#include "dipformer/ops.hpp"
#include "dipformer/sao.hpp"

namespace dip {

inline double default_lca_scale(int channels, int num_heads) {
    return 1.0 / std::sqrt(static_cast<double>(channels) / num_heads);
}

template <typename S>
struct LcaParams {
    int channels = 0;
    int num_heads = 1;
    int pool_size = 1;   // P: keys/values live on a PxP pooled grid
    double scale = 0.0;  // score multiplier, 1/sqrt(head_dim) under default policy
    Tensor<S> q_w, q_b;  // [C,C] linears; queries from the depth branch
    Tensor<S> k_w, k_b;
    Tensor<S> v_w, v_b;
    Tensor<S> out_w, out_b;
};

template <typename S>
void validate_lca(const LcaParams<S>& p, int h, int w) {
    if (p.channels <= 0 || p.num_heads <= 0 || p.channels % p.num_heads != 0)
        throw ConfigError("lca: " + std::to_string(p.channels) + " channels not divisible by " +
                          std::to_string(p.num_heads) + " heads");
    if (p.scale <= 0) throw ConfigError("lca: non-positive scale");
    if (p.pool_size <= 0 || p.pool_size > h || p.pool_size > w ||
        static_cast<long>(p.pool_size) * p.pool_size > static_cast<long>(h) * w)
        throw ConfigError("lca: pool size " + std::to_string(p.pool_size) +
                          " does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                          " stage");
}

// Depth Linear Cross-Attention. Queries come from the depth feature at full
// resolution; keys and values from the RGB feature pooled to PxP tokens, so
// per-query cost is P^2 * head_dim instead of h*w * head_dim. Multi-head by
// channel split, heads re-concatenated through a learned output projection.
// The caller owns the residual add onto the stage's fused feature.
// `attn_out`, when given, receives the post-softmax attention,
// shape [N*heads, h*w, P*P].
template <typename S>
Tensor<S> lca_forward(const StagePair<S>& pair, const LcaParams<S>& p,
                      Tensor<S>* attn_out = nullptr) {
    if (pair.r_f.ndim() != 4 || pair.r_f.shape() != pair.d_f.shape())
        throw ConfigError("lca: r_f " + shape_str(pair.r_f.shape()) + " vs d_f " +
                          shape_str(pair.d_f.shape()));
    const int n = pair.r_f.dim(0), c = pair.r_f.dim(1);
    const int h = pair.r_f.dim(2), w = pair.r_f.dim(3);
    if (c != p.channels)
        throw ConfigError("lca: input has " + std::to_string(c) + " channels, params want " +
                          std::to_string(p.channels));
    validate_lca(p, h, w);
    const int heads = p.num_heads, dh = c / heads;
    const int hw = h * w, pp = p.pool_size * p.pool_size;

    OpScope scope("lca");
    OpCounter::instance().set_gauge("kv_tokens", static_cast<uint64_t>(pp));

    Tensor<S> q_tok;
    {
        OpScope s("q_proj");
        auto d_tok = reshape(permute(pair.d_f, {0, 2, 3, 1}), {n, hw, c});
        q_tok = linear(d_tok, p.q_w, p.q_b);
    }
    Tensor<S> k_tok, v_tok;
    {
        OpScope s("pool");
        auto pooled = adaptive_avg_pool2d(pair.r_f, p.pool_size, p.pool_size);
        auto r_tok = reshape(permute(pooled, {0, 2, 3, 1}), {n, pp, c});
        OpScope s2("kv_proj");
        k_tok = linear(r_tok, p.k_w, p.k_b);
        v_tok = linear(r_tok, p.v_w, p.v_b);
    }

    auto split_heads = [&](const Tensor<S>& t, int tokens) {
        return reshape(permute(reshape(t, {n, tokens, heads, dh}), {0, 2, 1, 3}),
                       {n * heads, tokens, dh});
    };
    auto qh = split_heads(q_tok, hw);
    auto kh = split_heads(k_tok, pp);
    auto vh = split_heads(v_tok, pp);

    Tensor<S> attn;
    {
        OpScope s("scores");
        attn = softmax_lastdim(mul_scalar(bmm_nt(qh, kh), p.scale));
    }
    Tensor<S> ctx;
    {
        OpScope s("context");
        ctx = bmm_nn(attn, vh);
    }
    auto merged = reshape(permute(reshape(ctx, {n, heads, hw, dh}), {0, 2, 1, 3}), {n, hw, c});
    Tensor<S> out;
    {
        OpScope s("out_proj");
        out = linear(merged, p.out_w, p.out_b);
    }
    if (attn_out) *attn_out = attn;
    return permute(reshape(out, {n, h, w, c}), {0, 3, 1, 2});
}

// Head-averaged row of a captured attention tensor [N*heads, h*w, P*P] for
// one query of batch element 0, reshaped to the PxP pooled grid. Rows are
// softmax outputs, so the map sums to 1.
template <typename S>
Tensor<S> average_attention_row(const Tensor<S>& attn, int num_heads, int query_index) {
    if (attn.ndim() != 3 || num_heads <= 0 || attn.dim(0) % num_heads != 0)
        throw ConfigError("average_attention_row: attention is " + shape_str(attn.shape()) +
                          " for " + std::to_string(num_heads) + " heads");
    const long hw = attn.dim(1);
    const int pp = attn.dim(2);
    const int pool = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pp))));
    if (pool * pool != pp) throw InternalError("average_attention_row: token count not square");
    if (query_index < 0 || query_index >= hw)
        throw ConfigError("average_attention_row: query " + std::to_string(query_index) +
                          " outside 0.." + std::to_string(hw - 1));
    auto out = Tensor<S>::zeros({pool, pool});
    const S* pa = attn.value().data();
    for (int hd = 0; hd < num_heads; ++hd) {
        size_t base = (static_cast<size_t>(hd) * hw + query_index) * pp;
        for (int j = 0; j < pp; ++j) out.value()[j] += pa[base + j];
    }
    for (int j = 0; j < pp; ++j) out.value()[j] /= static_cast<S>(num_heads);
    return out;
}

// Convenience form that runs the forward itself.
template <typename S>
Tensor<S> lca_attention_map(const StagePair<S>& pair, const LcaParams<S>& p, int query_index) {
    NoGrad ng;
    Tensor<S> attn;
    (void)lca_forward(pair, p, &attn);
    return average_attention_row(attn, p.num_heads, query_index);
}

}  // namespace dip
