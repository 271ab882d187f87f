#pragma once

// Label-query transformer: patch embedding over the raw feature grid, a
// self-attention encoder, and a decoder whose learnable per-class queries
// cross-attend into the encoded sequence, yielding one feature vector per
// class plus per-class attention maps.
//
// Conventions (fixed so oracles are unambiguous): post-norm residual blocks;
// the 2D sinusoidal positional encoding is added to attention queries and
// keys only, never to values; the decoder runs optional query self-attention,
// then cross-attention (PE on keys), then the feed-forward block.

#include <cmath>
#include <vector>

#include "labelcl/autograd.hpp"
#include "labelcl/config.hpp"
#include "labelcl/rng.hpp"
#include "labelcl/tensor.hpp"

namespace labelcl {

struct DataDims {
    int classes = 0;
    int grid_h = 0;
    int grid_w = 0;
    int grid_c = 0;
};

// Fixed 2D sinusoidal encoding: the first d/2 channels encode the row index,
// the last d/2 the column index; channel pairs (2i, 2i+1) within each half
// hold (sin, cos) of coordinate * 10000^(-4i/d). Entries lie in [-1, 1].
template <typename S>
Tensor<S> positional_encoding_2d(int h, int w, int d) {
    if (d % 4 != 0) throw ParamError("positional encoding needs d divisible by 4, got " + std::to_string(d));
    Tensor<S> pe({static_cast<int64_t>(h) * w, d});
    const int quarter = d / 4;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const int64_t row = static_cast<int64_t>(r) * w + c;
            for (int i = 0; i < quarter; ++i) {
                const double omega = std::pow(10000.0, -4.0 * i / static_cast<double>(d));
                pe.at(row, 2 * i) = static_cast<S>(std::sin(r * omega));
                pe.at(row, 2 * i + 1) = static_cast<S>(std::cos(r * omega));
                pe.at(row, d / 2 + 2 * i) = static_cast<S>(std::sin(c * omega));
                pe.at(row, d / 2 + 2 * i + 1) = static_cast<S>(std::cos(c * omega));
            }
        }
    return pe;
}

template <typename S>
struct AttentionParams {
    Var<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct LayerNormParams {
    Var<S> gain, bias;
};

template <typename S>
struct FfnParams {
    Var<S> w1, b1, w2, b2;
};

template <typename S>
struct EncoderLayerParams {
    AttentionParams<S> self;
    LayerNormParams<S> ln_attn;
    FfnParams<S> ffn;
    LayerNormParams<S> ln_ffn;
};

template <typename S>
struct DecoderLayerParams {
    AttentionParams<S> self; // unused vars stay null when query self-attention is off
    LayerNormParams<S> ln_self;
    AttentionParams<S> cross;
    LayerNormParams<S> ln_cross;
    FfnParams<S> ffn;
    LayerNormParams<S> ln_ffn;
};

template <typename S>
struct AttentionResult {
    Var<S> out;
    Tensor<S> weights; // head-averaged (rows(query), rows(key)), detached copy
};

template <typename S>
AttentionResult<S> multi_head_attention(const Var<S>& query_in, const Var<S>& key_in,
                                        const Var<S>& value_in, const AttentionParams<S>& p,
                                        int heads) {
    const int64_t d = query_in->value.cols();
    if (d % heads != 0)
        throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    const int64_t dh = d / heads;
    auto q = add_bias(matmul(query_in, p.wq), p.bq);
    auto k = add_bias(matmul(key_in, p.wk), p.bk);
    auto v = add_bias(matmul(value_in, p.wv), p.bv);

    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var<S>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    Tensor<S> avg = Tensor<S>::zeros({query_in->value.rows(), key_in->value.rows()});
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        for (int64_t i = 0; i < avg.numel(); ++i)
            avg[i] += attn->value[i] / static_cast<S>(heads);
        head_outs.push_back(matmul(attn, vh));
    }
    return {add_bias(matmul(concat_cols(head_outs), p.wo), p.bo), std::move(avg)};
}

template <typename S>
Var<S> feed_forward(const Var<S>& x, const FfnParams<S>& p, Activation act) {
    auto h = add_bias(matmul(x, p.w1), p.b1);
    h = act == Activation::Gelu ? gelu(h) : relu(h);
    return add_bias(matmul(h, p.w2), p.b2);
}

template <typename S>
class SarlModel {
public:
    SarlModel(const RunConfig& cfg, const DataDims& dims, ParamStore<S>& store, RngState& rng)
        : cfg_(cfg), dims_(dims) {
        if (dims.classes < 1 || dims.grid_h < 1 || dims.grid_w < 1 || dims.grid_c < 1)
            throw ParamError("model: invalid data dimensions");
        const int d = cfg.d_model;
        pe_ = positional_encoding_2d<S>(dims.grid_h, dims.grid_w, d);

        embed_w_ = store.add("embed.w", init_weight(store, rng, dims.grid_c, d));
        embed_b_ = store.add("embed.b", Tensor<S>::zeros({d}));
        queries_ = store.add("queries", init_weight(store, rng, dims.classes, d, true));

        for (int l = 0; l < cfg.enc_layers; ++l) {
            std::string base = "enc" + std::to_string(l);
            EncoderLayerParams<S> layer;
            layer.self = make_attention(store, rng, base + ".self");
            layer.ln_attn = make_layer_norm(store, base + ".ln_attn");
            layer.ffn = make_ffn(store, rng, base + ".ffn");
            layer.ln_ffn = make_layer_norm(store, base + ".ln_ffn");
            enc_.push_back(layer);
        }
        for (int l = 0; l < cfg.dec_layers; ++l) {
            std::string base = "dec" + std::to_string(l);
            DecoderLayerParams<S> layer;
            if (cfg.query_self_attn) {
                layer.self = make_attention(store, rng, base + ".self");
                layer.ln_self = make_layer_norm(store, base + ".ln_self");
            }
            layer.cross = make_attention(store, rng, base + ".cross");
            layer.ln_cross = make_layer_norm(store, base + ".ln_cross");
            layer.ffn = make_ffn(store, rng, base + ".ffn");
            layer.ln_ffn = make_layer_norm(store, base + ".ln_ffn");
            dec_.push_back(layer);
        }
    }

    // (H0, W0, c_raw) grid -> (H0*W0, d) sequence.
    Var<S> embed(const Tensor<S>& grid) const {
        if (grid.rank() != 3 || grid.dim(0) != dims_.grid_h || grid.dim(1) != dims_.grid_w ||
            grid.dim(2) != dims_.grid_c)
            throw ShapeError("embed: grid shape " + shape_str(grid.shape) + " does not match configured " +
                             std::to_string(dims_.grid_h) + "x" + std::to_string(dims_.grid_w) + "x" +
                             std::to_string(dims_.grid_c));
        Tensor<S> seq(grid);
        auto flat = constant(Tensor<S>({static_cast<int64_t>(dims_.grid_h) * dims_.grid_w, dims_.grid_c},
                                       std::move(seq.data)));
        return add_bias(matmul(flat, embed_w_), embed_b_);
    }

    // Encoder stack over an embedded sequence with a caller-supplied
    // positional table (exposed for the equivariance tests).
    Var<S> encode_sequence(Var<S> x, const Tensor<S>& pe) const {
        auto pe_c = constant(Tensor<S>(pe));
        for (const auto& layer : enc_) {
            auto qk = add(x, pe_c);
            auto attn = multi_head_attention(qk, qk, x, layer.self, cfg_.heads);
            x = layer_norm(add(x, attn.out), layer.ln_attn.gain, layer.ln_attn.bias);
            auto f = feed_forward(x, layer.ffn, cfg_.activation);
            x = layer_norm(add(x, f), layer.ln_ffn.gain, layer.ln_ffn.bias);
        }
        return x;
    }

    struct DecodeResult {
        Var<S> qout;               // (L, d)
        Tensor<S> cross_attention; // (L, H0*W0), final layer, head-averaged
    };

    DecodeResult decode_sequence(const Var<S>& memory, const Tensor<S>& pe) const {
        auto pe_c = constant(Tensor<S>(pe));
        auto keys = add(memory, pe_c);
        Var<S> q = queries_;
        Tensor<S> last_weights;
        for (const auto& layer : dec_) {
            if (cfg_.query_self_attn) {
                auto sa = multi_head_attention(q, q, q, layer.self, cfg_.heads);
                q = layer_norm(add(q, sa.out), layer.ln_self.gain, layer.ln_self.bias);
            }
            auto ca = multi_head_attention(q, keys, memory, layer.cross, cfg_.heads);
            last_weights = ca.weights;
            q = layer_norm(add(q, ca.out), layer.ln_cross.gain, layer.ln_cross.bias);
            auto f = feed_forward(q, layer.ffn, cfg_.activation);
            q = layer_norm(add(q, f), layer.ln_ffn.gain, layer.ln_ffn.bias);
        }
        return {q, std::move(last_weights)};
    }

    DecodeResult forward(const Tensor<S>& grid) const {
        return decode_sequence(encode_sequence(embed(grid), pe_), pe_);
    }

    const Tensor<S>& pe() const { return pe_; }
    const DataDims& dims() const { return dims_; }
    Var<S> queries() const { return queries_; }

private:
    static Tensor<S> init_tensor(RngState& rng, int64_t rows, int64_t cols, double sd) {
        Tensor<S> t({rows, cols});
        for (auto& v : t.data) v = static_cast<S>(rng.normal() * sd);
        return t;
    }

    Tensor<S> init_weight(ParamStore<S>&, RngState& rng, int64_t rows, int64_t cols,
                          bool query_table = false) {
        const double fan_in = query_table ? static_cast<double>(cols) : static_cast<double>(rows);
        return init_tensor(rng, rows, cols, 1.0 / std::sqrt(fan_in));
    }

    AttentionParams<S> make_attention(ParamStore<S>& store, RngState& rng, const std::string& base) {
        const int d = cfg_.d_model;
        AttentionParams<S> p;
        p.wq = store.add(base + ".wq", init_weight(store, rng, d, d));
        p.bq = store.add(base + ".bq", Tensor<S>::zeros({d}));
        p.wk = store.add(base + ".wk", init_weight(store, rng, d, d));
        p.bk = store.add(base + ".bk", Tensor<S>::zeros({d}));
        p.wv = store.add(base + ".wv", init_weight(store, rng, d, d));
        p.bv = store.add(base + ".bv", Tensor<S>::zeros({d}));
        p.wo = store.add(base + ".wo", init_weight(store, rng, d, d));
        p.bo = store.add(base + ".bo", Tensor<S>::zeros({d}));
        return p;
    }

    LayerNormParams<S> make_layer_norm(ParamStore<S>& store, const std::string& base) {
        LayerNormParams<S> p;
        p.gain = store.add(base + ".gain", Tensor<S>::full({cfg_.d_model}, S(1)));
        p.bias = store.add(base + ".bias", Tensor<S>::zeros({cfg_.d_model}));
        return p;
    }

    FfnParams<S> make_ffn(ParamStore<S>& store, RngState& rng, const std::string& base) {
        const int d = cfg_.d_model, m = 2 * cfg_.d_model;
        FfnParams<S> p;
        p.w1 = store.add(base + ".w1", init_weight(store, rng, d, m));
        p.b1 = store.add(base + ".b1", Tensor<S>::zeros({m}));
        p.w2 = store.add(base + ".w2", init_weight(store, rng, m, d));
        p.b2 = store.add(base + ".b2", Tensor<S>::zeros({d}));
        return p;
    }

    RunConfig cfg_;
    DataDims dims_;
    Tensor<S> pe_;
    Var<S> embed_w_, embed_b_, queries_;
    std::vector<EncoderLayerParams<S>> enc_;
    std::vector<DecoderLayerParams<S>> dec_;
};

} // namespace labelcl
