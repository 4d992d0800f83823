#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tsguard/graph.hpp"
#include "tsguard/rng.hpp"
#include "tsguard/tensor.hpp"

namespace tsguard {

// --------------------------------------------------------------------------
// architecture descriptors
// --------------------------------------------------------------------------

struct ForecasterArch {
    std::size_t hidden = 32;
    std::size_t window = 3;
    double dropout = 0.1;
};

struct ClassifierArch {
    std::size_t blocks = 2;
    std::size_t branch_channels = 8; // per conv branch; a block emits 2x this
    std::size_t window = 3;
    double dropout = 0.1;
};

struct DenoiserArch {
    std::size_t hidden = 8;
    std::size_t window = 3;
    double dropout = 0.1;
};

// --------------------------------------------------------------------------
// parameter containers
// --------------------------------------------------------------------------

/// Two stacked LSTM layers (gate order i, f, g, o packed along the second
/// axis), per-layer layer-norm affine, and a final dense layer squeezed
/// through a sigmoid. Input size is 1 (univariate sequences).
struct ForecasterParams {
    ForecasterArch arch;
    std::array<Tensor, 2> w_in;     // (in x 4H), in = 1 for layer 0, H for layer 1
    std::array<Tensor, 2> w_rec;    // (H x 4H)
    std::array<Tensor, 2> bias;     // (4H)
    std::array<Tensor, 2> ln_scale; // (H)
    std::array<Tensor, 2> ln_shift; // (H)
    Tensor fc_w;                    // (H x 1)
    Tensor fc_b;                    // (1)

    std::vector<Tensor*> trainable() {
        return {&w_in[0], &w_rec[0], &bias[0], &ln_scale[0], &ln_shift[0],
                &w_in[1], &w_rec[1], &bias[1], &ln_scale[1], &ln_shift[1],
                &fc_w,    &fc_b};
    }
    std::vector<const Tensor*> trainable() const {
        return {&w_in[0], &w_rec[0], &bias[0], &ln_scale[0], &ln_shift[0],
                &w_in[1], &w_rec[1], &bias[1], &ln_scale[1], &ln_shift[1],
                &fc_w,    &fc_b};
    }
    std::vector<Tensor*> buffers() { return {}; }
    std::vector<const Tensor*> buffers() const { return {}; }
};

struct ClassifierBlock {
    Tensor w1, b1;               // (c x Cin x 1), (c)
    Tensor w3, b3;               // (c x Cin x 3), (c)
    Tensor bn_scale, bn_shift;   // (2c)
    mutable Tensor bn_mean, bn_var; // running stats; mutated by train-mode forwards only
};

/// Stack of Inception-style blocks: parallel kernel-1 and kernel-3 1-D convs
/// concatenated along channels, batch-norm, ReLU, dropout; global average
/// pooling and a dense layer to 2 logits.
struct ClassifierParams {
    ClassifierArch arch;
    std::vector<ClassifierBlock> blocks;
    Tensor fc_w; // (2c x 2)
    Tensor fc_b; // (2)

    std::vector<Tensor*> trainable() {
        std::vector<Tensor*> out;
        for (auto& b : blocks) {
            out.push_back(&b.w1);
            out.push_back(&b.b1);
            out.push_back(&b.w3);
            out.push_back(&b.b3);
            out.push_back(&b.bn_scale);
            out.push_back(&b.bn_shift);
        }
        out.push_back(&fc_w);
        out.push_back(&fc_b);
        return out;
    }
    std::vector<const Tensor*> trainable() const {
        std::vector<const Tensor*> out;
        for (const auto& b : blocks) {
            out.push_back(&b.w1);
            out.push_back(&b.b1);
            out.push_back(&b.w3);
            out.push_back(&b.b3);
            out.push_back(&b.bn_scale);
            out.push_back(&b.bn_shift);
        }
        out.push_back(&fc_w);
        out.push_back(&fc_b);
        return out;
    }
    std::vector<Tensor*> buffers() {
        std::vector<Tensor*> out;
        for (auto& b : blocks) {
            out.push_back(&b.bn_mean);
            out.push_back(&b.bn_var);
        }
        return out;
    }
    std::vector<const Tensor*> buffers() const {
        std::vector<const Tensor*> out;
        for (const auto& b : blocks) {
            out.push_back(&b.bn_mean);
            out.push_back(&b.bn_var);
        }
        return out;
    }
};

/// Encoder (linear n -> h, batch-norm, ReLU, dropout) and a decoder mirroring
/// the same structure back to length n.
struct DenoiserParams {
    DenoiserArch arch;
    Tensor enc_w, enc_b;                 // (n x h), (h)
    Tensor enc_bn_scale, enc_bn_shift;   // (h)
    mutable Tensor enc_bn_mean, enc_bn_var;
    Tensor dec_w, dec_b;                 // (h x n), (n)
    Tensor dec_bn_scale, dec_bn_shift;   // (n)
    mutable Tensor dec_bn_mean, dec_bn_var;

    std::vector<Tensor*> trainable() {
        return {&enc_w, &enc_b, &enc_bn_scale, &enc_bn_shift,
                &dec_w, &dec_b, &dec_bn_scale, &dec_bn_shift};
    }
    std::vector<const Tensor*> trainable() const {
        return {&enc_w, &enc_b, &enc_bn_scale, &enc_bn_shift,
                &dec_w, &dec_b, &dec_bn_scale, &dec_bn_shift};
    }
    std::vector<Tensor*> buffers() {
        return {&enc_bn_mean, &enc_bn_var, &dec_bn_mean, &dec_bn_var};
    }
    std::vector<const Tensor*> buffers() const {
        return {&enc_bn_mean, &enc_bn_var, &dec_bn_mean, &dec_bn_var};
    }
};

// --------------------------------------------------------------------------
// initialization
// --------------------------------------------------------------------------

namespace detail {

inline void fill_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

inline void check_positive(std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string(what) + " must be positive");
}

} // namespace detail

/// Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero except the LSTM
/// forget-gate block, which starts at 1. Reproducible from the seed.
inline ForecasterParams init_forecaster(const ForecasterArch& arch, std::uint64_t seed) {
    detail::check_positive(arch.hidden, "forecaster hidden size");
    detail::check_positive(arch.window, "forecaster window");
    const std::size_t H = arch.hidden;
    Rng rng(seed);
    ForecasterParams p;
    p.arch = arch;
    for (std::size_t l = 0; l < 2; ++l) {
        const std::size_t in = l == 0 ? 1 : H;
        p.w_in[l] = Tensor({in, 4 * H});
        detail::fill_uniform_fan_in(p.w_in[l], in, rng);
        p.w_rec[l] = Tensor({H, 4 * H});
        detail::fill_uniform_fan_in(p.w_rec[l], H, rng);
        p.bias[l] = Tensor({4 * H});
        for (std::size_t j = H; j < 2 * H; ++j) p.bias[l].data[j] = 1.0; // forget gate
        p.ln_scale[l] = Tensor({H}, 1.0);
        p.ln_shift[l] = Tensor({H});
    }
    p.fc_w = Tensor({H, std::size_t{1}});
    detail::fill_uniform_fan_in(p.fc_w, H, rng);
    p.fc_b = Tensor({std::size_t{1}});
    return p;
}

inline ClassifierParams init_classifier(const ClassifierArch& arch, std::uint64_t seed) {
    detail::check_positive(arch.blocks, "classifier block count");
    detail::check_positive(arch.branch_channels, "classifier branch channels");
    detail::check_positive(arch.window, "classifier window");
    const std::size_t c = arch.branch_channels;
    Rng rng(seed);
    ClassifierParams p;
    p.arch = arch;
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        const std::size_t cin = b == 0 ? 1 : 2 * c;
        ClassifierBlock blk;
        blk.w1 = Tensor({c, cin, std::size_t{1}});
        detail::fill_uniform_fan_in(blk.w1, cin, rng);
        blk.b1 = Tensor({c});
        blk.w3 = Tensor({c, cin, std::size_t{3}});
        detail::fill_uniform_fan_in(blk.w3, cin * 3, rng);
        blk.b3 = Tensor({c});
        blk.bn_scale = Tensor({2 * c}, 1.0);
        blk.bn_shift = Tensor({2 * c});
        blk.bn_mean = Tensor({2 * c});
        blk.bn_var = Tensor({2 * c}, 1.0);
        p.blocks.push_back(std::move(blk));
    }
    p.fc_w = Tensor({2 * c, std::size_t{2}});
    detail::fill_uniform_fan_in(p.fc_w, 2 * c, rng);
    p.fc_b = Tensor({std::size_t{2}});
    return p;
}

inline DenoiserParams init_denoiser(const DenoiserArch& arch, std::uint64_t seed) {
    detail::check_positive(arch.hidden, "denoiser hidden size");
    detail::check_positive(arch.window, "denoiser window");
    const std::size_t n = arch.window, h = arch.hidden;
    Rng rng(seed);
    DenoiserParams p;
    p.arch = arch;
    p.enc_w = Tensor({n, h});
    detail::fill_uniform_fan_in(p.enc_w, n, rng);
    p.enc_b = Tensor({h});
    p.enc_bn_scale = Tensor({h}, 1.0);
    p.enc_bn_shift = Tensor({h});
    p.enc_bn_mean = Tensor({h});
    p.enc_bn_var = Tensor({h}, 1.0);
    p.dec_w = Tensor({h, n});
    detail::fill_uniform_fan_in(p.dec_w, h, rng);
    p.dec_b = Tensor({n});
    p.dec_bn_scale = Tensor({n}, 1.0);
    p.dec_bn_shift = Tensor({n});
    p.dec_bn_mean = Tensor({n});
    p.dec_bn_var = Tensor({n}, 1.0);
    return p;
}

inline std::size_t param_count(const ForecasterArch& a) {
    const std::size_t H = a.hidden;
    std::size_t total = 0;
    for (std::size_t l = 0; l < 2; ++l) {
        const std::size_t in = l == 0 ? 1 : H;
        total += in * 4 * H + H * 4 * H + 4 * H + 2 * H;
    }
    return total + H + 1;
}

inline std::size_t param_count(const ClassifierArch& a) {
    const std::size_t c = a.branch_channels;
    std::size_t total = 0;
    for (std::size_t b = 0; b < a.blocks; ++b) {
        const std::size_t cin = b == 0 ? 1 : 2 * c;
        total += c * cin * 1 + c + c * cin * 3 + c + 2 * (2 * c);
    }
    return total + 2 * c * 2 + 2;
}

inline std::size_t param_count(const DenoiserArch& a) {
    const std::size_t n = a.window, h = a.hidden;
    return n * h + h + 2 * h + h * n + n + 2 * n;
}

// --------------------------------------------------------------------------
// graph forwards
// --------------------------------------------------------------------------

struct ForecasterVars {
    std::array<Var, 2> w_in, w_rec, bias, ln_scale, ln_shift;
    Var fc_w, fc_b;
    std::vector<Var> ordered() const {
        return {w_in[0], w_rec[0], bias[0], ln_scale[0], ln_shift[0],
                w_in[1], w_rec[1], bias[1], ln_scale[1], ln_shift[1],
                fc_w,    fc_b};
    }
};

inline ForecasterVars lift(Graph& g, const ForecasterParams& p, bool requires_grad = true) {
    ForecasterVars v;
    for (std::size_t l = 0; l < 2; ++l) {
        v.w_in[l] = g.input(p.w_in[l], requires_grad);
        v.w_rec[l] = g.input(p.w_rec[l], requires_grad);
        v.bias[l] = g.input(p.bias[l], requires_grad);
        v.ln_scale[l] = g.input(p.ln_scale[l], requires_grad);
        v.ln_shift[l] = g.input(p.ln_shift[l], requires_grad);
    }
    v.fc_w = g.input(p.fc_w, requires_grad);
    v.fc_b = g.input(p.fc_b, requires_grad);
    return v;
}

/// Consumes the window stepwise: LSTM layer 1 -> layer norm -> dropout ->
/// LSTM layer 2 -> layer norm -> dropout, then a dense layer on the last
/// step's stream and a sigmoid. Output shape (m x 1), every value in (0,1).
/// The recurrent state itself stays un-normalized; normalization and dropout
/// apply to the stream passed between layers and into the dense head.
inline Var forecaster_forward(Graph& g, const ForecasterParams& p, const ForecasterVars& v, Var x,
                              Mode mode, std::uint64_t dropout_seed = 0) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 2 || tx.shape[1] != p.arch.window)
        throw ShapeError("forecaster_forward: input must be (m x window)");
    const std::size_t m = tx.shape[0];
    const std::size_t H = p.arch.hidden;
    const std::size_t n = p.arch.window;

    std::array<Var, 2> h, c;
    for (std::size_t l = 0; l < 2; ++l) {
        h[l] = g.input(Tensor({m, H}), false); // zero initial state, no gradient needed
        c[l] = g.input(Tensor({m, H}), false);
    }
    Var stream{}; // inter-layer signal at the current step
    for (std::size_t t = 0; t < n; ++t) {
        Var step_in = slice(g, x, 1, t, 1); // (m x 1)
        for (std::size_t l = 0; l < 2; ++l) {
            Var gates = add(g, add(g, matmul(g, step_in, v.w_in[l]), matmul(g, h[l], v.w_rec[l])),
                            v.bias[l]);
            Var gi = sigmoid(g, slice(g, gates, 1, 0, H));
            Var gf = sigmoid(g, slice(g, gates, 1, H, H));
            Var gc = tanh(g, slice(g, gates, 1, 2 * H, H));
            Var go = sigmoid(g, slice(g, gates, 1, 3 * H, H));
            c[l] = add(g, mul(g, gf, c[l]), mul(g, gi, gc));
            h[l] = mul(g, go, tanh(g, c[l]));
            Var normed = layer_norm(g, h[l], v.ln_scale[l], v.ln_shift[l]);
            stream = dropout(g, normed, p.arch.dropout, mode, derive_seed(dropout_seed, {l, t}));
            step_in = stream;
        }
    }
    return sigmoid(g, add(g, matmul(g, stream, v.fc_w), v.fc_b));
}

inline Var forecaster_forward(Graph& g, const ForecasterParams& p, Var x, Mode mode,
                              std::uint64_t dropout_seed = 0) {
    return forecaster_forward(g, p, lift(g, p), x, mode, dropout_seed);
}

struct ClassifierVars {
    struct Block {
        Var w1, b1, w3, b3, bn_scale, bn_shift;
    };
    std::vector<Block> blocks;
    Var fc_w, fc_b;
    std::vector<Var> ordered() const {
        std::vector<Var> out;
        for (const auto& b : blocks) {
            out.push_back(b.w1);
            out.push_back(b.b1);
            out.push_back(b.w3);
            out.push_back(b.b3);
            out.push_back(b.bn_scale);
            out.push_back(b.bn_shift);
        }
        out.push_back(fc_w);
        out.push_back(fc_b);
        return out;
    }
};

inline ClassifierVars lift(Graph& g, const ClassifierParams& p, bool requires_grad = true) {
    ClassifierVars v;
    for (const auto& b : p.blocks) {
        v.blocks.push_back({g.input(b.w1, requires_grad), g.input(b.b1, requires_grad),
                            g.input(b.w3, requires_grad), g.input(b.b3, requires_grad),
                            g.input(b.bn_scale, requires_grad), g.input(b.bn_shift, requires_grad)});
    }
    v.fc_w = g.input(p.fc_w, requires_grad);
    v.fc_b = g.input(p.fc_b, requires_grad);
    return v;
}

/// Input is one channel by window steps: x must be (m x 1 x window).
/// Blocks: conv(k=1, pad 0) || conv(k=3, pad 1) -> concat -> batch norm ->
/// ReLU -> dropout; then global average pooling and a dense layer to 2 logits.
inline Var classifier_forward(Graph& g, const ClassifierParams& p, const ClassifierVars& v, Var x,
                              Mode mode, std::uint64_t dropout_seed = 0) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 3 || tx.shape[1] != 1 || tx.shape[2] != p.arch.window)
        throw ShapeError("classifier_forward: input must be (m x 1 x window)");
    Var cur = x;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const ClassifierBlock& blk = p.blocks[b];
        const auto& bv = v.blocks[b];
        Var br1 = conv1d(g, cur, bv.w1, bv.b1, 0);
        Var br3 = conv1d(g, cur, bv.w3, bv.b3, 1);
        Var cat = concat(g, br1, br3, 1);
        Var bn = batch_norm(g, cat, bv.bn_scale, bv.bn_shift, blk.bn_mean, blk.bn_var, mode);
        cur = dropout(g, relu(g, bn), p.arch.dropout, mode, derive_seed(dropout_seed, {b}));
    }
    Var pooled = global_avg_pool(g, cur);
    return add(g, matmul(g, pooled, v.fc_w), v.fc_b);
}

inline Var classifier_forward(Graph& g, const ClassifierParams& p, Var x, Mode mode,
                              std::uint64_t dropout_seed = 0) {
    return classifier_forward(g, p, lift(g, p), x, mode, dropout_seed);
}

struct DenoiserVars {
    Var enc_w, enc_b, enc_bn_scale, enc_bn_shift;
    Var dec_w, dec_b, dec_bn_scale, dec_bn_shift;
    std::vector<Var> ordered() const {
        return {enc_w, enc_b, enc_bn_scale, enc_bn_shift,
                dec_w, dec_b, dec_bn_scale, dec_bn_shift};
    }
};

inline DenoiserVars lift(Graph& g, const DenoiserParams& p, bool requires_grad = true) {
    return DenoiserVars{g.input(p.enc_w, requires_grad),
                        g.input(p.enc_b, requires_grad),
                        g.input(p.enc_bn_scale, requires_grad),
                        g.input(p.enc_bn_shift, requires_grad),
                        g.input(p.dec_w, requires_grad),
                        g.input(p.dec_b, requires_grad),
                        g.input(p.dec_bn_scale, requires_grad),
                        g.input(p.dec_bn_shift, requires_grad)};
}

inline Var denoiser_forward(Graph& g, const DenoiserParams& p, const DenoiserVars& v, Var x,
                            Mode mode, std::uint64_t dropout_seed = 0) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 2 || tx.shape[1] != p.arch.window)
        throw ShapeError("denoiser_forward: input must be (m x window)");
    Var enc = batch_norm(g, add(g, matmul(g, x, v.enc_w), v.enc_b), v.enc_bn_scale, v.enc_bn_shift,
                         p.enc_bn_mean, p.enc_bn_var, mode);
    Var hid = dropout(g, relu(g, enc), p.arch.dropout, mode, derive_seed(dropout_seed, {0}));
    Var dec = batch_norm(g, add(g, matmul(g, hid, v.dec_w), v.dec_b), v.dec_bn_scale,
                         v.dec_bn_shift, p.dec_bn_mean, p.dec_bn_var, mode);
    return dropout(g, relu(g, dec), p.arch.dropout, mode, derive_seed(dropout_seed, {1}));
}

inline Var denoiser_forward(Graph& g, const DenoiserParams& p, Var x, Mode mode,
                            std::uint64_t dropout_seed = 0) {
    return denoiser_forward(g, p, lift(g, p), x, mode, dropout_seed);
}

// --------------------------------------------------------------------------
// eval-mode conveniences (batched over rows to bound graph memory)
// --------------------------------------------------------------------------

namespace detail {
constexpr std::size_t eval_chunk = 512;
}

/// Eval-mode predictions for a batch of windows; returns shape (m).
inline Tensor forecaster_predict(const ForecasterParams& p, const Tensor& X) {
    const std::size_t m = X.shape.at(0);
    Tensor out({m});
    for (std::size_t start = 0; start < m; start += detail::eval_chunk) {
        const std::size_t count = std::min(detail::eval_chunk, m - start);
        Graph g;
        Var pred = forecaster_forward(g, p, g.input(X.rows(start, count)), Mode::eval);
        const Tensor& v = g.value(pred);
        for (std::size_t i = 0; i < count; ++i) out.data[start + i] = v.data[i];
    }
    return out;
}

/// Eval-mode logits, shape (m x 2).
inline Tensor classifier_logits(const ClassifierParams& p, const Tensor& X) {
    const std::size_t m = X.shape.at(0);
    Tensor out({m, std::size_t{2}});
    for (std::size_t start = 0; start < m; start += detail::eval_chunk) {
        const std::size_t count = std::min(detail::eval_chunk, m - start);
        Graph g;
        Tensor chunk = X.rows(start, count).reshaped({count, std::size_t{1}, p.arch.window});
        Var logits = classifier_forward(g, p, g.input(std::move(chunk)), Mode::eval);
        const Tensor& v = g.value(logits);
        for (std::size_t i = 0; i < 2 * count; ++i) out.data[2 * start + i] = v.data[i];
    }
    return out;
}

/// Binary labels from eval-mode logits; exactly equal logits resolve to 0.
inline std::vector<int> classify(const ClassifierParams& p, const Tensor& X) {
    const Tensor logits = classifier_logits(p, X);
    std::vector<int> labels(logits.shape[0]);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = logits.at2(i, 1) > logits.at2(i, 0) ? 1 : 0;
    return labels;
}

/// Eval-mode reconstruction, shape (m x window).
inline Tensor denoiser_predict(const DenoiserParams& p, const Tensor& X) {
    const std::size_t m = X.shape.at(0);
    Tensor out(X.shape);
    for (std::size_t start = 0; start < m; start += detail::eval_chunk) {
        const std::size_t count = std::min(detail::eval_chunk, m - start);
        Graph g;
        Var rec = denoiser_forward(g, p, g.input(X.rows(start, count)), Mode::eval);
        out.set_rows(start, g.value(rec));
    }
    return out;
}

} // namespace tsguard
