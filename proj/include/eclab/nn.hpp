#pragma once

// A small pre-norm transformer encoder mapping a 33-byte compressed public key
// to 32 independent 256-way byte predictions.
//
// Sequence (65 positions): the 33 input bytes, each embedded through a
// 256 x h table, followed by 32 learned query vectors. A learned positional
// embedding is added at every position. Each block is
//
//   x += Wo * MHA(LN1(x)) + bo        (full, unmasked self-attention)
//   x += W2 * gelu(W1 * LN2(x) + b1) + b2
//
// and the head LN_f + linear(h -> 256) is applied at the 32 query positions.
//
// Parameter count for hidden h, ffn f, L blocks:
//   embeddings   256h + 32h + 65h
//   block        4h^2 + 2hf + 9h + f   (two LayerNorms, QKV, output proj, FFN)
//   head         2h + 256h + 256
//   total        611h + 256 + L(4h^2 + 2hf + 9h + f)

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "eclab/errors.hpp"

namespace eclab::nn {

inline constexpr int kVocab = 256;
inline constexpr int kInputLen = 33;
inline constexpr int kOutputLen = 32;
inline constexpr int kSeqLen = kInputLen + kOutputLen;

struct ModelConfig {
    int hidden_size = 128;
    int num_layers = 4;
    int num_heads = 4;
    int ffn_size = 256;
    std::uint64_t seed = 1;

    void validate() const {
        if (hidden_size < 1 || num_layers < 0 || num_heads < 1 || ffn_size < 1)
            throw ConfigError("model dimensions must be positive");
        if (hidden_size % num_heads != 0)
            throw ConfigError("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " +
                              std::to_string(num_heads));
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t h = c.hidden_size, f = c.ffn_size, L = c.num_layers;
    return 611 * h + 256 + L * (4 * h * h + 2 * h * f + 9 * h + f);
}

/// Offsets of every tensor inside the flat parameter vector. Matrices are
/// row-major [in x out] so that activations multiply on the left.
struct Layout {
    struct Block {
        std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2, end;
    };

    std::size_t tok_emb = 0, query_emb = 0, pos_emb = 0;
    std::vector<Block> blocks;
    std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
    std::size_t total = 0;

    explicit Layout(const ModelConfig& c) {
        const std::size_t h = c.hidden_size, f = c.ffn_size;
        std::size_t at = 0;
        auto take = [&at](std::size_t n) {
            std::size_t o = at;
            at += n;
            return o;
        };
        tok_emb = take(kVocab * h);
        query_emb = take(kOutputLen * h);
        pos_emb = take(kSeqLen * h);
        for (int l = 0; l < c.num_layers; ++l) {
            Block b{};
            b.ln1_g = take(h);
            b.ln1_b = take(h);
            b.wqkv = take(h * 3 * h);
            b.bqkv = take(3 * h);
            b.wo = take(h * h);
            b.bo = take(h);
            b.ln2_g = take(h);
            b.ln2_b = take(h);
            b.w1 = take(h * f);
            b.b1 = take(f);
            b.w2 = take(f * h);
            b.b2 = take(h);
            b.end = at;
            blocks.push_back(b);
        }
        lnf_g = take(h);
        lnf_b = take(h);
        head_w = take(h * kVocab);
        head_b = take(kVocab);
        total = at;
    }

    /// Block index owning parameter `i`, or -1 for embeddings and head.
    int layer_of(std::size_t i) const {
        for (std::size_t l = 0; l < blocks.size(); ++l)
            if (i >= blocks[l].ln1_g && i < blocks[l].end) return static_cast<int>(l);
        return -1;
    }
};

/// Raw 64-bit draws mapped to [0, 1) with 53 bits, so initialization is
/// reproducible on any standard library.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Unbiased index in [0, n).
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
        std::uint64_t x = rng();
        if (x < limit) return x % n;
    }
}

template <typename T>
struct ModelState {
    ModelConfig config;
    Layout layout;
    std::vector<T> params;

    explicit ModelState(const ModelConfig& c) : config(c), layout(c), params(layout.total, T(0)) {}

    T* at(std::size_t offset) { return params.data() + offset; }
    const T* at(std::size_t offset) const { return params.data() + offset; }
};

/// Weights uniform in +-1/sqrt(fan_in), embeddings uniform in +-1, LayerNorm
/// gains 1, biases 0. Tensors are drawn in layout order from one generator.
template <typename T>
ModelState<T> model_init(const ModelConfig& config) {
    config.validate();
    ModelState<T> m(config);
    std::mt19937_64 rng(config.seed);
    const std::size_t h = config.hidden_size, f = config.ffn_size;
    auto fill = [&](std::size_t off, std::size_t n, double a) {
        for (std::size_t i = 0; i < n; ++i) m.params[off + i] = static_cast<T>((2 * unit_uniform(rng) - 1) * a);
    };
    auto ones = [&](std::size_t off, std::size_t n) { std::fill_n(m.at(off), n, T(1)); };
    fill(m.layout.tok_emb, kVocab * h, 1.0);
    fill(m.layout.query_emb, kOutputLen * h, 1.0);
    fill(m.layout.pos_emb, kSeqLen * h, 1.0);
    const double sh = 1.0 / std::sqrt(double(h)), sf = 1.0 / std::sqrt(double(f));
    for (const auto& b : m.layout.blocks) {
        ones(b.ln1_g, h);
        fill(b.wqkv, h * 3 * h, sh);
        fill(b.wo, h * h, sh);
        ones(b.ln2_g, h);
        fill(b.w1, h * f, sh);
        fill(b.w2, f * h, sf);
    }
    ones(m.layout.lnf_g, h);
    fill(m.layout.head_w, h * kVocab, sh);
    return m;
}

/// B x 32 x 256 logits, row-major.
template <typename T>
struct Logits {
    std::size_t batch = 0;
    std::vector<T> values;

    const T* row(std::size_t b, std::size_t pos) const { return values.data() + (b * kOutputLen + pos) * kVocab; }
    T at(std::size_t b, std::size_t pos, std::size_t v) const { return row(b, pos)[v]; }
};

namespace detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using MapV = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using SMap = Eigen::Map<Mat<T>, 0, Stride>;
template <typename T>
using CSMap = Eigen::Map<const Mat<T>, 0, Stride>;

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LnCache {
    Mat<T> xhat;
    std::vector<T> rstd;
};

// Reductions are written as plain loops: Eigen's vectorized reductions pick
// their starting packet from the data address, which would make results
// depend on where an allocation happens to land.
// Sums use 16 interleaved partial accumulators combined in a fixed order; the
// compiler vectorizes the lane-wise adds without reassociating anything.
inline constexpr Eigen::Index kLanes = 16;

template <typename T>
T sum_of(const T* p, Eigen::Index n) {
    T acc[kLanes] = {};
    Eigen::Index i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (Eigen::Index j = 0; j < kLanes; ++j) acc[j] += p[i + j];
    T s = 0;
    for (Eigen::Index j = 0; j < kLanes; ++j) s += acc[j];
    for (; i < n; ++i) s += p[i];
    return s;
}

template <typename T>
T dot_of(const T* a, const T* b, Eigen::Index n) {
    T acc[kLanes] = {};
    Eigen::Index i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (Eigen::Index j = 0; j < kLanes; ++j) acc[j] += a[i + j] * b[i + j];
    T s = 0;
    for (Eigen::Index j = 0; j < kLanes; ++j) s += acc[j];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

/// out[c] += sum over rows of m(r, c), accumulated row by row.
template <typename T, typename M>
void add_col_sums(const M& m, T* out) {
    MapV<T> acc(out, m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) acc += m.row(r);
}

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const T* g, const T* b, LnCache<T>* cache) {
    const Eigen::Index n = x.rows(), h = x.cols();
    Mat<T> y(n, h);
    Mat<T> xhat(n, h);
    std::vector<T> rstd(n);
    CMapV<T> gv(g, h), bv(b, h);
    for (Eigen::Index r = 0; r < n; ++r) {
        const T* xr = x.data() + r * h;
        const T mu = sum_of(xr, h) / T(h);
        T* cr = xhat.data() + r * h;
        for (Eigen::Index i = 0; i < h; ++i) cr[i] = xr[i] - mu;
        const T var = dot_of(cr, cr, h) / T(h);
        const T rs = T(1) / std::sqrt(var + T(kLnEps));
        xhat.row(r) *= rs;
        rstd[r] = rs;
        y.row(r) = xhat.row(r).cwiseProduct(gv) + bv;
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

/// dx for y = g * xhat + b; accumulates dg and db.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LnCache<T>& c, const T* g, T* dg, T* db) {
    const Eigen::Index n = dy.rows(), h = dy.cols();
    CMapV<T> gv(g, h);
    MapV<T> dgv(dg, h);
    add_col_sums(dy, db);
    Mat<T> dx(n, h);
    std::vector<T> dxhat(h);
    for (Eigen::Index r = 0; r < n; ++r) {
        dgv += dy.row(r).cwiseProduct(c.xhat.row(r));
        MapV<T>(dxhat.data(), h) = dy.row(r).cwiseProduct(gv);
        const T m1 = sum_of(dxhat.data(), h) / T(h);
        const T m2 = dot_of(dxhat.data(), c.xhat.data() + r * h, h) / T(h);
        dx.row(r) = (MapV<T>(dxhat.data(), h).array() - m1 - c.xhat.row(r).array() * m2) * c.rstd[r];
    }
    return dx;
}

/// In-place exp using only the full-width packet routine; the tail is padded
/// into one extra packet. Each element's result then depends on its value
/// alone, never on its position relative to a packet boundary.
template <typename T>
void exp_in_place(T* p, Eigen::Index n) {
    namespace ei = Eigen::internal;
    using Packet = typename ei::packet_traits<T>::type;
    constexpr Eigen::Index W = ei::packet_traits<T>::size;
    Eigen::Index i = 0;
    for (; i + W <= n; i += W) ei::pstoreu(p + i, ei::pexp(ei::ploadu<Packet>(p + i)));
    if (i < n) {
        alignas(64) T tmp[W] = {};
        std::copy(p + i, p + n, tmp);
        ei::pstore(tmp, ei::pexp(ei::pload<Packet>(tmp)));
        std::copy(tmp, tmp + (n - i), p + i);
    }
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)
template <typename T>
constexpr T kGeluA = T(0.044715);

/// Tanh-approximated GELU written as x * sigmoid(2u), u = c (x + a x^3).
/// Returns the sigmoid factors s so the backward pass can reuse them.
template <typename T>
Mat<T> gelu_sigmoid(const Mat<T>& x) {
    Mat<T> s(x.rows(), x.cols());
    const T* xp = x.data();
    T* sp = s.data();
    const Eigen::Index n = x.size();
    for (Eigen::Index i = 0; i < n; ++i) sp[i] = T(-2) * kGeluC<T> * (xp[i] + kGeluA<T> * xp[i] * xp[i] * xp[i]);
    exp_in_place(sp, n);
    for (Eigen::Index i = 0; i < n; ++i) sp[i] = T(1) / (T(1) + sp[i]);
    return s;
}

/// d gelu / dx = s + x s (1 - s) 2c (1 + 3a x^2)
template <typename T>
Mat<T> gelu_grad(const Mat<T>& x, const Mat<T>& s) {
    auto a = x.array();
    auto sa = s.array();
    return (sa + a * sa * (T(1) - sa) * (T(2) * kGeluC<T>) * (T(1) + T(3) * kGeluA<T> * a.square())).matrix();
}

template <typename T>
void check_finite(const Mat<T>& x, int layer, const char* what) {
    if (!x.allFinite()) throw NumericError(layer, std::string("non-finite values in ") + what);
}

template <typename T>
struct BlockCache {
    LnCache<T> ln1;
    Mat<T> a;    // LN1 output
    Mat<T> qkv;  // [q | k | v]
    std::vector<T> probs;  // B x heads x 65 x 65
    Mat<T> ctx;
    LnCache<T> ln2;
    Mat<T> c;  // LN2 output
    Mat<T> pre;  // W1 input to gelu
    Mat<T> sig;  // sigmoid factor of gelu
    Mat<T> act;  // gelu output
};

template <typename T>
struct Tape {
    std::vector<BlockCache<T>> blocks;
    LnCache<T> lnf;
    Mat<T> z;  // final LN output at query positions
};

/// out (+)= in * w, one sample (`rows` rows) at a time so that the arithmetic
/// for a sample never depends on how many samples share the batch.
template <typename T, typename W>
void per_sample_product(Mat<T>& out, const Mat<T>& in, const W& w, Eigen::Index rows, bool accumulate) {
    if (!accumulate) out.resize(in.rows(), w.cols());
    for (Eigen::Index r = 0; r < in.rows(); r += rows) {
        if (accumulate)
            out.middleRows(r, rows).noalias() += in.middleRows(r, rows) * w;
        else
            out.middleRows(r, rows).noalias() = in.middleRows(r, rows) * w;
    }
}

template <typename T>
void add_bias(Mat<T>& m, const T* b) {
    m.rowwise() += CMapV<T>(b, m.cols());
}

template <typename T>
Mat<T> embed(const ModelState<T>& model, std::span<const std::uint8_t> inputs, std::size_t batch) {
    const Eigen::Index h = model.config.hidden_size;
    const auto& L = model.layout;
    Mat<T> x(static_cast<Eigen::Index>(batch) * kSeqLen, h);
    for (std::size_t b = 0; b < batch; ++b) {
        for (int t = 0; t < kSeqLen; ++t) {
            const T* src = t < kInputLen ? model.at(L.tok_emb + std::size_t(inputs[b * kInputLen + t]) * h)
                                         : model.at(L.query_emb + std::size_t(t - kInputLen) * h);
            x.row(b * kSeqLen + t) = CMapV<T>(src, h) + CMapV<T>(model.at(L.pos_emb + std::size_t(t) * h), h);
        }
    }
    return x;
}

/// Runs the network, filling `tape` when gradients will be needed.
template <typename T>
Logits<T> run_forward(const ModelState<T>& model, std::span<const std::uint8_t> inputs, Tape<T>* tape) {
    const ModelConfig& cfg = model.config;
    if (inputs.size() % kInputLen != 0) throw ConfigError("input length is not a multiple of 33");
    const std::size_t batch = inputs.size() / kInputLen;
    const Eigen::Index h = cfg.hidden_size, f = cfg.ffn_size, H = cfg.num_heads, dh = h / H;
    const Eigen::Index rows = static_cast<Eigen::Index>(batch) * kSeqLen;
    const T scale = T(1) / std::sqrt(T(dh));

    Mat<T> x = embed(model, inputs, batch);
    if (tape) tape->blocks.resize(model.layout.blocks.size());

    for (std::size_t l = 0; l < model.layout.blocks.size(); ++l) {
        const auto& B = model.layout.blocks[l];
        BlockCache<T> local;
        BlockCache<T>& c = tape ? tape->blocks[l] : local;

        c.a = layer_norm(x, model.at(B.ln1_g), model.at(B.ln1_b), tape ? &c.ln1 : nullptr);
        per_sample_product(c.qkv, c.a, CMapM<T>(model.at(B.wqkv), h, 3 * h), kSeqLen, false);
        add_bias(c.qkv, model.at(B.bqkv));

        c.probs.resize(batch * H * kSeqLen * kSeqLen);
        c.ctx.resize(rows, h);
        for (std::size_t b = 0; b < batch; ++b) {
            for (Eigen::Index hd = 0; hd < H; ++hd) {
                const T* base = c.qkv.data() + b * kSeqLen * 3 * h + hd * dh;
                CSMap<T> q(base, kSeqLen, dh, Stride(3 * h));
                CSMap<T> k(base + h, kSeqLen, dh, Stride(3 * h));
                CSMap<T> v(base + 2 * h, kSeqLen, dh, Stride(3 * h));
                MapM<T> p(c.probs.data() + (b * H + hd) * kSeqLen * kSeqLen, kSeqLen, kSeqLen);
                p.noalias() = (q * k.transpose()) * scale;
                for (Eigen::Index r = 0; r < kSeqLen; ++r) {
                    T* pr = p.data() + r * kSeqLen;
                    const T mx = p.row(r).maxCoeff();  // exact in any order
                    p.row(r).array() -= mx;
                    exp_in_place(pr, kSeqLen);
                    p.row(r) *= T(1) / sum_of(pr, kSeqLen);
                }
                c.ctx.block(b * kSeqLen, hd * dh, kSeqLen, dh).noalias() = p * v;
            }
        }
        per_sample_product(x, c.ctx, CMapM<T>(model.at(B.wo), h, h), kSeqLen, true);
        add_bias(x, model.at(B.bo));

        c.c = layer_norm(x, model.at(B.ln2_g), model.at(B.ln2_b), tape ? &c.ln2 : nullptr);
        per_sample_product(c.pre, c.c, CMapM<T>(model.at(B.w1), h, f), kSeqLen, false);
        add_bias(c.pre, model.at(B.b1));
        c.sig = gelu_sigmoid(c.pre);
        c.act = c.pre.cwiseProduct(c.sig);
        per_sample_product(x, c.act, CMapM<T>(model.at(B.w2), f, h), kSeqLen, true);
        add_bias(x, model.at(B.b2));
        check_finite(x, static_cast<int>(l), "block output");
    }

    Mat<T> xq(static_cast<Eigen::Index>(batch) * kOutputLen, h);
    for (std::size_t b = 0; b < batch; ++b)
        xq.middleRows(b * kOutputLen, kOutputLen) = x.middleRows(b * kSeqLen + kInputLen, kOutputLen);
    LnCache<T> lnf;
    Mat<T> z = layer_norm(xq, model.at(model.layout.lnf_g), model.at(model.layout.lnf_b), tape ? &lnf : nullptr);

    Logits<T> out;
    out.batch = batch;
    out.values.resize(batch * kOutputLen * kVocab);
    Mat<T> zw;
    per_sample_product(zw, z, CMapM<T>(model.at(model.layout.head_w), h, kVocab), kOutputLen, false);
    MapM<T> lg(out.values.data(), xq.rows(), kVocab);
    lg = zw;
    lg.rowwise() += CMapV<T>(model.at(model.layout.head_b), kVocab);
    if (!lg.allFinite()) throw NumericError(-1, "non-finite logits at the output head");

    if (tape) {
        tape->lnf = std::move(lnf);
        tape->z = std::move(z);
    }
    return out;
}

}  // namespace detail

template <typename T>
Logits<T> forward(const ModelState<T>& model, std::span<const std::uint8_t> inputs) {
    return detail::run_forward<T>(model, inputs, nullptr);
}

/// Mean categorical cross-entropy over every (row, position); the softmax is
/// max-subtracted. Also returns d(loss)/d(logits) when `dlogits` is non-null.
template <typename T>
double cross_entropy(const Logits<T>& logits, std::span<const std::uint8_t> labels, std::vector<T>* dlogits = nullptr) {
    const std::size_t n = logits.batch * kOutputLen;
    if (labels.size() != n) throw ConfigError("label count does not match logits");
    if (dlogits) dlogits->resize(logits.values.size());
    double total = 0;
    const T inv_n = T(1) / T(n);
    alignas(64) T e[kVocab];
    for (std::size_t r = 0; r < n; ++r) {
        const T* z = logits.values.data() + r * kVocab;
        const T mx = *std::max_element(z, z + kVocab);
        for (int v = 0; v < kVocab; ++v) e[v] = z[v] - mx;
        detail::exp_in_place(e, kVocab);
        const T sum = detail::sum_of(e, kVocab);
        total += static_cast<double>(mx + std::log(sum) - z[labels[r]]);
        if (dlogits) {
            T* d = dlogits->data() + r * kVocab;
            const T scale = inv_n / sum;
            for (int v = 0; v < kVocab; ++v) d[v] = e[v] * scale;
            d[labels[r]] -= inv_n;
        }
    }
    double loss = total / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError(-1, "non-finite loss");
    return loss;
}

template <typename T>
std::size_t correct_count(const Logits<T>& logits, std::span<const std::uint8_t> labels) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < logits.batch * kOutputLen; ++r) {
        const T* z = logits.values.data() + r * kVocab;
        if (std::max_element(z, z + kVocab) - z == labels[r]) ++hits;  // max_element returns the first maximum
    }
    return hits;
}

/// Fraction of positions whose argmax equals the label; ties go to the lowest byte.
template <typename T>
double per_byte_accuracy(const Logits<T>& logits, std::span<const std::uint8_t> labels) {
    const std::size_t n = logits.batch * kOutputLen;
    if (labels.size() != n) throw ConfigError("label count does not match logits");
    if (n == 0) return 0.0;
    return static_cast<double>(correct_count(logits, labels)) / static_cast<double>(n);
}

template <typename T>
struct LossAndGrads {
    double loss = 0;
    Logits<T> logits;
    std::vector<T> grads;
};

template <typename T>
LossAndGrads<T> loss_and_grads(const ModelState<T>& model, std::span<const std::uint8_t> inputs,
                               std::span<const std::uint8_t> labels) {
    using namespace detail;
    const ModelConfig& cfg = model.config;
    const auto& L = model.layout;
    const Eigen::Index h = cfg.hidden_size, f = cfg.ffn_size, H = cfg.num_heads, dh = h / H;
    const T scale = T(1) / std::sqrt(T(dh));

    Tape<T> tape;
    LossAndGrads<T> out;
    out.logits = run_forward(model, inputs, &tape);
    const std::size_t batch = out.logits.batch;
    const Eigen::Index rows = static_cast<Eigen::Index>(batch) * kSeqLen;
    std::vector<T> dlog;
    out.loss = cross_entropy(out.logits, labels, &dlog);

    out.grads.assign(L.total, T(0));
    std::vector<T>& g = out.grads;
    auto gm = [&](std::size_t off, Eigen::Index r, Eigen::Index c) { return MapM<T>(g.data() + off, r, c); };
    auto gv = [&](std::size_t off, Eigen::Index n) { return MapV<T>(g.data() + off, n); };

    // Head.
    CMapM<T> dl(dlog.data(), static_cast<Eigen::Index>(batch) * kOutputLen, kVocab);
    gm(L.head_w, h, kVocab).noalias() += tape.z.transpose() * dl;
    add_col_sums(dl, g.data() + L.head_b);
    Mat<T> dz = dl * CMapM<T>(model.at(L.head_w), h, kVocab).transpose();
    Mat<T> dxq = layer_norm_backward(dz, tape.lnf, model.at(L.lnf_g), g.data() + L.lnf_g, g.data() + L.lnf_b);

    Mat<T> dx = Mat<T>::Zero(rows, h);
    for (std::size_t b = 0; b < batch; ++b)
        dx.middleRows(b * kSeqLen + kInputLen, kOutputLen) = dxq.middleRows(b * kOutputLen, kOutputLen);

    for (std::size_t li = L.blocks.size(); li-- > 0;) {
        const auto& B = L.blocks[li];
        BlockCache<T>& c = tape.blocks[li];

        // FFN branch.
        gm(B.w2, f, h).noalias() += c.act.transpose() * dx;
        add_col_sums(dx, g.data() + B.b2);
        Mat<T> dpre = (dx * CMapM<T>(model.at(B.w2), f, h).transpose()).cwiseProduct(gelu_grad(c.pre, c.sig));
        gm(B.w1, h, f).noalias() += c.c.transpose() * dpre;
        add_col_sums(dpre, g.data() + B.b1);
        Mat<T> dc = dpre * CMapM<T>(model.at(B.w1), h, f).transpose();
        dx += layer_norm_backward(dc, c.ln2, model.at(B.ln2_g), g.data() + B.ln2_g, g.data() + B.ln2_b);

        // Attention branch.
        gm(B.wo, h, h).noalias() += c.ctx.transpose() * dx;
        add_col_sums(dx, g.data() + B.bo);
        Mat<T> dctx = dx * CMapM<T>(model.at(B.wo), h, h).transpose();
        Mat<T> dqkv(rows, 3 * h);
        Mat<T> dp(kSeqLen, kSeqLen);
        for (std::size_t b = 0; b < batch; ++b) {
            for (Eigen::Index hd = 0; hd < H; ++hd) {
                const std::size_t off = b * kSeqLen * 3 * h + hd * dh;
                CSMap<T> q(c.qkv.data() + off, kSeqLen, dh, Stride(3 * h));
                CSMap<T> k(c.qkv.data() + off + h, kSeqLen, dh, Stride(3 * h));
                CSMap<T> v(c.qkv.data() + off + 2 * h, kSeqLen, dh, Stride(3 * h));
                SMap<T> dq(dqkv.data() + off, kSeqLen, dh, Stride(3 * h));
                SMap<T> dk(dqkv.data() + off + h, kSeqLen, dh, Stride(3 * h));
                SMap<T> dv(dqkv.data() + off + 2 * h, kSeqLen, dh, Stride(3 * h));
                CMapM<T> p(c.probs.data() + (b * H + hd) * kSeqLen * kSeqLen, kSeqLen, kSeqLen);
                auto dout = dctx.block(b * kSeqLen, hd * dh, kSeqLen, dh);

                dv.noalias() = p.transpose() * dout;
                dp.noalias() = dout * v.transpose();
                for (Eigen::Index r = 0; r < kSeqLen; ++r) {
                    const T rowdot = dot_of(dp.data() + r * kSeqLen, p.data() + r * kSeqLen, kSeqLen);
                    dp.row(r) = (p.row(r).array() * (dp.row(r).array() - rowdot)) * scale;
                }
                dq.noalias() = dp * k;
                dk.noalias() = dp.transpose() * q;
            }
        }
        gm(B.wqkv, h, 3 * h).noalias() += c.a.transpose() * dqkv;
        add_col_sums(dqkv, g.data() + B.bqkv);
        Mat<T> da = dqkv * CMapM<T>(model.at(B.wqkv), h, 3 * h).transpose();
        dx += layer_norm_backward(da, c.ln1, model.at(B.ln1_g), g.data() + B.ln1_g, g.data() + B.ln1_b);
    }

    // Embeddings.
    for (std::size_t b = 0; b < batch; ++b) {
        for (int t = 0; t < kSeqLen; ++t) {
            auto row = dx.row(b * kSeqLen + t);
            if (t < kInputLen)
                gv(L.tok_emb + std::size_t(inputs[b * kInputLen + t]) * h, h) += row;
            else
                gv(L.query_emb + std::size_t(t - kInputLen) * h, h) += row;
            gv(L.pos_emb + std::size_t(t) * h, h) += row;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

enum class Scheduler { none, cosine };

inline std::string to_string(Scheduler s) { return s == Scheduler::cosine ? "cosine" : "none"; }

inline Scheduler scheduler_from_string(std::string_view s) {
    if (s == "none") return Scheduler::none;
    if (s == "cosine") return Scheduler::cosine;
    throw ConfigError("unknown scheduler '" + std::string(s) + "' (expected none or cosine)");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 64;
    int epochs = 300;
    Scheduler scheduler = Scheduler::none;
    std::uint64_t seed = 1;
    bool bias_correction = false;

    void validate() const {
        if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)");
        if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)");
        if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
        if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (epochs < 0) throw ConfigError("epochs must be non-negative");
    }
};

template <typename T>
struct OptimizerState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t step = 0;

    OptimizerState() = default;
    explicit OptimizerState(std::size_t n) : m(n, T(0)), v(n, T(0)) {}
};

/// One update of
///   m_t = b1 m_{t-1} + (1 - b1) g_t
///   v_t = b2 v_{t-1} + (1 - b2) g_t^2
///   theta_{t+1} = theta_t - lr m_t / (sqrt(v_t) + eps) - lr lambda theta_t
/// With bias_correction set, m_t and v_t are divided by (1 - b^t) before use.
/// Gradients are checked before anything is written.
template <typename T>
void adamw_step(std::vector<T>& params, std::span<const T> grads, OptimizerState<T>& state, const TrainConfig& cfg,
                double lr, const Layout* layout = nullptr) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ConfigError("optimizer shapes do not match parameters");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(static_cast<double>(grads[i])))
            throw NumericError(layout ? layout->layer_of(i) : -1, "non-finite gradient; step refused");

    const double b1 = cfg.beta1, b2 = cfg.beta2;
    ++state.step;
    double c1 = 1, c2 = 1;
    if (cfg.bias_correction) {
        c1 = 1 - std::pow(b1, static_cast<double>(state.step));
        c2 = 1 - std::pow(b2, static_cast<double>(state.step));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double m = b1 * state.m[i] + (1 - b1) * g;
        const double v = b2 * state.v[i] + (1 - b2) * g * g;
        state.m[i] = static_cast<T>(m);
        state.v[i] = static_cast<T>(v);
        const double theta = params[i];
        params[i] = static_cast<T>(theta - lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon) - lr * cfg.weight_decay * theta);
    }
}

template <typename T>
void adamw_step(ModelState<T>& model, std::span<const T> grads, OptimizerState<T>& state, const TrainConfig& cfg,
                double lr) {
    adamw_step(model.params, grads, state, cfg, lr, &model.layout);
}

template <typename T>
void adamw_step(ModelState<T>& model, std::span<const T> grads, OptimizerState<T>& state, const TrainConfig& cfg) {
    adamw_step(model, grads, state, cfg, cfg.learning_rate);
}

/// Constant for Scheduler::none. Cosine decays from lr at epoch 0 to lr/100 at
/// cfg.epochs and stays there:
///   lr_min + (lr - lr_min) (1 + cos(pi min(e, E) / E)) / 2
inline double lr_schedule(const TrainConfig& cfg, int epoch) {
    if (cfg.scheduler == Scheduler::none || cfg.epochs == 0) return cfg.learning_rate;
    const double lo = cfg.learning_rate / 100;
    const double frac = static_cast<double>(std::min(epoch, cfg.epochs)) / cfg.epochs;
    return lo + 0.5 * (cfg.learning_rate - lo) * (1 + std::cos(M_PI * frac));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   8   magic "ECLABCK1"
//   4   version (1)
//   4   scalar size in bytes (4 or 8)
//   4x4 hidden_size, num_layers, num_heads, ffn_size (int32)
//   8   model seed
//   8   parameter count P
//   8   optimizer step
//   P*s parameters, then P*s first moments, then P*s second moments
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'E', 'C', 'L', 'A', 'B', 'C', 'K', '1'};

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename V>
void put(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename V>
V get(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw FormatError("checkpoint is truncated");
    return v;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& model, const OptimizerState<T>& opt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 8);
    detail::put<std::uint32_t>(os, 1);
    detail::put<std::uint32_t>(os, sizeof(T));
    const ModelConfig& c = model.config;
    for (int v : {c.hidden_size, c.num_layers, c.num_heads, c.ffn_size}) detail::put<std::int32_t>(os, v);
    detail::put<std::uint64_t>(os, c.seed);
    detail::put<std::uint64_t>(os, model.params.size());
    detail::put<std::uint64_t>(os, opt.step);
    for (const auto* vec : {&model.params, &opt.m, &opt.v})
        os.write(reinterpret_cast<const char*>(vec->data()), static_cast<std::streamsize>(vec->size() * sizeof(T)));
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

template <typename T>
struct Checkpoint {
    ModelState<T> model;
    OptimizerState<T> optimizer;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint file");
    if (detail::get<std::uint32_t>(is) != 1) throw FormatError("unsupported checkpoint version");
    if (detail::get<std::uint32_t>(is) != sizeof(T)) throw FormatError("checkpoint scalar size mismatch");
    ModelConfig c;
    c.hidden_size = detail::get<std::int32_t>(is);
    c.num_layers = detail::get<std::int32_t>(is);
    c.num_heads = detail::get<std::int32_t>(is);
    c.ffn_size = detail::get<std::int32_t>(is);
    c.seed = detail::get<std::uint64_t>(is);
    c.validate();
    const auto n = detail::get<std::uint64_t>(is);
    if (n != parameter_count(c)) throw FormatError("checkpoint parameter count does not match its config");
    Checkpoint<T> ck{ModelState<T>(c), OptimizerState<T>(n)};
    ck.optimizer.step = detail::get<std::uint64_t>(is);
    for (auto* vec : {&ck.model.params, &ck.optimizer.m, &ck.optimizer.v}) {
        is.read(reinterpret_cast<char*>(vec->data()), static_cast<std::streamsize>(n * sizeof(T)));
        if (!is) throw FormatError("checkpoint is truncated");
    }
    return ck;
}

}  // namespace eclab::nn
