#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "skelact/common.hpp"
#include "skelact/features.hpp"
#include "skelact/maps.hpp"

namespace skelact::nn {

using Vec = std::vector<double>;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Vec softmax(const Vec& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Mean cross-entropy piece for one sample, evaluated as logsumexp(z) - z_y.
inline double cross_entropy_logits(const Vec& logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw ShapeError("cross_entropy_logits: label out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

// ---------------------------------------------------------------------------
// LSTM: gates (i, f, o, u) from one weight matrix over the stacked (x, h_prev)
// plus bias; c = i*u + f*c_prev; h = o*tanh(c).
// ---------------------------------------------------------------------------

struct LstmLayer {
    std::size_t in_dim = 0;
    std::size_t hidden = 0;
    Matrix w;  // (4H) x (in_dim + H), gate row order i, f, o, u
    Vec b;     // 4H
};

struct LstmModel {
    std::vector<LstmLayer> layers;
    Matrix fc_w;  // classes x top hidden
    Vec fc_b;
    int classes = 0;

    std::vector<Vec*> params() {
        std::vector<Vec*> out;
        for (auto& l : layers) {
            out.push_back(&l.w.a);
            out.push_back(&l.b);
        }
        out.push_back(&fc_w.a);
        out.push_back(&fc_b);
        return out;
    }
};

inline LstmModel make_lstm(std::size_t input_dim, std::size_t hidden, int layers, int classes,
                           Rng& rng) {
    if (layers < 1 || hidden == 0 || input_dim == 0 || classes < 1)
        throw ConfigError("make_lstm: bad dimensions");
    LstmModel m;
    m.classes = classes;
    std::size_t in = input_dim;
    for (int l = 0; l < layers; ++l) {
        LstmLayer layer;
        layer.in_dim = in;
        layer.hidden = hidden;
        layer.w = Matrix(4 * hidden, in + hidden);
        layer.b.assign(4 * hidden, 0.0);
        double bound = 1.0 / std::sqrt(static_cast<double>(in + hidden));
        for (double& v : layer.w.a) v = rng.uniform(-bound, bound);
        // Open forget gates at the start; everything else stays at zero.
        for (std::size_t i = hidden; i < 2 * hidden; ++i) layer.b[i] = 1.0;
        m.layers.push_back(std::move(layer));
        in = hidden;
    }
    m.fc_w = Matrix(static_cast<std::size_t>(classes), hidden);
    double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& v : m.fc_w.a) v = rng.uniform(-bound, bound);
    m.fc_b.assign(static_cast<std::size_t>(classes), 0.0);
    return m;
}

struct LstmCellCache {
    Vec xh;      // stacked (x, h_prev)
    Vec i, f, o, u;
    Vec c_prev, c, tanh_c;
};

// One cell step. Inputs are left untouched; the cache (when given) carries
// what the backward pass needs.
inline void lstm_cell_forward(const LstmLayer& layer, const Vec& x, const Vec& h_prev,
                              const Vec& c_prev, Vec& h_out, Vec& c_out,
                              LstmCellCache* cache = nullptr) {
    const std::size_t H = layer.hidden;
    if (x.size() != layer.in_dim || h_prev.size() != H || c_prev.size() != H)
        throw ShapeError("lstm_cell_forward: input dimensions do not match layer shapes");

    Vec xh(layer.in_dim + H);
    std::copy(x.begin(), x.end(), xh.begin());
    std::copy(h_prev.begin(), h_prev.end(), xh.begin() + static_cast<std::ptrdiff_t>(layer.in_dim));

    Vec z(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
        const double* wr = layer.w.a.data() + r * layer.w.cols;
        double acc = layer.b[r];
        for (std::size_t cidx = 0; cidx < xh.size(); ++cidx) acc += wr[cidx] * xh[cidx];
        z[r] = acc;
    }

    Vec i(H), f(H), o(H), u(H);
    for (std::size_t k = 0; k < H; ++k) {
        i[k] = sigmoid(z[k]);
        f[k] = sigmoid(z[H + k]);
        o[k] = sigmoid(z[2 * H + k]);
        u[k] = std::tanh(z[3 * H + k]);
    }

    h_out.resize(H);
    c_out.resize(H);
    Vec tanh_c(H);
    for (std::size_t k = 0; k < H; ++k) {
        c_out[k] = i[k] * u[k] + f[k] * c_prev[k];
        tanh_c[k] = std::tanh(c_out[k]);
        h_out[k] = o[k] * tanh_c[k];
    }

    if (cache) {
        cache->xh = std::move(xh);
        cache->i = std::move(i);
        cache->f = std::move(f);
        cache->o = std::move(o);
        cache->u = std::move(u);
        cache->c_prev = c_prev;
        cache->c = c_out;
        cache->tanh_c = std::move(tanh_c);
    }
}

struct LstmTape {
    // [t][layer]
    std::vector<std::vector<LstmCellCache>> cells;
    std::vector<std::vector<Vec>> dropped_h;  // post-dropout inter-layer inputs
    std::vector<std::vector<Vec>> drop_mask;  // empty when dropout off
    Vec top_h;                                // final step, top layer
    Vec probs;
};

// Unrolls the stacked layers over all feature rows (zero initial state) and
// maps the last top hidden state through the softmax head. Dropout is applied
// to the outputs of the lower layers only while training.
inline Vec lstm_forward(const FeatureMatrix& features, const LstmModel& model,
                        LstmTape* tape = nullptr, double dropout = 0.0, Rng* drop_rng = nullptr) {
    if (model.layers.empty()) throw ShapeError("lstm_forward: model has no layers");
    if (features.cols != model.layers.front().in_dim)
        throw ShapeError("lstm_forward: feature width " + std::to_string(features.cols) +
                         " does not match model input " +
                         std::to_string(model.layers.front().in_dim));
    const std::size_t T = features.rows;
    const std::size_t L = model.layers.size();
    if (T == 0) throw ShapeError("lstm_forward: empty feature matrix");
    const bool training = dropout > 0.0 && drop_rng != nullptr;

    std::vector<Vec> h(L), c(L);
    for (std::size_t l = 0; l < L; ++l) {
        h[l].assign(model.layers[l].hidden, 0.0);
        c[l].assign(model.layers[l].hidden, 0.0);
    }
    if (tape) {
        tape->cells.assign(T, std::vector<LstmCellCache>(L));
        tape->dropped_h.assign(T, std::vector<Vec>(L));
        tape->drop_mask.assign(T, std::vector<Vec>(L));
    }

    Vec x;
    for (std::size_t t = 0; t < T; ++t) {
        x.assign(features.data.begin() + static_cast<std::ptrdiff_t>(t * features.cols),
                 features.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * features.cols));
        for (std::size_t l = 0; l < L; ++l) {
            Vec h_new, c_new;
            lstm_cell_forward(model.layers[l], x, h[l], c[l], h_new, c_new,
                              tape ? &tape->cells[t][l] : nullptr);
            h[l] = std::move(h_new);
            c[l] = std::move(c_new);
            x = h[l];
            if (l + 1 < L && training) {
                Vec mask(x.size());
                double keep = 1.0 - dropout;
                for (std::size_t k = 0; k < x.size(); ++k) {
                    mask[k] = (drop_rng->uniform() < keep) ? 1.0 / keep : 0.0;
                    x[k] *= mask[k];
                }
                if (tape) tape->drop_mask[t][l] = std::move(mask);
            }
            if (tape) tape->dropped_h[t][l] = x;
        }
    }

    const Vec& top = h[L - 1];
    Vec logits(static_cast<std::size_t>(model.classes));
    for (std::size_t r = 0; r < logits.size(); ++r) {
        const double* wr = model.fc_w.a.data() + r * model.fc_w.cols;
        double acc = model.fc_b[r];
        for (std::size_t k = 0; k < top.size(); ++k) acc += wr[k] * top[k];
        logits[r] = acc;
    }
    Vec probs = softmax(logits);
    if (tape) {
        tape->top_h = top;
        tape->probs = probs;
    }
    return probs;
}

struct LstmGrads {
    std::vector<Matrix> w;
    std::vector<Vec> b;
    Matrix fc_w;
    Vec fc_b;

    explicit LstmGrads(const LstmModel& m) {
        for (const auto& l : m.layers) {
            w.emplace_back(l.w.rows, l.w.cols);
            b.emplace_back(l.b.size(), 0.0);
        }
        fc_w = Matrix(m.fc_w.rows, m.fc_w.cols);
        fc_b.assign(m.fc_b.size(), 0.0);
    }

    std::vector<Vec*> flat() {
        std::vector<Vec*> out;
        for (std::size_t l = 0; l < w.size(); ++l) {
            out.push_back(&w[l].a);
            out.push_back(&b[l]);
        }
        out.push_back(&fc_w.a);
        out.push_back(&fc_b);
        return out;
    }
};

// Backpropagation through time for one sample. `dloss` scales the
// cross-entropy gradient (1/batch for batch means). Gradients accumulate.
inline void lstm_backward(const FeatureMatrix& features, const LstmModel& model,
                          const LstmTape& tape, int label, double dloss, LstmGrads& grads) {
    const std::size_t T = features.rows;
    const std::size_t L = model.layers.size();

    Vec dlogits = tape.probs;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    for (double& v : dlogits) v *= dloss;

    std::vector<Vec> dh_next(L), dc_next(L);
    for (std::size_t l = 0; l < L; ++l) {
        dh_next[l].assign(model.layers[l].hidden, 0.0);
        dc_next[l].assign(model.layers[l].hidden, 0.0);
    }

    // Softmax head.
    for (std::size_t r = 0; r < dlogits.size(); ++r) {
        const double* wr = model.fc_w.a.data() + r * model.fc_w.cols;
        double* gw = grads.fc_w.a.data() + r * model.fc_w.cols;
        for (std::size_t k = 0; k < tape.top_h.size(); ++k) {
            gw[k] += dlogits[r] * tape.top_h[k];
            dh_next[L - 1][k] += wr[k] * dlogits[r];
        }
        grads.fc_b[r] += dlogits[r];
    }

    Vec dx_above;  // gradient flowing into layer l's output from layer l+1
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t l = L; l-- > 0;) {
            const LstmLayer& layer = model.layers[l];
            const LstmCellCache& cc = tape.cells[t][l];
            const std::size_t H = layer.hidden;

            Vec dh = dh_next[l];
            if (l + 1 < L) {
                // dx_above holds layer (l+1)'s input gradient at this step.
                const Vec& mask = tape.drop_mask[t][l];
                for (std::size_t k = 0; k < H; ++k)
                    dh[k] += mask.empty() ? dx_above[k] : dx_above[k] * mask[k];
            }

            Vec dz(4 * H);
            Vec dc(H);
            for (std::size_t k = 0; k < H; ++k) {
                double do_ = dh[k] * cc.tanh_c[k];
                dc[k] = dh[k] * cc.o[k] * (1.0 - cc.tanh_c[k] * cc.tanh_c[k]) + dc_next[l][k];
                double di = dc[k] * cc.u[k];
                double df = dc[k] * cc.c_prev[k];
                double du = dc[k] * cc.i[k];
                dz[k] = di * cc.i[k] * (1.0 - cc.i[k]);
                dz[H + k] = df * cc.f[k] * (1.0 - cc.f[k]);
                dz[2 * H + k] = do_ * cc.o[k] * (1.0 - cc.o[k]);
                dz[3 * H + k] = du * (1.0 - cc.u[k] * cc.u[k]);
                dc_next[l][k] = dc[k] * cc.f[k];
            }

            Vec dxh(cc.xh.size(), 0.0);
            Matrix& gw = grads.w[l];
            for (std::size_t r = 0; r < 4 * H; ++r) {
                const double* wr = layer.w.a.data() + r * layer.w.cols;
                double* gwr = gw.a.data() + r * layer.w.cols;
                double dzr = dz[r];
                for (std::size_t cidx = 0; cidx < dxh.size(); ++cidx) {
                    gwr[cidx] += dzr * cc.xh[cidx];
                    dxh[cidx] += wr[cidx] * dzr;
                }
                grads.b[l][r] += dzr;
            }

            for (std::size_t k = 0; k < H; ++k) dh_next[l][k] = dxh[layer.in_dim + k];
            if (l > 0) dx_above.assign(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(layer.in_dim));
        }
    }
}

// ---------------------------------------------------------------------------
// CNN: a small convolutional classifier. Layers run in list order on CHW
// tensors; FC layers flatten implicitly.
// ---------------------------------------------------------------------------

struct TensorShape {
    int c = 0, h = 0, w = 0;
    std::size_t count() const {
        return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
};

struct CnnLayer {
    enum class Kind { Conv, MaxPool, AvgPool, Relu, Dropout, Fc };
    Kind kind = Kind::Relu;
    int in_c = 0, out_c = 0, ksize = 0, stride = 1, pad = 0;  // conv
    int win = 0;                                              // pool window and stride
    int fc_in = 0, fc_out = 0;                                // fully connected
    double rate = 0.0;                                        // dropout
    Vec w, b;
};

struct CnnModel {
    TensorShape input;
    std::vector<CnnLayer> layers;
    int classes = 0;

    std::vector<Vec*> params() {
        std::vector<Vec*> out;
        for (auto& l : layers)
            if (!l.w.empty() || !l.b.empty()) {
                out.push_back(&l.w);
                out.push_back(&l.b);
            }
        return out;
    }
};

inline TensorShape cnn_layer_output(const CnnLayer& l, const TensorShape& in) {
    switch (l.kind) {
        case CnnLayer::Kind::Conv: {
            if (in.c != l.in_c) throw ShapeError("conv: channel mismatch");
            int oh = (in.h + 2 * l.pad - l.ksize) / l.stride + 1;
            int ow = (in.w + 2 * l.pad - l.ksize) / l.stride + 1;
            if (oh <= 0 || ow <= 0) throw ShapeError("conv: output collapses to zero");
            return {l.out_c, oh, ow};
        }
        case CnnLayer::Kind::MaxPool:
        case CnnLayer::Kind::AvgPool: {
            int oh = in.h / l.win, ow = in.w / l.win;
            if (oh <= 0 || ow <= 0) throw ShapeError("pool: output collapses to zero");
            return {in.c, oh, ow};
        }
        case CnnLayer::Kind::Relu:
        case CnnLayer::Kind::Dropout:
            return in;
        case CnnLayer::Kind::Fc: {
            if (static_cast<std::size_t>(l.fc_in) != in.count())
                throw ShapeError("fc: input size " + std::to_string(in.count()) +
                                 " does not match fc_in " + std::to_string(l.fc_in));
            return {l.fc_out, 1, 1};
        }
    }
    throw ShapeError("cnn_layer_output: unknown layer");
}

// The stand-in for the paper's CNN channel: three conv+pool blocks and two
// fully connected layers behind an initial stride-4 average pool, so the
// dimension chain still starts at the full raster size.
inline CnnModel make_default_cnn(int input_size, int classes, double dropout, Rng& rng) {
    CnnModel m;
    m.input = {3, input_size, input_size};
    m.classes = classes;
    TensorShape shape = m.input;

    // ReLU stack: sqrt(6/fan_in) bounds keep activation scale roughly unit
    // through the depth; the 1/sqrt(fan_in) scheme shrinks signals ~30x by
    // the logits and stalls training at these dataset sizes.
    auto push = [&](CnnLayer l) {
        if (l.kind == CnnLayer::Kind::Conv) {
            std::size_t fan_in = static_cast<std::size_t>(l.in_c) * l.ksize * l.ksize;
            l.w.resize(static_cast<std::size_t>(l.out_c) * fan_in);
            double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (double& v : l.w) v = rng.uniform(-bound, bound);
            l.b.assign(static_cast<std::size_t>(l.out_c), 0.0);
        } else if (l.kind == CnnLayer::Kind::Fc) {
            l.w.resize(static_cast<std::size_t>(l.fc_out) * l.fc_in);
            double bound = std::sqrt(6.0 / static_cast<double>(l.fc_in));
            for (double& v : l.w) v = rng.uniform(-bound, bound);
            l.b.assign(static_cast<std::size_t>(l.fc_out), 0.0);
        }
        shape = cnn_layer_output(l, shape);
        m.layers.push_back(std::move(l));
    };

    if (input_size >= 128) {
        CnnLayer down;
        down.kind = CnnLayer::Kind::AvgPool;
        down.win = 4;
        push(down);
    }
    int widths[3] = {8, 16, 32};
    for (int block = 0; block < 3; ++block) {
        CnnLayer conv;
        conv.kind = CnnLayer::Kind::Conv;
        conv.in_c = shape.c;
        conv.out_c = widths[block];
        conv.ksize = 3;
        conv.stride = 1;
        conv.pad = 1;
        push(conv);
        CnnLayer relu;
        relu.kind = CnnLayer::Kind::Relu;
        push(relu);
        CnnLayer pool;
        pool.kind = CnnLayer::Kind::MaxPool;
        pool.win = 2;
        push(pool);
    }
    CnnLayer drop1;
    drop1.kind = CnnLayer::Kind::Dropout;
    drop1.rate = dropout;
    push(drop1);
    CnnLayer fc1;
    fc1.kind = CnnLayer::Kind::Fc;
    fc1.fc_in = static_cast<int>(shape.count());
    fc1.fc_out = 64;
    push(fc1);
    CnnLayer relu;
    relu.kind = CnnLayer::Kind::Relu;
    push(relu);
    CnnLayer drop2;
    drop2.kind = CnnLayer::Kind::Dropout;
    drop2.rate = dropout;
    push(drop2);
    CnnLayer fc2;
    fc2.kind = CnnLayer::Kind::Fc;
    fc2.fc_in = 64;
    fc2.fc_out = classes;
    push(fc2);
    return m;
}

struct CnnTape {
    std::vector<Vec> acts;         // acts[0] = input, acts[i+1] = layer i output
    std::vector<TensorShape> shapes;
    std::vector<std::vector<int>> pool_argmax;  // per layer, empty unless maxpool
    std::vector<Vec> drop_mask;                 // per layer, empty unless dropout active
    Vec probs;
};

inline void cnn_layer_forward(const CnnLayer& l, const Vec& in, const TensorShape& ishape,
                              Vec& out, TensorShape& oshape, std::vector<int>* argmax,
                              Vec* mask, double dropout_scale, Rng* drop_rng) {
    oshape = cnn_layer_output(l, ishape);
    out.assign(oshape.count(), 0.0);
    switch (l.kind) {
        case CnnLayer::Kind::Conv: {
            const int ih = ishape.h, iw = ishape.w;
            const int oh = oshape.h, ow = oshape.w;
            for (int oc = 0; oc < l.out_c; ++oc) {
                const double* wbase =
                    l.w.data() + static_cast<std::size_t>(oc) * l.in_c * l.ksize * l.ksize;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double acc = l.b[static_cast<std::size_t>(oc)];
                        int base_y = oy * l.stride - l.pad;
                        int base_x = ox * l.stride - l.pad;
                        for (int ic = 0; ic < l.in_c; ++ic) {
                            const double* iplane =
                                in.data() + static_cast<std::size_t>(ic) * ih * iw;
                            const double* wplane =
                                wbase + static_cast<std::size_t>(ic) * l.ksize * l.ksize;
                            for (int ky = 0; ky < l.ksize; ++ky) {
                                int iy = base_y + ky;
                                if (iy < 0 || iy >= ih) continue;
                                for (int kx = 0; kx < l.ksize; ++kx) {
                                    int ix = base_x + kx;
                                    if (ix < 0 || ix >= iw) continue;
                                    acc += iplane[iy * iw + ix] * wplane[ky * l.ksize + kx];
                                }
                            }
                        }
                        out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
                    }
            }
            break;
        }
        case CnnLayer::Kind::MaxPool: {
            if (argmax) argmax->assign(oshape.count(), 0);
            for (int c = 0; c < ishape.c; ++c)
                for (int oy = 0; oy < oshape.h; ++oy)
                    for (int ox = 0; ox < oshape.w; ++ox) {
                        double best = -1e300;
                        int best_at = 0;
                        for (int ky = 0; ky < l.win; ++ky)
                            for (int kx = 0; kx < l.win; ++kx) {
                                int iy = oy * l.win + ky, ix = ox * l.win + kx;
                                int at = (c * ishape.h + iy) * ishape.w + ix;
                                if (in[static_cast<std::size_t>(at)] > best) {
                                    best = in[static_cast<std::size_t>(at)];
                                    best_at = at;
                                }
                            }
                        std::size_t o = (static_cast<std::size_t>(c) * oshape.h + oy) * oshape.w + ox;
                        out[o] = best;
                        if (argmax) (*argmax)[o] = best_at;
                    }
            break;
        }
        case CnnLayer::Kind::AvgPool: {
            double inv = 1.0 / (l.win * l.win);
            for (int c = 0; c < ishape.c; ++c)
                for (int oy = 0; oy < oshape.h; ++oy)
                    for (int ox = 0; ox < oshape.w; ++ox) {
                        double acc = 0.0;
                        for (int ky = 0; ky < l.win; ++ky)
                            for (int kx = 0; kx < l.win; ++kx) {
                                int iy = oy * l.win + ky, ix = ox * l.win + kx;
                                acc += in[(static_cast<std::size_t>(c) * ishape.h + iy) * ishape.w + ix];
                            }
                        out[(static_cast<std::size_t>(c) * oshape.h + oy) * oshape.w + ox] = acc * inv;
                    }
            break;
        }
        case CnnLayer::Kind::Relu:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
            break;
        case CnnLayer::Kind::Dropout: {
            bool active = drop_rng != nullptr && l.rate > 0.0 && dropout_scale > 0.0;
            if (!active) {
                out = in;
            } else {
                if (mask) mask->assign(in.size(), 0.0);
                double keep = 1.0 - l.rate;
                for (std::size_t i = 0; i < in.size(); ++i) {
                    double m = (drop_rng->uniform() < keep) ? 1.0 / keep : 0.0;
                    out[i] = in[i] * m;
                    if (mask) (*mask)[i] = m;
                }
            }
            break;
        }
        case CnnLayer::Kind::Fc: {
            for (int r = 0; r < l.fc_out; ++r) {
                const double* wr = l.w.data() + static_cast<std::size_t>(r) * l.fc_in;
                double acc = l.b[static_cast<std::size_t>(r)];
                for (int k = 0; k < l.fc_in; ++k) acc += wr[k] * in[static_cast<std::size_t>(k)];
                out[static_cast<std::size_t>(r)] = acc;
            }
            break;
        }
    }
}

inline Vec cnn_forward(const Vec& image, const CnnModel& model, CnnTape* tape = nullptr,
                       bool training = false, Rng* drop_rng = nullptr) {
    if (image.size() != model.input.count())
        throw ShapeError("cnn_forward: image size does not match model input");
    Vec cur = image;
    TensorShape shape = model.input;
    if (tape) {
        tape->acts.clear();
        tape->shapes.clear();
        tape->pool_argmax.assign(model.layers.size(), {});
        tape->drop_mask.assign(model.layers.size(), {});
        tape->acts.push_back(cur);
        tape->shapes.push_back(shape);
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Vec next;
        TensorShape nshape;
        cnn_layer_forward(model.layers[i], cur, shape, next, nshape,
                          tape ? &tape->pool_argmax[i] : nullptr,
                          tape ? &tape->drop_mask[i] : nullptr, training ? 1.0 : 0.0,
                          training ? drop_rng : nullptr);
        cur = std::move(next);
        shape = nshape;
        if (tape) {
            tape->acts.push_back(cur);
            tape->shapes.push_back(shape);
        }
    }
    if (static_cast<int>(cur.size()) != model.classes)
        throw ShapeError("cnn_forward: final layer width does not match class count");
    Vec probs = softmax(cur);
    if (tape) tape->probs = probs;
    return probs;
}

struct CnnGrads {
    std::vector<Vec> w, b;

    explicit CnnGrads(const CnnModel& m) {
        for (const auto& l : m.layers) {
            w.emplace_back(l.w.size(), 0.0);
            b.emplace_back(l.b.size(), 0.0);
        }
    }

    std::vector<Vec*> flat(const CnnModel& m) {
        std::vector<Vec*> out;
        for (std::size_t i = 0; i < m.layers.size(); ++i)
            if (!m.layers[i].w.empty() || !m.layers[i].b.empty()) {
                out.push_back(&w[i]);
                out.push_back(&b[i]);
            }
        return out;
    }
};

inline void cnn_backward(const CnnModel& model, const CnnTape& tape, int label, double dloss,
                         CnnGrads& grads) {
    Vec delta = tape.probs;
    delta[static_cast<std::size_t>(label)] -= 1.0;
    for (double& v : delta) v *= dloss;

    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const CnnLayer& l = model.layers[li];
        const Vec& in = tape.acts[li];
        const TensorShape& ishape = tape.shapes[li];
        const TensorShape& oshape = tape.shapes[li + 1];
        Vec din(in.size(), 0.0);
        switch (l.kind) {
            case CnnLayer::Kind::Conv: {
                const int ih = ishape.h, iw = ishape.w;
                const int oh = oshape.h, ow = oshape.w;
                for (int oc = 0; oc < l.out_c; ++oc) {
                    const double* wbase =
                        l.w.data() + static_cast<std::size_t>(oc) * l.in_c * l.ksize * l.ksize;
                    double* gwbase =
                        grads.w[li].data() + static_cast<std::size_t>(oc) * l.in_c * l.ksize * l.ksize;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            double d = delta[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
                            if (d == 0.0) continue;
                            grads.b[li][static_cast<std::size_t>(oc)] += d;
                            int base_y = oy * l.stride - l.pad;
                            int base_x = ox * l.stride - l.pad;
                            for (int ic = 0; ic < l.in_c; ++ic) {
                                const double* iplane =
                                    in.data() + static_cast<std::size_t>(ic) * ih * iw;
                                double* dplane = din.data() + static_cast<std::size_t>(ic) * ih * iw;
                                const double* wplane =
                                    wbase + static_cast<std::size_t>(ic) * l.ksize * l.ksize;
                                double* gwplane =
                                    gwbase + static_cast<std::size_t>(ic) * l.ksize * l.ksize;
                                for (int ky = 0; ky < l.ksize; ++ky) {
                                    int iy = base_y + ky;
                                    if (iy < 0 || iy >= ih) continue;
                                    for (int kx = 0; kx < l.ksize; ++kx) {
                                        int ix = base_x + kx;
                                        if (ix < 0 || ix >= iw) continue;
                                        gwplane[ky * l.ksize + kx] += d * iplane[iy * iw + ix];
                                        dplane[iy * iw + ix] += d * wplane[ky * l.ksize + kx];
                                    }
                                }
                            }
                        }
                }
                break;
            }
            case CnnLayer::Kind::MaxPool: {
                const auto& argmax = tape.pool_argmax[li];
                for (std::size_t o = 0; o < delta.size(); ++o)
                    din[static_cast<std::size_t>(argmax[o])] += delta[o];
                break;
            }
            case CnnLayer::Kind::AvgPool: {
                double inv = 1.0 / (l.win * l.win);
                for (int c = 0; c < ishape.c; ++c)
                    for (int oy = 0; oy < oshape.h; ++oy)
                        for (int ox = 0; ox < oshape.w; ++ox) {
                            double d =
                                delta[(static_cast<std::size_t>(c) * oshape.h + oy) * oshape.w + ox] * inv;
                            for (int ky = 0; ky < l.win; ++ky)
                                for (int kx = 0; kx < l.win; ++kx) {
                                    int iy = oy * l.win + ky, ix = ox * l.win + kx;
                                    din[(static_cast<std::size_t>(c) * ishape.h + iy) * ishape.w + ix] += d;
                                }
                        }
                break;
            }
            case CnnLayer::Kind::Relu:
                for (std::size_t i = 0; i < in.size(); ++i) din[i] = in[i] > 0.0 ? delta[i] : 0.0;
                break;
            case CnnLayer::Kind::Dropout: {
                const Vec& mask = tape.drop_mask[li];
                if (mask.empty())
                    din = delta;
                else
                    for (std::size_t i = 0; i < in.size(); ++i) din[i] = delta[i] * mask[i];
                break;
            }
            case CnnLayer::Kind::Fc: {
                for (int r = 0; r < l.fc_out; ++r) {
                    double d = delta[static_cast<std::size_t>(r)];
                    const double* wr = l.w.data() + static_cast<std::size_t>(r) * l.fc_in;
                    double* gwr = grads.w[li].data() + static_cast<std::size_t>(r) * l.fc_in;
                    grads.b[li][static_cast<std::size_t>(r)] += d;
                    for (int k = 0; k < l.fc_in; ++k) {
                        gwr[k] += d * in[static_cast<std::size_t>(k)];
                        din[static_cast<std::size_t>(k)] += d * wr[k];
                    }
                }
                break;
            }
        }
        delta = std::move(din);
    }
}

// Letterboxes a texture map into the model raster and lays it out CHW with
// values scaled to [-0.5, 0.5].
inline Vec image_from_map(const TextureMap& map, int input_size) {
    TextureMap boxed = (map.width == input_size && map.height == input_size)
                           ? map
                           : letterbox(map, input_size);
    Vec out(3 * static_cast<std::size_t>(input_size) * static_cast<std::size_t>(input_size));
    std::size_t plane = static_cast<std::size_t>(input_size) * static_cast<std::size_t>(input_size);
    for (int y = 0; y < input_size; ++y)
        for (int x = 0; x < input_size; ++x) {
            std::size_t p = (static_cast<std::size_t>(y) * input_size + x);
            for (int c = 0; c < 3; ++c)
                out[static_cast<std::size_t>(c) * plane + p] =
                    boxed.pixels[p * 3 + static_cast<std::size_t>(c)] / 255.0 - 0.5;
        }
    return out;
}

inline Vec cnn_forward(const TextureMap& map, const CnnModel& model) {
    return cnn_forward(image_from_map(map, model.input.h), model);
}

// ---------------------------------------------------------------------------
// Optimizers and the training loop.
// ---------------------------------------------------------------------------

enum class Optimizer { Sgd, Rmsprop };

struct TrainConfig {
    Optimizer optimizer = Optimizer::Rmsprop;
    double learning_rate = 1e-3;
    double momentum = 0.0;  // used by SGD only
    int epochs = 100;
    int batch_size = 16;
    double dropout = 0.5;
    std::uint64_t seed = 0;
    int time_steps = 20;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.learning_rate < 0.0 || !std::isfinite(cfg.learning_rate))
        throw ConfigError("train: learning rate must be non-negative");
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("train: bad epochs or batch size");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("train: dropout must be in [0, 1)");
}

// Parameter updates over a flat list of tensors. RMSprop keeps the usual
// decay-0.9 squared-gradient cache; with a zero gradient the update is zero.
struct OptimizerState {
    Optimizer kind = Optimizer::Sgd;
    double lr = 0.0;
    double momentum = 0.0;
    double decay = 0.9;
    double eps = 1e-8;
    std::vector<Vec> cache;

    void init(Optimizer k, const TrainConfig& cfg, const std::vector<Vec*>& params) {
        kind = k;
        lr = cfg.learning_rate;
        momentum = cfg.momentum;
        cache.clear();
        for (const Vec* p : params) cache.emplace_back(p->size(), 0.0);
    }

    void step(const std::vector<Vec*>& params, const std::vector<Vec*>& grads) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            Vec& p = *params[i];
            const Vec& g = *grads[i];
            Vec& st = cache[i];
            if (kind == Optimizer::Sgd) {
                if (momentum > 0.0) {
                    for (std::size_t k = 0; k < p.size(); ++k) {
                        st[k] = momentum * st[k] + g[k];
                        p[k] -= lr * st[k];
                    }
                } else {
                    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
                }
            } else {
                for (std::size_t k = 0; k < p.size(); ++k) {
                    st[k] = decay * st[k] + (1.0 - decay) * g[k] * g[k];
                    p[k] -= lr * g[k] / (std::sqrt(st[k]) + eps);
                }
            }
        }
    }
};

struct TrainResult {
    std::vector<double> loss_history;  // per-epoch mean cross-entropy
};

namespace detail {

inline void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(i))]);
}

inline double max_abs(const std::vector<Vec*>& grads) {
    double m = 0.0;
    for (const Vec* g : grads)
        for (double v : *g) m = std::max(m, std::abs(v));
    return m;
}

[[noreturn]] inline void abort_non_finite(const char* what, int epoch, std::size_t batch,
                                          double max_grad) {
    throw TrainError(std::string(what) + ": non-finite loss at epoch " + std::to_string(epoch) +
                     ", batch " + std::to_string(batch) +
                     ", max |grad| = " + std::to_string(max_grad));
}

}  // namespace detail

inline TrainResult train_lstm(LstmModel& model, const std::vector<FeatureMatrix>& inputs,
                              const std::vector<int>& labels, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (inputs.empty() || inputs.size() != labels.size())
        throw ConfigError("train_lstm: dataset empty or label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= model.classes) throw ConfigError("train_lstm: label out of range");

    Rng order_rng(derive_seed(cfg.seed, "shuffle"));
    Rng drop_rng(derive_seed(cfg.seed, "dropout"));
    OptimizerState opt;
    auto params = model.params();
    opt.init(cfg.optimizer, cfg, params);

    std::vector<std::size_t> idx(inputs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    TrainResult result;
    LstmGrads grads(model);
    auto grad_ptrs = grads.flat();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle(idx, order_rng);
        double epoch_loss = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            std::size_t end = std::min(idx.size(), at + static_cast<std::size_t>(cfg.batch_size));
            double inv = 1.0 / static_cast<double>(end - at);
            for (Vec* g : grad_ptrs) std::fill(g->begin(), g->end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t s = at; s < end; ++s) {
                const FeatureMatrix& fm = inputs[idx[s]];
                LstmTape tape;
                lstm_forward(fm, model, &tape, cfg.dropout, cfg.dropout > 0.0 ? &drop_rng : nullptr);
                double p = tape.probs[static_cast<std::size_t>(labels[idx[s]])];
                batch_loss += -std::log(std::max(p, 1e-300)) * inv;
                lstm_backward(fm, model, tape, labels[idx[s]], inv, grads);
            }
            if (!std::isfinite(batch_loss))
                detail::abort_non_finite("train_lstm", epoch, batch_no, detail::max_abs(grad_ptrs));
            opt.step(params, grad_ptrs);
            epoch_loss += batch_loss * static_cast<double>(end - at);
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(idx.size()));
    }
    return result;
}

// The provider form lets callers keep images in a compact encoding and
// materialize doubles per use.
inline TrainResult train_cnn(CnnModel& model, std::size_t count,
                             const std::function<Vec(std::size_t)>& image_at,
                             const std::vector<int>& labels, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (count == 0 || count != labels.size())
        throw ConfigError("train_cnn: dataset empty or label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= model.classes) throw ConfigError("train_cnn: label out of range");

    Rng order_rng(derive_seed(cfg.seed, "shuffle"));
    Rng drop_rng(derive_seed(cfg.seed, "dropout"));
    OptimizerState opt;
    auto params = model.params();
    opt.init(cfg.optimizer, cfg, params);

    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    TrainResult result;
    CnnGrads grads(model);
    auto grad_ptrs = grads.flat(model);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle(idx, order_rng);
        double epoch_loss = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            std::size_t end = std::min(idx.size(), at + static_cast<std::size_t>(cfg.batch_size));
            double inv = 1.0 / static_cast<double>(end - at);
            for (Vec* g : grad_ptrs) std::fill(g->begin(), g->end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t s = at; s < end; ++s) {
                CnnTape tape;
                Vec image = image_at(idx[s]);
                cnn_forward(image, model, &tape, cfg.dropout > 0.0, &drop_rng);
                double p = tape.probs[static_cast<std::size_t>(labels[idx[s]])];
                batch_loss += -std::log(std::max(p, 1e-300)) * inv;
                cnn_backward(model, tape, labels[idx[s]], inv, grads);
            }
            if (!std::isfinite(batch_loss))
                detail::abort_non_finite("train_cnn", epoch, batch_no, detail::max_abs(grad_ptrs));
            opt.step(params, grad_ptrs);
            epoch_loss += batch_loss * static_cast<double>(end - at);
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(idx.size()));
    }
    return result;
}

inline TrainResult train_cnn(CnnModel& model, const std::vector<Vec>& images,
                             const std::vector<int>& labels, const TrainConfig& cfg) {
    return train_cnn(
        model, images.size(), [&](std::size_t i) { return images[i]; }, labels, cfg);
}

// ---------------------------------------------------------------------------
// Finite-difference verification. Every parameter is perturbed by +-eps and
// the analytic gradient compared against the central difference.
// ---------------------------------------------------------------------------

inline constexpr double kGradCheckEps = 1e-5;

inline double gradient_rel_error(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

template <class LossFn>
inline double max_grad_check_error(const std::vector<Vec*>& params,
                                   const std::vector<Vec*>& analytic, LossFn&& loss) {
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Vec& tensor = *params[p];
        for (std::size_t k = 0; k < tensor.size(); ++k) {
            double keep = tensor[k];
            tensor[k] = keep + kGradCheckEps;
            double up = loss();
            tensor[k] = keep - kGradCheckEps;
            double down = loss();
            tensor[k] = keep;
            double numeric = (up - down) / (2.0 * kGradCheckEps);
            worst = std::max(worst, gradient_rel_error((*analytic[p])[k], numeric));
        }
    }
    return worst;
}

enum class ModelKind { Lstm, Cnn };

// Runs the check on a small seeded fixture and returns the max relative error.
inline double gradient_check(ModelKind kind, std::uint64_t seed) {
    Rng rng(seed);
    if (kind == ModelKind::Lstm) {
        const std::size_t D = 5, H = 4, T = 3;
        const int L = 3, C = 3, N = 3;
        LstmModel model = make_lstm(D, H, L, C, rng);
        std::vector<FeatureMatrix> batch;
        std::vector<int> labels;
        for (int s = 0; s < N; ++s) {
            FeatureMatrix fm;
            fm.rows = T;
            fm.cols = D;
            fm.data.resize(T * D);
            for (double& v : fm.data) v = rng.uniform(-1.0, 1.0);
            batch.push_back(std::move(fm));
            labels.push_back(static_cast<int>(rng.uniform_int(C)));
        }
        LstmGrads grads(model);
        double inv = 1.0 / N;
        for (int s = 0; s < N; ++s) {
            LstmTape tape;
            lstm_forward(batch[static_cast<std::size_t>(s)], model, &tape);
            lstm_backward(batch[static_cast<std::size_t>(s)], model, tape,
                          labels[static_cast<std::size_t>(s)], inv, grads);
        }
        auto loss = [&] {
            double acc = 0.0;
            for (int s = 0; s < N; ++s) {
                Vec p = lstm_forward(batch[static_cast<std::size_t>(s)], model);
                acc += -std::log(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)])]) * inv;
            }
            return acc;
        };
        return max_grad_check_error(model.params(), grads.flat(), loss);
    }

    // CNN fixture: 12x12 input through every layer kind.
    const int size = 12, C = 3, N = 2;
    CnnModel model;
    model.input = {3, size, size};
    model.classes = C;
    TensorShape shape = model.input;
    auto push = [&](CnnLayer l) {
        if (l.kind == CnnLayer::Kind::Conv) {
            std::size_t fan_in = static_cast<std::size_t>(l.in_c) * l.ksize * l.ksize;
            l.w.resize(static_cast<std::size_t>(l.out_c) * fan_in);
            double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : l.w) v = rng.uniform(-bound, bound);
            l.b.resize(static_cast<std::size_t>(l.out_c));
            for (double& v : l.b) v = rng.uniform(-0.1, 0.1);
        } else if (l.kind == CnnLayer::Kind::Fc) {
            l.w.resize(static_cast<std::size_t>(l.fc_out) * l.fc_in);
            double bound = 1.0 / std::sqrt(static_cast<double>(l.fc_in));
            for (double& v : l.w) v = rng.uniform(-bound, bound);
            l.b.resize(static_cast<std::size_t>(l.fc_out));
            for (double& v : l.b) v = rng.uniform(-0.1, 0.1);
        }
        shape = cnn_layer_output(l, shape);
        model.layers.push_back(std::move(l));
    };
    {
        CnnLayer conv;
        conv.kind = CnnLayer::Kind::Conv;
        conv.in_c = 3;
        conv.out_c = 4;
        conv.ksize = 3;
        conv.stride = 1;
        conv.pad = 1;
        push(conv);
        CnnLayer relu;
        relu.kind = CnnLayer::Kind::Relu;
        push(relu);
        CnnLayer pool;
        pool.kind = CnnLayer::Kind::MaxPool;
        pool.win = 2;
        push(pool);
        CnnLayer avg;
        avg.kind = CnnLayer::Kind::AvgPool;
        avg.win = 2;
        push(avg);
        CnnLayer fc1;
        fc1.kind = CnnLayer::Kind::Fc;
        fc1.fc_in = static_cast<int>(shape.count());
        fc1.fc_out = 8;
        push(fc1);
        CnnLayer relu2;
        relu2.kind = CnnLayer::Kind::Relu;
        push(relu2);
        CnnLayer fc2;
        fc2.kind = CnnLayer::Kind::Fc;
        fc2.fc_in = 8;
        fc2.fc_out = C;
        push(fc2);
    }
    std::vector<Vec> images;
    std::vector<int> labels;
    for (int s = 0; s < N; ++s) {
        Vec img(model.input.count());
        for (double& v : img) v = rng.uniform(-0.5, 0.5);
        images.push_back(std::move(img));
        labels.push_back(static_cast<int>(rng.uniform_int(C)));
    }
    CnnGrads grads(model);
    double inv = 1.0 / N;
    for (int s = 0; s < N; ++s) {
        CnnTape tape;
        cnn_forward(images[static_cast<std::size_t>(s)], model, &tape);
        cnn_backward(model, tape, labels[static_cast<std::size_t>(s)], inv, grads);
    }
    auto loss = [&] {
        double acc = 0.0;
        for (int s = 0; s < N; ++s) {
            Vec p = cnn_forward(images[static_cast<std::size_t>(s)], model);
            acc += -std::log(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)])]) * inv;
        }
        return acc;
    };
    return max_grad_check_error(model.params(), grads.flat(model), loss);
}

}  // namespace skelact::nn
