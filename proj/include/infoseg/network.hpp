#pragma once

#include "infoseg/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace infoseg {

/// Feature extractor configuration. Block A is four 3x3 conv stages with
/// strides 1,2,1,2 (hence downsampling 4); Block B adds two strided 3x3
/// convs and a global average pool; Block C is a residual pair of
/// pointwise convs followed by a projection to feature_dim; Block D is
/// one independent linear map per class.
struct NetworkConfig {
    int input_channels = 3;
    int feature_dim = 1024;  // P
    int num_classes = 2;     // K
    int downsampling = 4;    // d, fixed by Block A's strides
    std::array<int, 4> block_a_widths{64, 128, 256, 512};
    std::array<int, 2> block_b_widths{512, 512};
    std::uint64_t init_seed = 0;

    void validate() const {
        if (num_classes < 1) throw ConfigError("NetworkConfig: num_classes must be >= 1");
        if (feature_dim < num_classes)
            throw ConfigError("NetworkConfig: feature_dim must be >= num_classes");
        if (downsampling != 4)
            throw ConfigError("NetworkConfig: this architecture realizes downsampling 4");
        for (int w : block_a_widths)
            if (w < 1) throw ConfigError("NetworkConfig: invalid Block A width");
        for (int w : block_b_widths)
            if (w < 1) throw ConfigError("NetworkConfig: invalid Block B width");
    }
};

/// Receptive field of a stack of convolutions via the standard
/// recurrence r <- r + (k - 1) * prod(earlier strides).
inline int receptive_field(std::span<const std::pair<int, int>> kernel_stride) {
    int r = 1, jump = 1;
    for (auto [k, s] : kernel_stride) {
        r += (k - 1) * jump;
        jump *= s;
    }
    return r;
}

namespace detail {

template <class Scalar>
struct ConvCache {
    MatX<Scalar> patches;  // (ho*wo) x (cin*k*k)
    int h = 0, w = 0, ho = 0, wo = 0;
};

template <class Scalar>
struct NormCache {
    MatX<Scalar> xhat;
    VecX<Scalar> inv_std;
};

struct ConvSpec {
    int cin, cout, k, stride;
    Eigen::Index w_off, b_off;
    Eigen::Index weight_size() const { return Eigen::Index(cin) * k * k * cout; }
};

struct NormSpec {
    int channels;
    Eigen::Index g_off, b_off;
};

struct LinearSpec {
    int in, out;
    Eigen::Index w_off, b_off;
};

inline void same_padding(int n, int k, int stride, int* out, int* pad_lo) {
    *out = (n + stride - 1) / stride;
    int total = std::max((*out - 1) * stride + k - n, 0);
    *pad_lo = total / 2;
}

template <class Scalar>
MatX<Scalar> im2col(const MatX<Scalar>& x, int h, int w, int cin, int k, int stride,
                    int* ho_out, int* wo_out) {
    int ho, wo, pad_y, pad_x;
    same_padding(h, k, stride, &ho, &pad_y);
    same_padding(w, k, stride, &wo, &pad_x);
    MatX<Scalar> patches = MatX<Scalar>::Zero(Eigen::Index(ho) * wo, Eigen::Index(cin) * k * k);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                Eigen::Index col = (Eigen::Index(c) * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad_y;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad_x;
                        if (ix < 0 || ix >= w) continue;
                        patches(Eigen::Index(oy) * wo + ox, col) = x(Eigen::Index(iy) * w + ix, c);
                    }
                }
            }
    *ho_out = ho;
    *wo_out = wo;
    return patches;
}

template <class Scalar>
MatX<Scalar> col2im(const MatX<Scalar>& dpatches, int h, int w, int cin, int k, int stride,
                    int ho, int wo) {
    int tmp, pad_y, pad_x;
    same_padding(h, k, stride, &tmp, &pad_y);
    same_padding(w, k, stride, &tmp, &pad_x);
    MatX<Scalar> dx = MatX<Scalar>::Zero(Eigen::Index(h) * w, cin);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                Eigen::Index col = (Eigen::Index(c) * k + ky) * k + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad_y;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad_x;
                        if (ix < 0 || ix >= w) continue;
                        dx(Eigen::Index(iy) * w + ix, c) += dpatches(Eigen::Index(oy) * wo + ox, col);
                    }
                }
            }
    return dx;
}

constexpr double kNormEps = 1e-5;

}  // namespace detail

/// Fig.-3-style feature extractor with analytic backpropagation over a
/// flat parameter vector. All state lives in the caller-owned parameter
/// vector; forward is pure given (image, params).
template <class Scalar>
class Network {
    using Conv = detail::ConvSpec;
    using Norm = detail::NormSpec;
    using Linear = detail::LinearSpec;

public:
    explicit Network(NetworkConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        Eigen::Index off = 0;
        auto add_conv = [&](int cin, int cout, int k, int stride) {
            Conv c{cin, cout, k, stride, off, 0};
            off += c.weight_size();
            c.b_off = off;
            off += cout;
            return c;
        };
        auto add_norm = [&](int channels) {
            Norm n{channels, off, off + channels};
            off += 2 * channels;
            return n;
        };
        const auto& wa = cfg_.block_a_widths;
        const auto& wb = cfg_.block_b_widths;
        const int strides[4] = {1, 2, 1, 2};
        int cin = cfg_.input_channels;
        for (int s = 0; s < 4; ++s) {
            a_conv_[s] = add_conv(cin, wa[s], 3, strides[s]);
            a_norm_[s] = add_norm(wa[s]);
            cin = wa[s];
        }
        lc1_ = add_conv(wa[3], wa[3], 1, 1);
        lc2_ = add_conv(wa[3], wa[3], 1, 1);
        lc3_ = add_conv(wa[3], cfg_.feature_dim, 1, 1);
        b_conv_[0] = add_conv(wa[3], wb[0], 3, 2);
        b_norm_[0] = add_norm(wb[0]);
        b_conv_[1] = add_conv(wb[0], wb[1], 3, 2);
        b_norm_[1] = add_norm(wb[1]);
        gc1_ = add_conv(wb[1], wb[1], 1, 1);
        gc2_ = add_conv(wb[1], wb[1], 1, 1);
        gc3_ = add_conv(wb[1], cfg_.feature_dim, 1, 1);
        heads_.resize(cfg_.num_classes);
        for (auto& head : heads_) {
            head = Linear{cfg_.feature_dim, cfg_.feature_dim, off, 0};
            off += Eigen::Index(cfg_.feature_dim) * cfg_.feature_dim;
            head.b_off = off;
            off += cfg_.feature_dim;
        }
        param_count_ = off;
    }

    const NetworkConfig& config() const { return cfg_; }
    Eigen::Index param_count() const { return param_count_; }

    /// Fan-in scaled random initialization, deterministic in init_seed.
    VecX<Scalar> init_params() const {
        VecX<Scalar> p = VecX<Scalar>::Zero(param_count_);
        std::mt19937_64 rng(cfg_.init_seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto fill_conv = [&](const Conv& c) {
            double scale = std::sqrt(2.0 / (double(c.cin) * c.k * c.k));
            for (Eigen::Index i = 0; i < c.weight_size(); ++i)
                p[c.w_off + i] = Scalar(gauss(rng) * scale);
        };
        auto fill_linear = [&](const Linear& l) {
            double scale = std::sqrt(2.0 / double(l.in));
            for (Eigen::Index i = 0; i < Eigen::Index(l.in) * l.out; ++i)
                p[l.w_off + i] = Scalar(gauss(rng) * scale);
        };
        auto fill_norm = [&](const Norm& n) {
            p.segment(n.g_off, n.channels).setOnes();
        };
        for (int s = 0; s < 4; ++s) {
            fill_conv(a_conv_[s]);
            fill_norm(a_norm_[s]);
        }
        fill_conv(lc1_);
        fill_conv(lc2_);
        fill_conv(lc3_);
        for (int s = 0; s < 2; ++s) {
            fill_conv(b_conv_[s]);
            fill_norm(b_norm_[s]);
        }
        fill_conv(gc1_);
        fill_conv(gc2_);
        fill_conv(gc3_);
        for (const auto& head : heads_) fill_linear(head);
        return p;
    }

    struct Tape {
        int h0 = 0, w0 = 0;
        std::array<detail::ConvCache<Scalar>, 4> a_conv;
        std::array<detail::NormCache<Scalar>, 4> a_norm;
        std::array<MatX<Scalar>, 4> a_out;
        detail::ConvCache<Scalar> lc1, lc2, lc3;
        MatX<Scalar> lc1_out;
        std::array<detail::ConvCache<Scalar>, 2> b_conv;
        std::array<detail::NormCache<Scalar>, 2> b_norm;
        std::array<MatX<Scalar>, 2> b_out;
        Eigen::Index gap_rows = 0;
        detail::ConvCache<Scalar> gc1, gc2, gc3;
        MatX<Scalar> gc1_out;
        MatX<Scalar> g_feat;  // 1 x P, input to the class heads
    };

    void forward(const Image<Scalar>& img, const VecX<Scalar>& params,
                 LocalFeatureMap<Scalar>& local, GlobalFeatureSet<Scalar>& global,
                 Tape* tape = nullptr) const {
        if (img.channels() != cfg_.input_channels)
            throw StructuralError("Network::forward: channel count mismatch");
        if (img.height % cfg_.downsampling != 0 || img.width % cfg_.downsampling != 0)
            throw StructuralError("Network::forward: image dims must be divisible by d");
        if (params.size() != param_count_)
            throw StructuralError("Network::forward: parameter vector size mismatch");
        Tape local_tape;
        Tape& t = tape ? *tape : local_tape;
        t.h0 = img.height;
        t.w0 = img.width;

        MatX<Scalar> x = img.values;
        int h = img.height, w = img.width;
        for (int s = 0; s < 4; ++s) {
            x = conv_fwd(a_conv_[s], params, x, h, w, &t.a_conv[s]);
            h = t.a_conv[s].ho;
            w = t.a_conv[s].wo;
            x = norm_fwd(a_norm_[s], params, x, &t.a_norm[s]);
            x = x.cwiseMax(Scalar(0));
            t.a_out[s] = x;
        }
        const int u = h, v = w;

        // Local head: residual pair of pointwise convs, then projection.
        MatX<Scalar> y = conv_fwd(lc1_, params, x, u, v, &t.lc1);
        y = y.cwiseMax(Scalar(0));
        t.lc1_out = y;
        y = conv_fwd(lc2_, params, y, u, v, &t.lc2);
        y += x;
        MatX<Scalar> l_values = conv_fwd(lc3_, params, y, u, v, &t.lc3);
        local.values = l_values;
        local.u = u;
        local.v = v;
        local.downsampling = cfg_.downsampling;

        // Global path: Block B downsamples and pools to one feature.
        MatX<Scalar> g = x;
        int gh = u, gw = v;
        for (int s = 0; s < 2; ++s) {
            g = conv_fwd(b_conv_[s], params, g, gh, gw, &t.b_conv[s]);
            gh = t.b_conv[s].ho;
            gw = t.b_conv[s].wo;
            g = norm_fwd(b_norm_[s], params, g, &t.b_norm[s]);
            g = g.cwiseMax(Scalar(0));
            t.b_out[s] = g;
        }
        t.gap_rows = g.rows();
        MatX<Scalar> pooled = g.colwise().mean();  // 1 x wb1

        MatX<Scalar> gc = conv_fwd(gc1_, params, pooled, 1, 1, &t.gc1);
        gc = gc.cwiseMax(Scalar(0));
        t.gc1_out = gc;
        gc = conv_fwd(gc2_, params, gc, 1, 1, &t.gc2);
        gc += pooled;
        MatX<Scalar> g_feat = conv_fwd(gc3_, params, gc, 1, 1, &t.gc3);
        t.g_feat = g_feat;

        global.resize(cfg_.num_classes, cfg_.feature_dim);
        for (int k = 0; k < cfg_.num_classes; ++k) {
            const auto& head = heads_[k];
            Eigen::Map<const MatX<Scalar>> wmat(params.data() + head.w_off, head.in, head.out);
            global.row(k) =
                g_feat * wmat + params.segment(head.b_off, head.out).transpose();
        }
    }

    /// Accumulates parameter gradients into `grad` given upstream
    /// gradients on L and H from one image's forward tape.
    void backward(const Tape& t, const MatX<Scalar>& d_local, const MatX<Scalar>& d_global,
                  const VecX<Scalar>& params, VecX<Scalar>& grad) const {
        // Class heads.
        MatX<Scalar> d_gfeat = MatX<Scalar>::Zero(1, cfg_.feature_dim);
        for (int k = 0; k < cfg_.num_classes; ++k) {
            const auto& head = heads_[k];
            Eigen::Map<const MatX<Scalar>> wmat(params.data() + head.w_off, head.in, head.out);
            Eigen::Map<MatX<Scalar>> dw(grad.data() + head.w_off, head.in, head.out);
            dw += t.g_feat.transpose() * d_global.row(k);
            grad.segment(head.b_off, head.out) += d_global.row(k).transpose();
            d_gfeat += d_global.row(k) * wmat.transpose();
        }

        // Global Block C (residual, 1x1 spatial extent).
        MatX<Scalar> d_gc = conv_bwd(gc3_, params, t.gc3, d_gfeat, grad);
        MatX<Scalar> d_pooled = d_gc;  // residual branch
        MatX<Scalar> d_gc1out = conv_bwd(gc2_, params, t.gc2, d_gc, grad);
        d_gc1out = (t.gc1_out.array() > Scalar(0)).select(d_gc1out, Scalar(0));
        d_pooled += conv_bwd(gc1_, params, t.gc1, d_gc1out, grad);

        // Global average pool.
        MatX<Scalar> d_b =
            (VecX<Scalar>::Ones(t.gap_rows) * d_pooled) / Scalar(t.gap_rows);
        for (int s = 1; s >= 0; --s) {
            d_b = (t.b_out[s].array() > Scalar(0)).select(d_b, Scalar(0));
            d_b = norm_bwd(b_norm_[s], params, t.b_norm[s], d_b, grad);
            d_b = conv_bwd(b_conv_[s], params, t.b_conv[s], d_b, grad);
        }

        // Local head.
        MatX<Scalar> d_res = conv_bwd(lc3_, params, t.lc3, d_local, grad);
        MatX<Scalar> d_x = d_res;  // residual branch
        MatX<Scalar> d_lc1out = conv_bwd(lc2_, params, t.lc2, d_res, grad);
        d_lc1out = (t.lc1_out.array() > Scalar(0)).select(d_lc1out, Scalar(0));
        d_x += conv_bwd(lc1_, params, t.lc1, d_lc1out, grad);

        // Both paths meet at Block A's output.
        d_x += d_b;
        for (int s = 3; s >= 0; --s) {
            d_x = (t.a_out[s].array() > Scalar(0)).select(d_x, Scalar(0));
            d_x = norm_bwd(a_norm_[s], params, t.a_norm[s], d_x, grad);
            d_x = conv_bwd(a_conv_[s], params, t.a_conv[s], d_x, grad);
        }
    }

    /// Theoretical receptive field of one local feature, in input pixels.
    int receptive_field() const {
        std::array<std::pair<int, int>, 4> ks{{{3, 1}, {3, 2}, {3, 1}, {3, 2}}};
        return infoseg::receptive_field(std::span<const std::pair<int, int>>(ks));
    }

private:
    MatX<Scalar> conv_fwd(const Conv& c, const VecX<Scalar>& params, const MatX<Scalar>& x,
                          int h, int w, detail::ConvCache<Scalar>* cache) const {
        cache->h = h;
        cache->w = w;
        cache->patches = detail::im2col(x, h, w, c.cin, c.k, c.stride, &cache->ho, &cache->wo);
        Eigen::Map<const MatX<Scalar>> wmat(params.data() + c.w_off,
                                            Eigen::Index(c.cin) * c.k * c.k, c.cout);
        MatX<Scalar> y = cache->patches * wmat;
        y.rowwise() += params.segment(c.b_off, c.cout).transpose();
        return y;
    }

    MatX<Scalar> conv_bwd(const Conv& c, const VecX<Scalar>& params,
                          const detail::ConvCache<Scalar>& cache, const MatX<Scalar>& dy,
                          VecX<Scalar>& grad) const {
        Eigen::Map<const MatX<Scalar>> wmat(params.data() + c.w_off,
                                            Eigen::Index(c.cin) * c.k * c.k, c.cout);
        Eigen::Map<MatX<Scalar>> dw(grad.data() + c.w_off, Eigen::Index(c.cin) * c.k * c.k,
                                    c.cout);
        dw += cache.patches.transpose() * dy;
        grad.segment(c.b_off, c.cout) += dy.colwise().sum().transpose();
        MatX<Scalar> dpatches = dy * wmat.transpose();
        return detail::col2im(dpatches, cache.h, cache.w, c.cin, c.k, c.stride, cache.ho,
                              cache.wo);
    }

    // Per-position channel normalization: every spatial position is
    // normalized over its channels, so local features stay local.
    MatX<Scalar> norm_fwd(const Norm& n, const VecX<Scalar>& params, const MatX<Scalar>& x,
                          detail::NormCache<Scalar>* cache) const {
        const Scalar eps = Scalar(detail::kNormEps);
        VecX<Scalar> mu = x.rowwise().mean();
        MatX<Scalar> centered = x.colwise() - mu;
        VecX<Scalar> var = centered.array().square().rowwise().mean();
        cache->inv_std = (var.array() + eps).rsqrt();
        cache->xhat = centered.array().colwise() * cache->inv_std.array();
        MatX<Scalar> y = cache->xhat.array().rowwise() *
                         params.segment(n.g_off, n.channels).transpose().array();
        y.rowwise() += params.segment(n.b_off, n.channels).transpose();
        return y;
    }

    MatX<Scalar> norm_bwd(const Norm& n, const VecX<Scalar>& params,
                          const detail::NormCache<Scalar>& cache, const MatX<Scalar>& dy,
                          VecX<Scalar>& grad) const {
        grad.segment(n.g_off, n.channels) +=
            (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
        grad.segment(n.b_off, n.channels) += dy.colwise().sum().transpose();
        MatX<Scalar> dxhat = dy.array().rowwise() *
                             params.segment(n.g_off, n.channels).transpose().array();
        VecX<Scalar> m1 = dxhat.rowwise().mean();
        VecX<Scalar> m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
        MatX<Scalar> dx = dxhat.colwise() - m1;
        dx -= (cache.xhat.array().colwise() * m2.array()).matrix();
        dx.array().colwise() *= cache.inv_std.array();
        return dx;
    }

    NetworkConfig cfg_;
    std::array<Conv, 4> a_conv_;
    std::array<Norm, 4> a_norm_;
    Conv lc1_, lc2_, lc3_;
    std::array<Conv, 2> b_conv_;
    std::array<Norm, 2> b_norm_;
    Conv gc1_, gc2_, gc3_;
    std::vector<Linear> heads_;
    Eigen::Index param_count_ = 0;
};

}  // namespace infoseg
