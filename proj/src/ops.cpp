#include "cb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace cb {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeError(msg);
}

// ---- generic broadcast machinery (rank <= 4) ----

Shape broadcast_shape(const Shape& a, const Shape& b) {
    require(a.size() == b.size(), "broadcast: rank mismatch");
    require(a.size() <= 4, "broadcast: rank > 4 unsupported");
    Shape out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        require(a[i] == b[i] || a[i] == 1 || b[i] == 1, "broadcast: incompatible dims");
        out[i] = std::max(a[i], b[i]);
    }
    return out;
}

std::array<long long, 4> strides_padded(const Shape& s) {
    // Row-major strides, left-padded to rank 4; broadcast dims get stride 0 later.
    std::array<long long, 4> dims{1, 1, 1, 1};
    size_t off = 4 - s.size();
    for (size_t i = 0; i < s.size(); ++i) dims[off + i] = s[i];
    std::array<long long, 4> st{};
    st[3] = 1;
    for (int i = 2; i >= 0; --i) st[i] = st[i + 1] * dims[i + 1];
    return st;
}

struct BcastPlan {
    std::array<long long, 4> out_dims{1, 1, 1, 1};
    std::array<long long, 4> sa{}, sb{};
};

BcastPlan make_bcast_plan(const Shape& a, const Shape& b, const Shape& out) {
    BcastPlan p;
    size_t off = 4 - out.size();
    for (size_t i = 0; i < out.size(); ++i) p.out_dims[off + i] = out[i];
    auto sta = strides_padded(a);
    auto stb = strides_padded(b);
    std::array<long long, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
    for (size_t i = 0; i < a.size(); ++i) da[off + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) db[off + i] = b[i];
    for (int i = 0; i < 4; ++i) {
        p.sa[i] = (da[i] == 1 && p.out_dims[i] > 1) ? 0 : sta[i];
        p.sb[i] = (db[i] == 1 && p.out_dims[i] > 1) ? 0 : stb[i];
    }
    return p;
}

template <typename F>
void bcast_loop(const BcastPlan& p, F&& body) {
    long long o = 0;
    for (long long i0 = 0; i0 < p.out_dims[0]; ++i0)
        for (long long i1 = 0; i1 < p.out_dims[1]; ++i1)
            for (long long i2 = 0; i2 < p.out_dims[2]; ++i2)
                for (long long i3 = 0; i3 < p.out_dims[3]; ++i3) {
                    long long ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2] + i3 * p.sa[3];
                    long long ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2] + i3 * p.sb[3];
                    body(o++, ia, ib);
                }
}

Tensor binary_same(const Tensor& a, const Tensor& b, const char* op, double (*fwd)(double, double),
                   void (*bwd)(double ga, double av, double bv, double* da, double* db)) {
    require(a.shape() == b.shape(), "elementwise op: shape mismatch");
    Tensor y = make_result(a.shape(), {a, b}, op);
    const double* pa = a.data();
    const double* pb = b.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = fwd(pa[i], pb[i]);
    finish_op(y, [bwd, n](Node& self) {
        Node& na = self.parents[0].node();
        Node& nb = self.parents[1].node();
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        for (long long i = 0; i < n; ++i) {
            double da = 0, db = 0;
            bwd(self.grad[i], na.value[i], nb.value[i], &da, &db);
            if (na.requires_grad) na.grad[i] += da;
            if (nb.requires_grad) nb.grad[i] += db;
        }
    });
    return y;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double* da, double* db) {
            *da = g;
            *db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double* da, double* db) {
            *da = g;
            *db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double av, double bv, double* da, double* db) {
            *da = g * bv;
            *db = g * av;
        });
}

static Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, bool is_mul) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    BcastPlan plan = make_bcast_plan(a.shape(), b.shape(), out_shape);
    Tensor y = make_result(out_shape, {a, b}, op);
    const double* pa = a.data();
    const double* pb = b.data();
    double* py = y.data();
    if (is_mul)
        bcast_loop(plan, [&](long long o, long long ia, long long ib) { py[o] = pa[ia] * pb[ib]; });
    else
        bcast_loop(plan, [&](long long o, long long ia, long long ib) { py[o] = pa[ia] + pb[ib]; });
    finish_op(y, [plan, is_mul](Node& self) {
        Node& na = self.parents[0].node();
        Node& nb = self.parents[1].node();
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        bcast_loop(plan, [&](long long o, long long ia, long long ib) {
            double g = self.grad[o];
            if (is_mul) {
                if (na.requires_grad) na.grad[ia] += g * nb.value[ib];
                if (nb.requires_grad) nb.grad[ib] += g * na.value[ia];
            } else {
                if (na.requires_grad) na.grad[ia] += g;
                if (nb.requires_grad) nb.grad[ib] += g;
            }
        });
    });
    return y;
}

Tensor broadcast_add(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "broadcast_add", false); }
Tensor broadcast_mul(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "broadcast_mul", true); }

Tensor scale(const Tensor& a, double s) {
    Tensor y = make_result(a.shape(), {a}, "scale");
    const double* pa = a.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = pa[i] * s;
    finish_op(y, [s, n](Node& self) {
        Node& na = self.parents[0].node();
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (long long i = 0; i < n; ++i) na.grad[i] += self.grad[i] * s;
    });
    return y;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor y = make_result(a.shape(), {a}, "add_scalar");
    const double* pa = a.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = pa[i] + s;
    finish_op(y, [n](Node& self) {
        Node& na = self.parents[0].node();
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (long long i = 0; i < n; ++i) na.grad[i] += self.grad[i];
    });
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = make_result(x.shape(), {x}, "relu");
    const double* px = x.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = px[i] > 0 ? px[i] : 0.0;
    finish_op(y, [n](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long i = 0; i < n; ++i)
            if (nx.value[i] > 0) nx.grad[i] += self.grad[i];
    });
    return y;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = make_result(x.shape(), {x}, "sigmoid");
    const double* px = x.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = 1.0 / (1.0 + std::exp(-px[i]));
    finish_op(y, [n](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long i = 0; i < n; ++i) {
            double s = self.value[i];
            nx.grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
    return y;
}

Tensor rsqrt_shift(const Tensor& x, double eps) {
    Tensor y = make_result(x.shape(), {x}, "rsqrt_shift");
    const double* px = x.data();
    double* py = y.data();
    long long n = y.numel();
    for (long long i = 0; i < n; ++i) py[i] = 1.0 / std::sqrt(px[i] + eps);
    finish_op(y, [n](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long i = 0; i < n; ++i) {
            double r = self.value[i];
            nx.grad[i] += self.grad[i] * (-0.5 * r * r * r);
        }
    });
    return y;
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    Tensor y = make_result({1}, {x}, "sum_all");
    double s = 0;
    const double* px = x.data();
    long long n = x.numel();
    for (long long i = 0; i < n; ++i) s += px[i];
    y.data()[0] = s;
    finish_op(y, [n](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        double g = self.grad[0];
        for (long long i = 0; i < n; ++i) nx.grad[i] += g;
    });
    return y;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

namespace {
// Resolve (C, plane) decomposition: (C,H,W) or (N,C,H,W) reduced over non-channel axes.
struct ChanView {
    int n, c, hw;
};
ChanView chan_view(const Tensor& x) {
    require(x.ndim() == 3 || x.ndim() == 4, "channel reduction expects 3-D or 4-D input");
    if (x.ndim() == 3) return {1, x.dim(0), x.dim(1) * x.dim(2)};
    return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
}
}  // namespace

Tensor channel_mean(const Tensor& x) {
    ChanView v = chan_view(x);
    Tensor y = make_result({v.c}, {x}, "channel_mean");
    const double* px = x.data();
    double* py = y.data();
    double inv = 1.0 / (static_cast<double>(v.n) * v.hw);
    for (int c = 0; c < v.c; ++c) {
        double s = 0;
        for (int n = 0; n < v.n; ++n) {
            const double* p = px + (static_cast<long long>(n) * v.c + c) * v.hw;
            for (int i = 0; i < v.hw; ++i) s += p[i];
        }
        py[c] = s * inv;
    }
    finish_op(y, [v, inv](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int c = 0; c < v.c; ++c) {
            double g = self.grad[c] * inv;
            for (int n = 0; n < v.n; ++n) {
                double* p = nx.grad.data() + (static_cast<long long>(n) * v.c + c) * v.hw;
                for (int i = 0; i < v.hw; ++i) p[i] += g;
            }
        }
    });
    return y;
}

Tensor channel_max(const Tensor& x) {
    ChanView v = chan_view(x);
    Tensor y = make_result({v.c}, {x}, "channel_max");
    const double* px = x.data();
    double* py = y.data();
    std::vector<long long> arg(static_cast<size_t>(v.c));
    for (int c = 0; c < v.c; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        long long besti = -1;
        for (int n = 0; n < v.n; ++n) {
            long long base = (static_cast<long long>(n) * v.c + c) * v.hw;
            for (int i = 0; i < v.hw; ++i)
                if (px[base + i] > best) {
                    best = px[base + i];
                    besti = base + i;
                }
        }
        py[c] = best;
        arg[static_cast<size_t>(c)] = besti;
    }
    finish_op(y, [v, arg = std::move(arg)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int c = 0; c < v.c; ++c) nx.grad[arg[static_cast<size_t>(c)]] += self.grad[c];
    });
    return y;
}

Tensor mean_over_channels(const Tensor& x) {
    require(x.ndim() == 3, "mean_over_channels expects (C,H,W)");
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor y = make_result({1, x.dim(1), x.dim(2)}, {x}, "mean_over_channels");
    const double* px = x.data();
    double* py = y.data();
    double inv = 1.0 / c;
    for (int i = 0; i < hw; ++i) {
        double s = 0;
        for (int ch = 0; ch < c; ++ch) s += px[static_cast<long long>(ch) * hw + i];
        py[i] = s * inv;
    }
    finish_op(y, [c, hw, inv](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int i = 0; i < hw; ++i) {
            double g = self.grad[i] * inv;
            for (int ch = 0; ch < c; ++ch) nx.grad[static_cast<long long>(ch) * hw + i] += g;
        }
    });
    return y;
}

Tensor max_over_channels(const Tensor& x) {
    require(x.ndim() == 3, "max_over_channels expects (C,H,W)");
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor y = make_result({1, x.dim(1), x.dim(2)}, {x}, "max_over_channels");
    const double* px = x.data();
    double* py = y.data();
    std::vector<int> arg(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) {
        double best = px[i];
        int bestc = 0;
        for (int ch = 1; ch < c; ++ch) {
            double v = px[static_cast<long long>(ch) * hw + i];
            if (v > best) {
                best = v;
                bestc = ch;
            }
        }
        py[i] = best;
        arg[static_cast<size_t>(i)] = bestc;
    }
    finish_op(y, [hw, arg = std::move(arg)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int i = 0; i < hw; ++i)
            nx.grad[static_cast<long long>(arg[static_cast<size_t>(i)]) * hw + i] += self.grad[i];
    });
    return y;
}

// ---- shape ----

Tensor reshape(const Tensor& x, Shape shape) {
    require(numel_of(shape) == x.numel(), "reshape: element count mismatch");
    Tensor y = make_result(shape, {x}, "reshape");
    std::copy(x.values().begin(), x.values().end(), y.values().begin());
    long long n = x.numel();
    finish_op(y, [n](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long i = 0; i < n; ++i) nx.grad[i] += self.grad[i];
    });
    return y;
}

namespace {
struct AxisView {
    long long outer, axis, inner;
};
AxisView axis_view(const Shape& s, int axis) {
    require(axis >= 0 && axis < static_cast<int>(s.size()), "axis out of range");
    AxisView v{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    Shape out_shape = parts[0].shape();
    if (axis < 0) axis += static_cast<int>(out_shape.size());
    long long total_axis = 0;
    for (const Tensor& p : parts) {
        require(p.ndim() == static_cast<int>(out_shape.size()), "concat: rank mismatch");
        for (int i = 0; i < p.ndim(); ++i)
            require(i == axis || p.dim(i) == out_shape[static_cast<size_t>(i)], "concat: dim mismatch");
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(total_axis);
    Tensor y = make_result(out_shape, parts, "concat");
    AxisView ov = axis_view(out_shape, axis);
    double* py = y.data();
    std::vector<long long> offsets;
    long long off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        AxisView pv = axis_view(p.shape(), axis);
        const double* pp = p.data();
        for (long long o = 0; o < pv.outer; ++o)
            std::memcpy(py + (o * ov.axis + off) * ov.inner, pp + o * pv.axis * pv.inner,
                        static_cast<size_t>(pv.axis * pv.inner) * sizeof(double));
        off += pv.axis;
    }
    finish_op(y, [ov, axis, offsets = std::move(offsets)](Node& self) {
        for (size_t k = 0; k < self.parents.size(); ++k) {
            Node& np = self.parents[k].node();
            if (!np.requires_grad) continue;
            np.ensure_grad();
            AxisView pv = axis_view(np.shape, axis);
            for (long long o = 0; o < pv.outer; ++o) {
                const double* g = self.grad.data() + (o * ov.axis + offsets[k]) * ov.inner;
                double* d = np.grad.data() + o * pv.axis * pv.inner;
                for (long long i = 0; i < pv.axis * pv.inner; ++i) d[i] += g[i];
            }
        }
    });
    return y;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    Shape out_shape = x.shape();
    if (axis < 0) axis += x.ndim();
    require(axis >= 0 && axis < x.ndim(), "slice: axis out of range");
    require(start >= 0 && len > 0 && start + len <= x.dim(axis), "slice: range out of bounds");
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor y = make_result(out_shape, {x}, "slice");
    AxisView xv = axis_view(x.shape(), axis);
    AxisView yv = axis_view(out_shape, axis);
    const double* px = x.data();
    double* py = y.data();
    for (long long o = 0; o < xv.outer; ++o)
        std::memcpy(py + o * yv.axis * yv.inner, px + (o * xv.axis + start) * xv.inner,
                    static_cast<size_t>(yv.axis * yv.inner) * sizeof(double));
    finish_op(y, [xv, yv, start](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long o = 0; o < xv.outer; ++o) {
            const double* g = self.grad.data() + o * yv.axis * yv.inner;
            double* d = nx.grad.data() + (o * xv.axis + start) * xv.inner;
            for (long long i = 0; i < yv.axis * yv.inner; ++i) d[i] += g[i];
        }
    });
    return y;
}

Tensor gather_flat(const Tensor& x, std::vector<long long> indices) {
    long long n = x.numel();
    for (long long i : indices) require(i >= 0 && i < n, "gather_flat: index out of range");
    Tensor y = make_result({static_cast<int>(indices.size())}, {x}, "gather_flat");
    const double* px = x.data();
    double* py = y.data();
    for (size_t j = 0; j < indices.size(); ++j) py[j] = px[indices[j]];
    finish_op(y, [indices = std::move(indices)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (size_t j = 0; j < indices.size(); ++j) nx.grad[indices[j]] += self.grad[j];
    });
    return y;
}

Tensor chw_to_tokens(const Tensor& x) {
    require(x.ndim() == 3, "chw_to_tokens expects (C,H,W)");
    int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor y = make_result({hw, c}, {x}, "chw_to_tokens");
    const double* px = x.data();
    double* py = y.data();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) py[static_cast<long long>(i) * c + ch] = px[static_cast<long long>(ch) * hw + i];
    finish_op(y, [c, hw](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i)
                nx.grad[static_cast<long long>(ch) * hw + i] += self.grad[static_cast<long long>(i) * c + ch];
    });
    return y;
}

Tensor tokens_to_chw(const Tensor& x, int h, int w) {
    require(x.ndim() == 2, "tokens_to_chw expects (N,C)");
    require(x.dim(0) == h * w, "tokens_to_chw: token count != h*w");
    int c = x.dim(1), hw = h * w;
    Tensor y = make_result({c, h, w}, {x}, "tokens_to_chw");
    const double* px = x.data();
    double* py = y.data();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) py[static_cast<long long>(ch) * hw + i] = px[static_cast<long long>(i) * c + ch];
    finish_op(y, [c, hw](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i)
                nx.grad[static_cast<long long>(i) * c + ch] += self.grad[static_cast<long long>(ch) * hw + i];
    });
    return y;
}

// ---- linear algebra ----

namespace {
// out(n,m) (+)= opA(n,k) * opB(k,m), where opX transposes the stored matrix when flagged.
void matmul_raw(const double* a, bool ta, int a_rows, int a_cols, const double* b, bool tb,
                int b_rows, int b_cols, int n, int k, int m, double* out, bool accumulate) {
    (void)b_rows;
    if (!accumulate) std::fill(out, out + static_cast<long long>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        double* orow = out + static_cast<long long>(i) * m;
        for (int l = 0; l < k; ++l) {
            double av = ta ? a[static_cast<long long>(l) * a_cols + i] : a[static_cast<long long>(i) * a_cols + l];
            if (av == 0.0) continue;
            if (!tb) {
                const double* brow = b + static_cast<long long>(l) * b_cols;
                for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
            } else {
                for (int j = 0; j < m; ++j) orow[j] += av * b[static_cast<long long>(j) * b_cols + l];
            }
        }
    }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    require(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-D operands");
    int n = trans_a ? a.dim(1) : a.dim(0);
    int k = trans_a ? a.dim(0) : a.dim(1);
    int kb = trans_b ? b.dim(1) : b.dim(0);
    int m = trans_b ? b.dim(0) : b.dim(1);
    require(k == kb, "matmul: inner dimension mismatch");
    Tensor y = make_result({n, m}, {a, b}, "matmul");
    matmul_raw(a.data(), trans_a, a.dim(0), a.dim(1), b.data(), trans_b, b.dim(0), b.dim(1), n, k, m,
               y.data(), false);
    finish_op(y, [trans_a, trans_b, n, k, m](Node& self) {
        Node& na = self.parents[0].node();
        Node& nb = self.parents[1].node();
        const double* g = self.grad.data();
        if (na.requires_grad) {
            na.ensure_grad();
            if (!trans_a)  // dA(n,k) = G(n,m) * opB'(m,k)
                matmul_raw(g, false, n, m, nb.value.data(), !trans_b, nb.shape[0], nb.shape[1], n, m, k,
                           na.grad.data(), true);
            else  // dA(k,n) = opB(k,m) * G'(m,n)
                matmul_raw(nb.value.data(), trans_b, nb.shape[0], nb.shape[1], g, true, n, m, k, m, n,
                           na.grad.data(), true);
        }
        if (nb.requires_grad) {
            nb.ensure_grad();
            if (!trans_b)  // dB(k,m) = opA'(k,n) * G(n,m)
                matmul_raw(na.value.data(), !trans_a, na.shape[0], na.shape[1], g, false, n, m, k, n, m,
                           nb.grad.data(), true);
            else  // dB(m,k) = G'(m,n) * opA(n,k)
                matmul_raw(g, true, n, m, na.value.data(), trans_a, na.shape[0], na.shape[1], m, n, k,
                           nb.grad.data(), true);
        }
    });
    return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(x, weight, false, true);
    if (!bias.defined()) return y;
    return broadcast_add(y, reshape(bias, {1, bias.dim(0)}));
}

// ---- softmax / layer norm ----

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0) axis += x.ndim();
    AxisView v = axis_view(x.shape(), axis);
    Tensor y = make_result(x.shape(), {x}, "softmax");
    const double* px = x.data();
    double* py = y.data();
    for (long long o = 0; o < v.outer; ++o)
        for (long long in = 0; in < v.inner; ++in) {
            long long base = o * v.axis * v.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (long long a = 0; a < v.axis; ++a) mx = std::max(mx, px[base + a * v.inner]);
            double z = 0;
            for (long long a = 0; a < v.axis; ++a) {
                double e = std::exp(px[base + a * v.inner] - mx);
                py[base + a * v.inner] = e;
                z += e;
            }
            double invz = 1.0 / z;
            for (long long a = 0; a < v.axis; ++a) py[base + a * v.inner] *= invz;
        }
    finish_op(y, [v](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long o = 0; o < v.outer; ++o)
            for (long long in = 0; in < v.inner; ++in) {
                long long base = o * v.axis * v.inner + in;
                double dot = 0;
                for (long long a = 0; a < v.axis; ++a)
                    dot += self.grad[base + a * v.inner] * self.value[base + a * v.inner];
                for (long long a = 0; a < v.axis; ++a) {
                    long long i = base + a * v.inner;
                    nx.grad[i] += self.value[i] * (self.grad[i] - dot);
                }
            }
    });
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.ndim() == 2, "layer_norm expects (N,d)");
    int n = x.dim(0), d = x.dim(1);
    require(gamma.numel() == d && beta.numel() == d, "layer_norm: parameter size mismatch");
    Tensor y = make_result(x.shape(), {x, gamma, beta}, "layer_norm");
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* py = y.data();
    for (int i = 0; i < n; ++i) {
        const double* row = px + static_cast<long long>(i) * d;
        double m = 0;
        for (int j = 0; j < d; ++j) m += row[j];
        m /= d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        double* orow = py + static_cast<long long>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = pg[j] * (row[j] - m) * inv + pb[j];
    }
    finish_op(y, [n, d, eps](Node& self) {
        Node& nx = self.parents[0].node();
        Node& ng = self.parents[1].node();
        Node& nb = self.parents[2].node();
        if (nx.requires_grad) nx.ensure_grad();
        if (ng.requires_grad) ng.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* row = nx.value.data() + static_cast<long long>(i) * d;
            const double* grow = self.grad.data() + static_cast<long long>(i) * d;
            double m = 0;
            for (int j = 0; j < d; ++j) m += row[j];
            m /= d;
            double var = 0;
            for (int j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
            var /= d;
            double inv = 1.0 / std::sqrt(var + eps);
            if (ng.requires_grad || nb.requires_grad) {
                for (int j = 0; j < d; ++j) {
                    double xhat = (row[j] - m) * inv;
                    if (ng.requires_grad) ng.grad[j] += grow[j] * xhat;
                    if (nb.requires_grad) nb.grad[j] += grow[j];
                }
            }
            if (nx.requires_grad) {
                double mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (int j = 0; j < d; ++j) {
                    double xhat = (row[j] - m) * inv;
                    double dxhat = grow[j] * ng.value[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= d;
                mean_dxhat_xhat /= d;
                double* dxrow = nx.grad.data() + static_cast<long long>(i) * d;
                for (int j = 0; j < d; ++j) {
                    double xhat = (row[j] - m) * inv;
                    double dxhat = grow[j] * ng.value[j];
                    dxrow[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    });
    return y;
}

// ---- spatial ops ----

namespace {
struct ConvDims {
    int n, c, h, w;
    bool batched;
};
ConvDims conv_input_dims(const Tensor& x) {
    require(x.ndim() == 3 || x.ndim() == 4, "conv expects (C,H,W) or (N,C,H,W)");
    if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    ConvDims in = conv_input_dims(x);
    require(w.ndim() == 4, "conv2d: weight must be (O,C,kh,kw)");
    int oc = w.dim(0), wc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    require(wc == in.c, "conv2d: channel mismatch");
    require(stride >= 1, "conv2d: stride must be >= 1");
    int oh = (in.h + 2 * pad - kh) / stride + 1;
    int ow = (in.w + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: output would be empty");
    if (bias.defined()) require(bias.numel() == oc, "conv2d: bias size mismatch");

    Shape out_shape = in.batched ? Shape{in.n, oc, oh, ow} : Shape{oc, oh, ow};
    std::vector<Tensor> parents = bias.defined() ? std::vector<Tensor>{x, w, bias} : std::vector<Tensor>{x, w};
    Tensor y = make_result(out_shape, parents, "conv2d");

    const double* px = x.data();
    const double* pw = w.data();
    double* py = y.data();
    long long in_plane = static_cast<long long>(in.h) * in.w;
    long long out_plane = static_cast<long long>(oh) * ow;
    long long in_img = static_cast<long long>(in.c) * in_plane;
    long long out_img = static_cast<long long>(oc) * out_plane;

    for (int n = 0; n < in.n; ++n) {
        for (int o = 0; o < oc; ++o) {
            double* oplane = py + n * out_img + o * out_plane;
            double b = bias.defined() ? bias.data()[o] : 0.0;
            for (long long i = 0; i < out_plane; ++i) oplane[i] = b;
            for (int c = 0; c < in.c; ++c) {
                const double* iplane = px + n * in_img + c * in_plane;
                const double* wk = pw + ((static_cast<long long>(o) * in.c + c) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        double wv = wk[static_cast<long long>(ky) * kw + kx];
                        if (wv == 0.0) continue;
                        // valid output range so the sampled input stays in bounds
                        int oy_lo = std::max(0, (pad - ky + stride - 1) / stride);
                        int oy_hi = std::min(oh, (in.h - 1 - ky + pad) / stride + 1);
                        int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                        int ox_hi = std::min(ow, (in.w - 1 - kx + pad) / stride + 1);
                        int count = ox_hi - ox_lo;
                        if (count <= 0) continue;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            int iy = oy * stride - pad + ky;
                            double* orow = oplane + static_cast<long long>(oy) * ow + ox_lo;
                            const double* irow = iplane + static_cast<long long>(iy) * in.w +
                                                 (static_cast<long long>(ox_lo) * stride - pad + kx);
                            if (stride == 1) {
                                for (int i = 0; i < count; ++i) orow[i] += wv * irow[i];
                            } else {
                                for (int i = 0; i < count; ++i) orow[i] += wv * irow[static_cast<long long>(i) * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    finish_op(y, [in, oc, kh, kw, stride, pad, oh, ow](Node& self) {
        Node& nx = self.parents[0].node();
        Node& nw = self.parents[1].node();
        Node* nb = self.parents.size() > 2 ? &self.parents[2].node() : nullptr;
        long long in_plane = static_cast<long long>(in.h) * in.w;
        long long out_plane = static_cast<long long>(oh) * ow;
        long long in_img = static_cast<long long>(in.c) * in_plane;
        long long out_img = static_cast<long long>(oc) * out_plane;
        if (nb && nb->requires_grad) {
            nb->ensure_grad();
            for (int n = 0; n < in.n; ++n)
                for (int o = 0; o < oc; ++o) {
                    const double* g = self.grad.data() + n * out_img + o * out_plane;
                    double s = 0;
                    for (long long i = 0; i < out_plane; ++i) s += g[i];
                    nb->grad[o] += s;
                }
        }
        bool need_dx = nx.requires_grad;
        bool need_dw = nw.requires_grad;
        if (!need_dx && !need_dw) return;
        if (need_dx) nx.ensure_grad();
        if (need_dw) nw.ensure_grad();
        for (int n = 0; n < in.n; ++n) {
            for (int o = 0; o < oc; ++o) {
                const double* gplane = self.grad.data() + n * out_img + o * out_plane;
                for (int c = 0; c < in.c; ++c) {
                    const double* iplane = nx.value.data() + n * in_img + c * in_plane;
                    double* dplane = need_dx ? nx.grad.data() + n * in_img + c * in_plane : nullptr;
                    long long wbase = (static_cast<long long>(o) * in.c + c) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            double wv = nw.value[wbase + static_cast<long long>(ky) * kw + kx];
                            double dw_acc = 0;
                            int oy_lo = std::max(0, (pad - ky + stride - 1) / stride);
                            int oy_hi = std::min(oh, (in.h - 1 - ky + pad) / stride + 1);
                            int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                            int ox_hi = std::min(ow, (in.w - 1 - kx + pad) / stride + 1);
                            int count = ox_hi - ox_lo;
                            if (count <= 0) continue;
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                int iy = oy * stride - pad + ky;
                                long long ibase = static_cast<long long>(iy) * in.w +
                                                  (static_cast<long long>(ox_lo) * stride - pad + kx);
                                const double* grow = gplane + static_cast<long long>(oy) * ow + ox_lo;
                                const double* irow = iplane + ibase;
                                double* drow = need_dx ? dplane + ibase : nullptr;
                                if (stride == 1) {
                                    if (need_dw)
                                        for (int i = 0; i < count; ++i) dw_acc += grow[i] * irow[i];
                                    if (need_dx && wv != 0.0)
                                        for (int i = 0; i < count; ++i) drow[i] += wv * grow[i];
                                } else {
                                    if (need_dw)
                                        for (int i = 0; i < count; ++i) dw_acc += grow[i] * irow[static_cast<long long>(i) * stride];
                                    if (need_dx && wv != 0.0)
                                        for (int i = 0; i < count; ++i) drow[static_cast<long long>(i) * stride] += wv * grow[i];
                                }
                            }
                            if (need_dw) nw.grad[wbase + static_cast<long long>(ky) * kw + kx] += dw_acc;
                        }
                    }
                }
            }
        }
    });
    return y;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    ConvDims in = conv_input_dims(x);
    require(w.ndim() == 4, "conv_transpose2d: weight must be (C,O,kh,kw)");
    require(w.dim(0) == in.c, "conv_transpose2d: channel mismatch");
    int oc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    int oh = (in.h - 1) * stride - 2 * pad + kh;
    int ow = (in.w - 1) * stride - 2 * pad + kw;
    require(oh >= 1 && ow >= 1, "conv_transpose2d: output would be empty");
    if (bias.defined()) require(bias.numel() == oc, "conv_transpose2d: bias size mismatch");

    Shape out_shape = in.batched ? Shape{in.n, oc, oh, ow} : Shape{oc, oh, ow};
    std::vector<Tensor> parents = bias.defined() ? std::vector<Tensor>{x, w, bias} : std::vector<Tensor>{x, w};
    Tensor y = make_result(out_shape, parents, "conv_transpose2d");

    const double* px = x.data();
    const double* pw = w.data();
    double* py = y.data();
    long long in_plane = static_cast<long long>(in.h) * in.w;
    long long out_plane = static_cast<long long>(oh) * ow;
    long long in_img = static_cast<long long>(in.c) * in_plane;
    long long out_img = static_cast<long long>(oc) * out_plane;

    for (int n = 0; n < in.n; ++n) {
        for (int o = 0; o < oc; ++o) {
            double* oplane = py + n * out_img + o * out_plane;
            double b = bias.defined() ? bias.data()[o] : 0.0;
            for (long long i = 0; i < out_plane; ++i) oplane[i] = b;
        }
        for (int c = 0; c < in.c; ++c) {
            const double* iplane = px + n * in_img + c * in_plane;
            for (int o = 0; o < oc; ++o) {
                double* oplane = py + n * out_img + o * out_plane;
                const double* wk = pw + (static_cast<long long>(c) * oc + o) * kh * kw;
                for (int iy = 0; iy < in.h; ++iy) {
                    for (int ix = 0; ix < in.w; ++ix) {
                        double xv = iplane[static_cast<long long>(iy) * in.w + ix];
                        if (xv == 0.0) continue;
                        for (int ky = 0; ky < kh; ++ky) {
                            int oy = iy * stride - pad + ky;
                            if (oy < 0 || oy >= oh) continue;
                            double* orow = oplane + static_cast<long long>(oy) * ow;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ox = ix * stride - pad + kx;
                                if (ox < 0 || ox >= ow) continue;
                                orow[ox] += xv * wk[static_cast<long long>(ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    finish_op(y, [in, oc, kh, kw, stride, pad, oh, ow](Node& self) {
        Node& nx = self.parents[0].node();
        Node& nw = self.parents[1].node();
        Node* nb = self.parents.size() > 2 ? &self.parents[2].node() : nullptr;
        long long in_plane = static_cast<long long>(in.h) * in.w;
        long long out_plane = static_cast<long long>(oh) * ow;
        long long in_img = static_cast<long long>(in.c) * in_plane;
        long long out_img = static_cast<long long>(oc) * out_plane;
        if (nb && nb->requires_grad) {
            nb->ensure_grad();
            for (int n = 0; n < in.n; ++n)
                for (int o = 0; o < oc; ++o) {
                    const double* g = self.grad.data() + n * out_img + o * out_plane;
                    double s = 0;
                    for (long long i = 0; i < out_plane; ++i) s += g[i];
                    nb->grad[o] += s;
                }
        }
        bool need_dx = nx.requires_grad;
        bool need_dw = nw.requires_grad;
        if (!need_dx && !need_dw) return;
        if (need_dx) nx.ensure_grad();
        if (need_dw) nw.ensure_grad();
        for (int n = 0; n < in.n; ++n) {
            for (int c = 0; c < in.c; ++c) {
                const double* iplane = nx.value.data() + n * in_img + c * in_plane;
                double* dplane = need_dx ? nx.grad.data() + n * in_img + c * in_plane : nullptr;
                for (int o = 0; o < oc; ++o) {
                    const double* gplane = self.grad.data() + n * out_img + o * out_plane;
                    long long wbase = (static_cast<long long>(c) * oc + o) * kh * kw;
                    for (int iy = 0; iy < in.h; ++iy) {
                        for (int ix = 0; ix < in.w; ++ix) {
                            long long ii = static_cast<long long>(iy) * in.w + ix;
                            double xv = iplane[ii];
                            double dx_acc = 0;
                            for (int ky = 0; ky < kh; ++ky) {
                                int oy = iy * stride - pad + ky;
                                if (oy < 0 || oy >= oh) continue;
                                const double* grow = gplane + static_cast<long long>(oy) * ow;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int ox = ix * stride - pad + kx;
                                    if (ox < 0 || ox >= ow) continue;
                                    double g = grow[ox];
                                    double wv = nw.value[wbase + static_cast<long long>(ky) * kw + kx];
                                    if (need_dx) dx_acc += g * wv;
                                    if (need_dw) nw.grad[wbase + static_cast<long long>(ky) * kw + kx] += g * xv;
                                }
                            }
                            if (need_dx) dplane[ii] += dx_acc;
                        }
                    }
                }
            }
        }
    });
    return y;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad) {
    ConvDims in = conv_input_dims(x);
    int oh = (in.h + 2 * pad - kernel) / stride + 1;
    int ow = (in.w + 2 * pad - kernel) / stride + 1;
    require(oh >= 1 && ow >= 1, "max_pool2d: output would be empty");
    Shape out_shape = in.batched ? Shape{in.n, in.c, oh, ow} : Shape{in.c, oh, ow};
    Tensor y = make_result(out_shape, {x}, "max_pool2d");
    const double* px = x.data();
    double* py = y.data();
    long long planes = static_cast<long long>(in.n) * in.c;
    long long in_plane = static_cast<long long>(in.h) * in.w;
    long long out_plane = static_cast<long long>(oh) * ow;
    std::vector<long long> argmax(static_cast<size_t>(planes * out_plane), -1);
    for (long long p = 0; p < planes; ++p) {
        const double* ip = px + p * in_plane;
        double* op = py + p * out_plane;
        long long* ap = argmax.data() + p * out_plane;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                long long besti = -1;
                for (int ky = 0; ky < kernel; ++ky) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int kx = 0; kx < kernel; ++kx) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= in.w) continue;
                        double v = ip[static_cast<long long>(iy) * in.w + ix];
                        if (v > best) {
                            best = v;
                            besti = static_cast<long long>(iy) * in.w + ix;
                        }
                    }
                }
                op[static_cast<long long>(oy) * ow + ox] = besti >= 0 ? best : 0.0;
                ap[static_cast<long long>(oy) * ow + ox] = besti;
            }
    }
    finish_op(y, [planes, in_plane, out_plane, argmax = std::move(argmax)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (long long p = 0; p < planes; ++p) {
            const long long* ap = argmax.data() + p * out_plane;
            const double* g = self.grad.data() + p * out_plane;
            double* d = nx.grad.data() + p * in_plane;
            for (long long i = 0; i < out_plane; ++i)
                if (ap[i] >= 0) d[ap[i]] += g[i];
        }
    });
    return y;
}

Tensor global_avg_pool(const Tensor& x) {
    require(x.ndim() == 3, "global_avg_pool expects (C,H,W)");
    return channel_mean(x);
}

Tensor global_max_pool(const Tensor& x) {
    require(x.ndim() == 3, "global_max_pool expects (C,H,W)");
    return channel_max(x);
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    require(x.ndim() == 3, "resize_nearest expects (C,H,W)");
    require(out_h >= 1 && out_w >= 1, "resize_nearest: bad output size");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y = make_result({c, out_h, out_w}, {x}, "resize_nearest");
    std::vector<int> sy(static_cast<size_t>(out_h)), sx(static_cast<size_t>(out_w));
    for (int i = 0; i < out_h; ++i)
        sy[static_cast<size_t>(i)] = std::min(h - 1, static_cast<int>(std::floor((i + 0.5) * h / out_h)));
    for (int j = 0; j < out_w; ++j)
        sx[static_cast<size_t>(j)] = std::min(w - 1, static_cast<int>(std::floor((j + 0.5) * w / out_w)));
    const double* px = x.data();
    double* py = y.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* ip = px + static_cast<long long>(ch) * h * w;
        double* op = py + static_cast<long long>(ch) * out_h * out_w;
        for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j)
                op[static_cast<long long>(i) * out_w + j] =
                    ip[static_cast<long long>(sy[static_cast<size_t>(i)]) * w + sx[static_cast<size_t>(j)]];
    }
    finish_op(y, [c, h, w, out_h, out_w, sy = std::move(sy), sx = std::move(sx)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* d = nx.grad.data() + static_cast<long long>(ch) * h * w;
            const double* g = self.grad.data() + static_cast<long long>(ch) * out_h * out_w;
            for (int i = 0; i < out_h; ++i)
                for (int j = 0; j < out_w; ++j)
                    d[static_cast<long long>(sy[static_cast<size_t>(i)]) * w + sx[static_cast<size_t>(j)]] +=
                        g[static_cast<long long>(i) * out_w + j];
        }
    });
    return y;
}

namespace {
struct Corners {
    int x0, x1, y0, y1;
    double w00, w01, w10, w11;  // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
};

Corners bilinear_corners(double px, double py, int w, int h) {
    double cx = std::clamp(px, 0.0, static_cast<double>(w - 1));
    double cy = std::clamp(py, 0.0, static_cast<double>(h - 1));
    int x0 = static_cast<int>(std::floor(cx));
    int y0 = static_cast<int>(std::floor(cy));
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fx = cx - x0, fy = cy - y0;
    return {x0, x1, y0, y1, (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
}
}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require(x.ndim() == 3, "resize_bilinear expects (C,H,W)");
    require(out_h >= 1 && out_w >= 1, "resize_bilinear: bad output size");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y = make_result({c, out_h, out_w}, {x}, "resize_bilinear");
    std::vector<Corners> cs(static_cast<size_t>(out_h) * out_w);
    for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
            // half-pixel mapping between grids, then corner weights
            double syf = (i + 0.5) * static_cast<double>(h) / out_h - 0.5;
            double sxf = (j + 0.5) * static_cast<double>(w) / out_w - 0.5;
            cs[static_cast<size_t>(i) * out_w + j] = bilinear_corners(sxf, syf, w, h);
        }
    const double* px = x.data();
    double* py = y.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* ip = px + static_cast<long long>(ch) * h * w;
        double* op = py + static_cast<long long>(ch) * out_h * out_w;
        for (long long i = 0; i < static_cast<long long>(out_h) * out_w; ++i) {
            const Corners& k = cs[static_cast<size_t>(i)];
            op[i] = k.w00 * ip[static_cast<long long>(k.y0) * w + k.x0] +
                    k.w01 * ip[static_cast<long long>(k.y0) * w + k.x1] +
                    k.w10 * ip[static_cast<long long>(k.y1) * w + k.x0] +
                    k.w11 * ip[static_cast<long long>(k.y1) * w + k.x1];
        }
    }
    finish_op(y, [c, h, w, out_h, out_w, cs = std::move(cs)](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* d = nx.grad.data() + static_cast<long long>(ch) * h * w;
            const double* g = self.grad.data() + static_cast<long long>(ch) * out_h * out_w;
            for (long long i = 0; i < static_cast<long long>(out_h) * out_w; ++i) {
                const Corners& k = cs[static_cast<size_t>(i)];
                d[static_cast<long long>(k.y0) * w + k.x0] += g[i] * k.w00;
                d[static_cast<long long>(k.y0) * w + k.x1] += g[i] * k.w01;
                d[static_cast<long long>(k.y1) * w + k.x0] += g[i] * k.w10;
                d[static_cast<long long>(k.y1) * w + k.x1] += g[i] * k.w11;
            }
        }
    });
    return y;
}

Tensor bilinear_sample(const Tensor& x, double px, double py) {
    require(x.defined() && x.ndim() == 3, "bilinear_sample expects a non-empty (C,H,W) feature map");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Corners k = bilinear_corners(px, py, w, h);
    Tensor y = make_result({c}, {x}, "bilinear_sample");
    const double* pd = x.data();
    double* out = y.data();
    for (int ch = 0; ch < c; ++ch) {
        const double* ip = pd + static_cast<long long>(ch) * h * w;
        out[ch] = k.w00 * ip[static_cast<long long>(k.y0) * w + k.x0] +
                  k.w01 * ip[static_cast<long long>(k.y0) * w + k.x1] +
                  k.w10 * ip[static_cast<long long>(k.y1) * w + k.x0] +
                  k.w11 * ip[static_cast<long long>(k.y1) * w + k.x1];
    }
    finish_op(y, [c, h, w, k](Node& self) {
        Node& nx = self.parents[0].node();
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double* d = nx.grad.data() + static_cast<long long>(ch) * h * w;
            double g = self.grad[ch];
            d[static_cast<long long>(k.y0) * w + k.x0] += g * k.w00;
            d[static_cast<long long>(k.y0) * w + k.x1] += g * k.w01;
            d[static_cast<long long>(k.y1) * w + k.x0] += g * k.w10;
            d[static_cast<long long>(k.y1) * w + k.x1] += g * k.w11;
        }
    });
    return y;
}

Tensor roi_align(const Tensor& feature, const std::vector<std::array<double, 4>>& boxes, int out_h,
                 int out_w, int sampling_ratio, double spatial_scale) {
    require(feature.ndim() == 3, "roi_align expects (C,H,W)");
    require(sampling_ratio >= 1, "roi_align: sampling_ratio must be >= 1");
    require(out_h >= 1 && out_w >= 1, "roi_align: bad output size");
    int c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
    int nb = static_cast<int>(boxes.size());
    require(nb >= 1, "roi_align: no boxes");
    Tensor y = make_result({nb, c, out_h, out_w}, {feature}, "roi_align");
    const double* pf = feature.data();
    double* py = y.data();
    int s = sampling_ratio;
    double inv_samples = 1.0 / (s * s);
    long long plane = static_cast<long long>(h) * w;
    long long out_plane = static_cast<long long>(out_h) * out_w;

    auto for_each_sample = [&](int b, auto&& fn) {
        double x1 = boxes[static_cast<size_t>(b)][0] * spatial_scale;
        double y1 = boxes[static_cast<size_t>(b)][1] * spatial_scale;
        double x2 = boxes[static_cast<size_t>(b)][2] * spatial_scale;
        double y2 = boxes[static_cast<size_t>(b)][3] * spatial_scale;
        double bin_w = (x2 - x1) / out_w;
        double bin_h = (y2 - y1) / out_h;
        for (int by = 0; by < out_h; ++by)
            for (int bx = 0; bx < out_w; ++bx)
                for (int ky = 0; ky < s; ++ky)
                    for (int kx = 0; kx < s; ++kx) {
                        double sx = x1 + (bx + (kx + 0.5) / s) * bin_w;
                        double sy = y1 + (by + (ky + 0.5) / s) * bin_h;
                        fn(by, bx, bilinear_corners(sx, sy, w, h));
                    }
    };

    for (int b = 0; b < nb; ++b) {
        double* ob = py + static_cast<long long>(b) * c * out_plane;
        for_each_sample(b, [&](int by, int bx, const Corners& k) {
            long long o = static_cast<long long>(by) * out_w + bx;
            for (int ch = 0; ch < c; ++ch) {
                const double* ip = pf + static_cast<long long>(ch) * plane;
                ob[static_cast<long long>(ch) * out_plane + o] +=
                    inv_samples * (k.w00 * ip[static_cast<long long>(k.y0) * w + k.x0] +
                                   k.w01 * ip[static_cast<long long>(k.y0) * w + k.x1] +
                                   k.w10 * ip[static_cast<long long>(k.y1) * w + k.x0] +
                                   k.w11 * ip[static_cast<long long>(k.y1) * w + k.x1]);
            }
        });
    }

    finish_op(y, [boxes, out_h, out_w, s, spatial_scale, c, h, w, inv_samples, plane, out_plane](Node& self) {
        Node& nf = self.parents[0].node();
        if (!nf.requires_grad) return;
        nf.ensure_grad();
        int nb = static_cast<int>(boxes.size());
        for (int b = 0; b < nb; ++b) {
            double x1 = boxes[static_cast<size_t>(b)][0] * spatial_scale;
            double y1 = boxes[static_cast<size_t>(b)][1] * spatial_scale;
            double x2 = boxes[static_cast<size_t>(b)][2] * spatial_scale;
            double y2 = boxes[static_cast<size_t>(b)][3] * spatial_scale;
            double bin_w = (x2 - x1) / out_w;
            double bin_h = (y2 - y1) / out_h;
            const double* gb = self.grad.data() + static_cast<long long>(b) * c * out_plane;
            for (int by = 0; by < out_h; ++by)
                for (int bx = 0; bx < out_w; ++bx)
                    for (int ky = 0; ky < s; ++ky)
                        for (int kx = 0; kx < s; ++kx) {
                            double sx = x1 + (bx + (kx + 0.5) / s) * bin_w;
                            double sy = y1 + (by + (ky + 0.5) / s) * bin_h;
                            Corners k = bilinear_corners(sx, sy, w, h);
                            long long o = static_cast<long long>(by) * out_w + bx;
                            for (int ch = 0; ch < c; ++ch) {
                                double g = gb[static_cast<long long>(ch) * out_plane + o] * inv_samples;
                                double* d = nf.grad.data() + static_cast<long long>(ch) * plane;
                                d[static_cast<long long>(k.y0) * w + k.x0] += g * k.w00;
                                d[static_cast<long long>(k.y0) * w + k.x1] += g * k.w01;
                                d[static_cast<long long>(k.y1) * w + k.x0] += g * k.w10;
                                d[static_cast<long long>(k.y1) * w + k.x1] += g * k.w11;
                            }
                        }
        }
    });
    return y;
}

// ---- losses ----

Tensor cross_entropy_from_probs(const Tensor& probs, const std::vector<int>& labels) {
    int n, k;
    if (probs.ndim() == 1) {
        n = 1;
        k = probs.dim(0);
    } else {
        require(probs.ndim() == 2, "cross_entropy: probs must be (K) or (n,K)");
        n = probs.dim(0);
        k = probs.dim(1);
    }
    require(static_cast<int>(labels.size()) == n, "cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= k) throw ShapeError("cross_entropy: class label out of range");
    Tensor loss = make_result({1}, {probs}, "cross_entropy");
    const double* p = probs.data();
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += -std::log(std::max(p[static_cast<long long>(i) * k + labels[static_cast<size_t>(i)]], kProbClamp));
    loss.data()[0] = acc / n;
    finish_op(loss, [labels, n, k](Node& self) {
        Node& np = self.parents[0].node();
        if (!np.requires_grad) return;
        np.ensure_grad();
        double g = self.grad[0] / n;
        for (int i = 0; i < n; ++i) {
            long long idx = static_cast<long long>(i) * k + labels[static_cast<size_t>(i)];
            double pv = np.value[idx];
            if (pv > kProbClamp) np.grad[idx] += -g / pv;
        }
    });
    return loss;
}

Tensor l1_loss_sum(const Tensor& pred, const std::vector<double>& target, double divisor) {
    require(static_cast<long long>(target.size()) == pred.numel(), "l1_loss: length mismatch");
    require(divisor > 0, "l1_loss: divisor must be positive");
    Tensor loss = make_result({1}, {pred}, "l1_loss");
    const double* p = pred.data();
    double acc = 0;
    for (size_t i = 0; i < target.size(); ++i) acc += std::abs(p[i] - target[i]);
    loss.data()[0] = acc / divisor;
    finish_op(loss, [target, divisor](Node& self) {
        Node& np = self.parents[0].node();
        if (!np.requires_grad) return;
        np.ensure_grad();
        double g = self.grad[0] / divisor;
        for (size_t i = 0; i < target.size(); ++i) {
            double d = np.value[i] - target[i];
            np.grad[i] += d > 0 ? g : (d < 0 ? -g : 0.0);
        }
    });
    return loss;
}

Tensor bce_from_probs(const Tensor& probs, const std::vector<double>& targets) {
    require(static_cast<long long>(targets.size()) == probs.numel(), "bce: length mismatch");
    long long n = probs.numel();
    Tensor loss = make_result({1}, {probs}, "bce");
    const double* p = probs.data();
    double acc = 0;
    for (long long i = 0; i < n; ++i) {
        double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        double y = targets[static_cast<size_t>(i)];
        acc += y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
    loss.data()[0] = -acc / static_cast<double>(n);
    finish_op(loss, [targets, n](Node& self) {
        Node& np = self.parents[0].node();
        if (!np.requires_grad) return;
        np.ensure_grad();
        double g = self.grad[0] / static_cast<double>(n);
        for (long long i = 0; i < n; ++i) {
            double pv = np.value[i];
            if (pv <= kProbClamp || pv >= 1.0 - kProbClamp) continue;
            double y = targets[static_cast<size_t>(i)];
            np.grad[i] += -g * (y / pv - (1.0 - y) / (1.0 - pv));
        }
    });
    return loss;
}

}  // namespace cb
