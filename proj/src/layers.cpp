#include "cb/layers.hpp"

#include <cmath>

namespace cb {

Tensor ParamStore::param(const std::string& name, Shape shape, double normal_std) {
    if (find_param(name)) throw ConfigError("duplicate parameter name: " + name);
    Tensor t = Tensor::zeros(shape, true);
    if (normal_std > 0) {
        std::normal_distribution<double> dist(0.0, normal_std);
        for (double& v : t.values()) v = dist(rng_);
    }
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::param_const(const std::string& name, Shape shape, double value) {
    if (find_param(name)) throw ConfigError("duplicate parameter name: " + name);
    Tensor t = Tensor::full(shape, value, true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamStore::buffer(const std::string& name, Shape shape, double value) {
    if (find_buffer(name)) throw ConfigError("duplicate buffer name: " + name);
    Tensor t = Tensor::full(shape, value, false);
    buffers_.push_back({name, t});
    return t;
}

Tensor* ParamStore::find_param(const std::string& name) {
    for (auto& e : params_)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

Tensor* ParamStore::find_buffer(const std::string& name) {
    for (auto& e : buffers_)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& e : params_) e.tensor.zero_grad();
}

long long ParamStore::param_count() const {
    long long n = 0;
    for (const auto& e : params_) n += e.tensor.numel();
    return n;
}

double ParamStore::grad_norm(const std::string& prefix) const {
    double s = 0;
    for (const auto& e : params_) {
        if (e.name.rfind(prefix, 0) != 0) continue;
        if (!e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad()) s += g * g;
    }
    return std::sqrt(s);
}

void ParamStore::set_requires_grad(const std::string& prefix, bool rg) {
    for (auto& e : params_)
        if (e.name.rfind(prefix, 0) == 0) e.tensor.set_requires_grad(rg);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int in_c, int out_c, int kernel, int stride_,
               int pad_, bool bias, double std_override)
    : stride(stride_), pad(pad_) {
    double std = std_override >= 0 ? std_override
                                   : std::sqrt(2.0 / (static_cast<double>(in_c) * kernel * kernel));
    w = ps.param(name + ".weight", {out_c, in_c, kernel, kernel}, std);
    if (bias) b = ps.param(name + ".bias", {out_c}, 0.0);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& ps, const std::string& name, int in_c, int out_c,
                                 int kernel, int stride_, int pad_, bool bias)
    : stride(stride_), pad(pad_) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_c) * kernel * kernel));
    w = ps.param(name + ".weight", {in_c, out_c, kernel, kernel}, std);
    if (bias) b = ps.param(name + ".bias", {out_c}, 0.0);
}

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& name, int channels) : store(&ps) {
    gamma = ps.param_const(name + ".gamma", {channels}, 1.0);
    beta = ps.param_const(name + ".beta", {channels}, 0.0);
    running_mean = ps.buffer(name + ".running_mean", {channels}, 0.0);
    running_var = ps.buffer(name + ".running_var", {channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
    bool batched = x.ndim() == 4;
    int c = batched ? x.dim(1) : x.dim(0);
    if (c != gamma.dim(0)) throw ShapeError("batch_norm: channel count mismatch");
    Shape gate_shape = batched ? Shape{1, c, 1, 1} : Shape{c, 1, 1};
    bool training = store == nullptr || store->training;
    if (training) {
        Tensor m = channel_mean(x);
        Tensor xc = broadcast_add(x, reshape(scale(m, -1.0), gate_shape));
        Tensor var = channel_mean(mul(xc, xc));
        Tensor inv = rsqrt_shift(var, eps);
        Tensor y = broadcast_mul(xc, reshape(mul(inv, gamma), gate_shape));
        y = broadcast_add(y, reshape(beta, gate_shape));
        // track running statistics (unbiased variance, conventional momentum update)
        long long nhw = x.numel() / c;
        double unbias = nhw > 1 ? static_cast<double>(nhw) / (nhw - 1) : 1.0;
        double* rm = const_cast<Tensor&>(running_mean).data();
        double* rv = const_cast<Tensor&>(running_var).data();
        for (int i = 0; i < c; ++i) {
            rm[i] = (1.0 - momentum) * rm[i] + momentum * m.data()[i];
            rv[i] = (1.0 - momentum) * rv[i] + momentum * var.data()[i] * unbias;
        }
        return y;
    }
    Tensor inv = rsqrt_shift(running_var, eps);
    Tensor shift = mul(running_mean, scale(mul(inv, gamma), -1.0));
    Tensor y = broadcast_mul(x, reshape(mul(inv, gamma), gate_shape));
    return broadcast_add(y, reshape(add(beta, shift), gate_shape));
}

Linear::Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim, bool bias,
               double std_override) {
    double std = std_override >= 0 ? std_override : std::sqrt(2.0 / in_dim);
    w = ps.param(name + ".weight", {out_dim, in_dim}, std);
    if (bias) b = ps.param(name + ".bias", {out_dim}, 0.0);
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& name, int dim) {
    gamma = ps.param_const(name + ".gamma", {dim}, 1.0);
    beta = ps.param_const(name + ".beta", {dim}, 0.0);
}

}  // namespace cb
