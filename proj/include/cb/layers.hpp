#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cb/ops.hpp"
#include "cb/tensor.hpp"

namespace cb {

// Named parameter/buffer registry for a model. Parameters are trainable leaves;
// buffers hold non-trainable state (batch-norm running statistics). Creation
// order is the serialization order, and init draws come from the store's rng,
// so construction is deterministic per seed.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    explicit ParamStore(std::uint64_t seed) : rng_(seed) {}
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    // normal_std == 0 creates a zero-filled parameter.
    Tensor param(const std::string& name, Shape shape, double normal_std);
    Tensor param_const(const std::string& name, Shape shape, double value);
    Tensor buffer(const std::string& name, Shape shape, double value);

    std::vector<Entry>& params() { return params_; }
    const std::vector<Entry>& params() const { return params_; }
    std::vector<Entry>& buffers() { return buffers_; }
    const std::vector<Entry>& buffers() const { return buffers_; }

    Tensor* find_param(const std::string& name);
    Tensor* find_buffer(const std::string& name);

    void zero_grad();
    long long param_count() const;
    // L2 norm of all gradients under a name prefix ("" = everything).
    double grad_norm(const std::string& prefix = "") const;
    void set_requires_grad(const std::string& prefix, bool rg);

    bool training = true;

    std::mt19937_64& rng() { return rng_; }

private:
    std::vector<Entry> params_;
    std::vector<Entry> buffers_;
    std::mt19937_64 rng_;
};

struct Conv2d {
    Tensor w, b;
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int in_c, int out_c, int kernel, int stride,
           int pad, bool bias = true, double std_override = -1.0);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct ConvTranspose2d {
    Tensor w, b;
    int stride = 1, pad = 0;
    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& ps, const std::string& name, int in_c, int out_c, int kernel,
                    int stride, int pad, bool bias = true);
    Tensor forward(const Tensor& x) const { return conv_transpose2d(x, w, b, stride, pad); }
};

struct BatchNorm2d {
    Tensor gamma, beta, running_mean, running_var;
    ParamStore* store = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
    // affine=false freezes gamma/beta at 1/0 (they stay out of the param list).
    BatchNorm2d() = default;
    BatchNorm2d(ParamStore& ps, const std::string& name, int channels);
    Tensor forward(const Tensor& x) const;
};

struct Linear {
    Tensor w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim, bool bias = true,
           double std_override = -1.0);
    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

struct LayerNormLayer {
    Tensor gamma, beta;
    double eps = 1e-5;
    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& ps, const std::string& name, int dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
};

}  // namespace cb
