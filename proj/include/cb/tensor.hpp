#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "cb/errors.hpp"

namespace cb {

// Dense 64-bit float tensor with reverse-mode autodiff. Values are immutable
// once an op has produced them; only leaf tensors (parameters) are updated in
// place by the optimizer. Graphs are rebuilt on every forward pass.
using Shape = std::vector<int>;

long long numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads
    const char* op = "leaf";

    void ensure_grad();
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    int ndim() const { return static_cast<int>(node().shape.size()); }
    int dim(int i) const;
    long long numel() const { return static_cast<long long>(node().value.size()); }
    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool rg) { node().requires_grad = rg; }

    double* data() { return node().value.data(); }
    const double* data() const { return node().value.data(); }
    std::vector<double>& values() { return node().value; }
    const std::vector<double>& values() const { return node().value; }

    double* grad_data();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !node().grad.empty(); }
    double grad_norm() const;
    void zero_grad();

    double item() const;
    // Row-major element access, for tests and small fixtures.
    double at(std::initializer_list<int> idx) const;

    // Copies values into a fresh leaf with requires_grad=false.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar. Accumulates into .grad of every
    // reachable tensor that requires grad.
    void backward();

    Node& node() const;
    const std::shared_ptr<Node>& ptr() const { return n_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

// Creates the result node for an op: value sized to shape, requires_grad
// inherited from parents. The caller fills value and then installs backprop
// via finish_op (which also runs the finite-value check).
Tensor make_result(Shape shape, std::vector<Tensor> parents, const char* op);
void finish_op(Tensor& t, std::function<void(Node&)> backprop);

// Global toggle: verify every op output is finite (NaN/Inf is a hard error).
bool& finite_checks();
void check_finite(const Tensor& t, const char* op);

}  // namespace cb
