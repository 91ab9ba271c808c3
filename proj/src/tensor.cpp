#include "cb/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cb {

long long numel_of(const Shape& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

void Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

Node& Tensor::node() const {
    if (!n_) throw ShapeError("use of undefined tensor");
    return *n_;
}

int Tensor::dim(int i) const {
    const Shape& s = node().shape;
    if (i < 0) i += static_cast<int>(s.size());
    if (i < 0 || i >= static_cast<int>(s.size())) throw ShapeError("dim index out of range");
    return s[static_cast<size_t>(i)];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (static_cast<long long>(data.size()) != numel_of(n->shape))
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(n->shape));
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

double* Tensor::grad_data() {
    node().ensure_grad();
    return node().grad.data();
}

const std::vector<double>& Tensor::grad() const {
    if (node().grad.empty()) const_cast<Node&>(node()).ensure_grad();
    return node().grad;
}

double Tensor::grad_norm() const {
    if (node().grad.empty()) return 0.0;
    double s = 0.0;
    for (double g : node().grad) s += g * g;
    return std::sqrt(s);
}

void Tensor::zero_grad() {
    if (!node().grad.empty()) std::fill(node().grad.begin(), node().grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node().value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw ShapeError("at(): rank mismatch");
    long long flat = 0;
    size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[k]) throw ShapeError("at(): index out of bounds");
        flat = flat * s[k] + i;
        ++k;
    }
    return node().value[static_cast<size_t>(flat)];
}

Tensor Tensor::detach() const {
    return from_data(shape(), node().value, false);
}

void Tensor::backward() {
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
    if (!requires_grad()) return;

    // Iterative post-order DFS for topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({&node(), 0});
    seen.insert(&node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = &f.node->parents[f.next_parent++].node();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    node().ensure_grad();
    node().grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

Tensor make_result(Shape shape, std::vector<Tensor> parents, const char* op) {
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
    n->requires_grad = rg;
    n->op = op;
    if (rg) n->parents = std::move(parents);
    return Tensor::wrap(std::move(n));
}

void finish_op(Tensor& t, std::function<void(Node&)> backprop) {
    check_finite(t, t.node().op);
    if (t.requires_grad()) t.node().backprop = std::move(backprop);
}

bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

void check_finite(const Tensor& t, const char* op) {
    if (!finite_checks()) return;
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw NumericError(std::string("op '") + op + "' produced a non-finite value");
    }
}

}  // namespace cb
