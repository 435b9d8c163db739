#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metassm/tensor.hpp"

namespace metassm {

enum class OpKind : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    Square,
    Mean,
    Sum,
    Slice,
    Concat,
    Reshape,
    Transpose,
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::ScalarMul: return "scalar_mul";
        case OpKind::Relu: return "relu";
        case OpKind::Square: return "square";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
        case OpKind::Slice: return "slice";
        case OpKind::Concat: return "concat";
        case OpKind::Reshape: return "reshape";
        case OpKind::Transpose: return "transpose";
    }
    return "?";
}

class Graph;

// Handle to a node owned by a Graph. Cheap to copy.
struct Var {
    Graph* graph = nullptr;
    std::uint32_t id = 0;

    bool valid() const { return graph != nullptr; }
    bool operator==(const Var& other) const { return graph == other.graph && id == other.id; }
};

struct OpAttrs {
    double scalar = 0.0;
    std::size_t axis = 0;
    std::size_t start = 0;
    std::size_t len = 0;
    Shape target_shape;
};

class GradientMap;

// Define-by-run computation tape. Nodes are appended in evaluation order, so
// the tape index order is a topological order of the DAG. A graph instance is
// confined to one thread at a time.
class Graph {
public:
    Graph() { nodes_.reserve(256); }

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = true) {
        if (!value.all_finite()) throw NumericError("leaf: non-finite tensor");
        return push(OpKind::Leaf, std::move(value), {}, requires_grad && grad_enabled(), {});
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var apply(OpKind op, std::span<const Var> inputs, const OpAttrs& attrs = {}) {
        std::vector<std::uint32_t> parents;
        parents.reserve(inputs.size());
        bool rg = false;
        for (const Var& v : inputs) {
            check_owned(v);
            parents.push_back(v.id);
            rg = rg || nodes_[v.id].requires_grad;
        }
        Tensor value = forward(op, parents, attrs);
        if (!value.all_finite()) {
            throw NumericError(std::string(op_name(op)) + ": produced non-finite values");
        }
        return push(op, std::move(value), std::move(parents), rg && grad_enabled(), attrs);
    }

    // Named builders over apply().
    Var matmul(Var a, Var b) { return apply(OpKind::MatMul, std::array{a, b}); }
    Var add(Var a, Var b) { return apply(OpKind::Add, std::array{a, b}); }
    Var sub(Var a, Var b) { return apply(OpKind::Sub, std::array{a, b}); }
    Var mul(Var a, Var b) { return apply(OpKind::Mul, std::array{a, b}); }
    Var scal(double c, Var a) {
        OpAttrs attrs;
        attrs.scalar = c;
        return apply(OpKind::ScalarMul, std::array{a}, attrs);
    }
    Var relu(Var a) { return apply(OpKind::Relu, std::array{a}); }
    Var square(Var a) { return apply(OpKind::Square, std::array{a}); }
    Var mean(Var a) { return apply(OpKind::Mean, std::array{a}); }
    Var sum(Var a) { return apply(OpKind::Sum, std::array{a}); }
    Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
        OpAttrs attrs;
        attrs.axis = axis;
        attrs.start = start;
        attrs.len = len;
        return apply(OpKind::Slice, std::array{a}, attrs);
    }
    Var concat(std::span<const Var> parts, std::size_t axis) {
        OpAttrs attrs;
        attrs.axis = axis;
        return apply(OpKind::Concat, parts, attrs);
    }
    Var reshape(Var a, Shape target) {
        OpAttrs attrs;
        attrs.target_shape = std::move(target);
        return apply(OpKind::Reshape, std::array{a}, attrs);
    }
    Var transpose(Var a) { return apply(OpKind::Transpose, std::array{a}); }

    const Tensor& value(Var v) const {
        check_owned(v);
        return nodes_[v.id].value;
    }

    OpKind op(Var v) const {
        check_owned(v);
        return nodes_[v.id].op;
    }

    bool requires_grad(Var v) const {
        check_owned(v);
        return nodes_[v.id].requires_grad;
    }

    std::size_t size() const { return nodes_.size(); }

    GradientMap backward(Var loss, std::span<const Var> wrt, bool create_graph = false);

    // While a guard is alive, newly created nodes never require grad. Used by
    // backward when create_graph is off, so returned gradients are detached.
    class NoGradGuard {
    public:
        explicit NoGradGuard(Graph& g) : graph_(g) { ++graph_.no_grad_depth_; }
        ~NoGradGuard() { --graph_.no_grad_depth_; }
        NoGradGuard(const NoGradGuard&) = delete;
        NoGradGuard& operator=(const NoGradGuard&) = delete;

    private:
        Graph& graph_;
    };

private:
    struct Node {
        OpKind op;
        Tensor value;
        std::vector<std::uint32_t> parents;
        bool requires_grad;
        OpAttrs attrs;
    };

    friend class GradientMap;

    bool grad_enabled() const { return no_grad_depth_ == 0; }

    void check_owned(const Var& v) const {
        if (v.graph != this || v.id >= nodes_.size()) {
            throw Error("graph: variable does not belong to this graph");
        }
    }

    Var push(OpKind op, Tensor value, std::vector<std::uint32_t> parents, bool rg,
             OpAttrs attrs) {
        nodes_.push_back(Node{op, std::move(value), std::move(parents), rg, std::move(attrs)});
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Tensor forward(OpKind op, const std::vector<std::uint32_t>& p, const OpAttrs& attrs) const {
        auto val = [&](std::size_t i) -> const Tensor& { return nodes_[p.at(i)].value; };
        switch (op) {
            case OpKind::Leaf:
                throw Error("apply: leaf is not an applicable op");
            case OpKind::MatMul: return kernels::matmul(val(0), val(1));
            case OpKind::Add: return kernels::add(val(0), val(1));
            case OpKind::Sub: return kernels::sub(val(0), val(1));
            case OpKind::Mul: return kernels::mul(val(0), val(1));
            case OpKind::ScalarMul: return kernels::scalar_mul(attrs.scalar, val(0));
            case OpKind::Relu: return kernels::relu(val(0));
            case OpKind::Square: return kernels::square(val(0));
            case OpKind::Mean: return kernels::mean(val(0));
            case OpKind::Sum: return kernels::sum(val(0));
            case OpKind::Slice: return kernels::slice(val(0), attrs.axis, attrs.start, attrs.len);
            case OpKind::Concat: {
                std::vector<Tensor> parts;
                parts.reserve(p.size());
                for (std::uint32_t id : p) parts.push_back(nodes_[id].value);
                return kernels::concat(parts, attrs.axis);
            }
            case OpKind::Reshape: return kernels::reshape(val(0), attrs.target_shape);
            case OpKind::Transpose: return kernels::transpose(val(0));
        }
        throw Error("apply: unknown op");
    }

    // vjp: push gradient g at node `id` to parent slot `slot`; returns the
    // contribution node, or nullopt when no gradient flows to that parent.
    std::optional<Var> vjp(std::uint32_t id, std::size_t slot, Var g) {
        const Node& n = nodes_[id];
        Var self{this, id};
        auto parent = [&](std::size_t i) { return Var{this, n.parents.at(i)}; };
        switch (n.op) {
            case OpKind::Leaf:
                return std::nullopt;
            case OpKind::MatMul: {
                Var a = parent(0), b = parent(1);
                const bool vec = nodes_[b.id].value.rank() == 1;
                if (slot == 0) {
                    if (vec) {
                        const std::size_t m = nodes_[a.id].value.dim(0);
                        const std::size_t k = nodes_[a.id].value.dim(1);
                        return matmul(reshape(g, {m, 1}), reshape(b, {1, k}));
                    }
                    return matmul(g, transpose(b));
                }
                return matmul(transpose(a), g);
            }
            case OpKind::Add:
                return g;
            case OpKind::Sub:
                return slot == 0 ? g : scal(-1.0, g);
            case OpKind::Mul:
                return mul(g, parent(slot == 0 ? 1 : 0));
            case OpKind::ScalarMul:
                return scal(n.attrs.scalar, g);
            case OpKind::Relu: {
                const Tensor& x = nodes_[n.parents[0]].value;
                Tensor mask = Tensor::zeros(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] > 0.0 ? 1.0 : 0.0;
                return mul(g, constant(std::move(mask)));
            }
            case OpKind::Square:
                return scal(2.0, mul(g, parent(0)));
            case OpKind::Mean:
            case OpKind::Sum: {
                const Tensor& x = nodes_[n.parents[0]].value;
                const double f =
                    n.op == OpKind::Mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
                Var row = constant(Tensor::full({1, x.size()}, f));
                return reshape(matmul(reshape(g, {1, 1}), row), x.shape());
            }
            case OpKind::Slice: {
                const Tensor& x = nodes_[n.parents[0]].value;
                std::vector<Var> parts;
                if (n.attrs.start > 0) {
                    Shape s = x.shape();
                    s[n.attrs.axis] = n.attrs.start;
                    parts.push_back(constant(Tensor::zeros(std::move(s))));
                }
                parts.push_back(g);
                const std::size_t rest = x.dim(n.attrs.axis) - n.attrs.start - n.attrs.len;
                if (rest > 0) {
                    Shape s = x.shape();
                    s[n.attrs.axis] = rest;
                    parts.push_back(constant(Tensor::zeros(std::move(s))));
                }
                return parts.size() == 1 ? g : concat(parts, n.attrs.axis);
            }
            case OpKind::Concat: {
                std::size_t offset = 0;
                for (std::size_t i = 0; i < slot; ++i) {
                    offset += nodes_[n.parents[i]].value.dim(n.attrs.axis);
                }
                const std::size_t len = nodes_[n.parents[slot]].value.dim(n.attrs.axis);
                return slice(g, n.attrs.axis, offset, len);
            }
            case OpKind::Reshape:
                return reshape(g, nodes_[n.parents[0]].value.shape());
            case OpKind::Transpose:
                return transpose(g);
        }
        (void)self;
        return std::nullopt;
    }

    std::vector<Node> nodes_;
    int no_grad_depth_ = 0;
};

// Gradients keyed by parameter identity (the wrt nodes passed to backward).
// Entries are themselves graph nodes; when backward ran without create_graph
// they are detached (requires_grad = false).
class GradientMap {
public:
    explicit GradientMap(Graph* g) : graph_(g) {}

    void set(Var param, Var grad) { map_[param.id] = grad.id; }

    bool contains(Var param) const { return map_.count(param.id) > 0; }

    Var node(Var param) const {
        auto it = map_.find(param.id);
        if (it == map_.end()) throw Error("gradient map: unknown parameter");
        return Var{graph_, it->second};
    }

    const Tensor& tensor(Var param) const { return graph_->value(node(param)); }

private:
    Graph* graph_;
    std::unordered_map<std::uint32_t, std::uint32_t> map_;
};

inline GradientMap Graph::backward(Var loss, std::span<const Var> wrt, bool create_graph) {
    check_owned(loss);
    if (!nodes_[loss.id].value.is_scalar()) {
        throw ShapeError("backward: loss must be scalar, got shape " +
                         shape_str(nodes_[loss.id].value.shape()));
    }
    for (const Var& w : wrt) {
        check_owned(w);
        if (!nodes_[w.id].requires_grad) {
            throw Error("backward: wrt node does not require grad");
        }
    }

    const std::size_t n = loss.id + 1;

    // Nodes on a path from some wrt node up to the loss.
    std::vector<char> desc(n, 0);
    for (const Var& w : wrt) {
        if (w.id < n) desc[w.id] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (desc[i]) continue;
        for (std::uint32_t p : nodes_[i].parents) {
            if (p < n && desc[p]) {
                desc[i] = 1;
                break;
            }
        }
    }

    std::vector<char> anc(n, 0);
    {
        std::vector<std::uint32_t> stack{loss.id};
        anc[loss.id] = 1;
        while (!stack.empty()) {
            std::uint32_t id = stack.back();
            stack.pop_back();
            for (std::uint32_t p : nodes_[id].parents) {
                if (!anc[p] && nodes_[p].requires_grad && desc[p]) {
                    anc[p] = 1;
                    stack.push_back(p);
                }
            }
        }
    }

    constexpr std::uint32_t kNone = UINT32_MAX;
    std::vector<std::uint32_t> grad(n, kNone);

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace(*this);

    grad[loss.id] =
        constant(Tensor::full(nodes_[loss.id].value.shape(), 1.0)).id;

    for (std::size_t i = n; i-- > 0;) {
        if (!anc[i] || grad[i] == kNone || !nodes_[i].requires_grad || !desc[i]) continue;
        Var g{this, grad[i]};
        const auto& parents = nodes_[i].parents;
        for (std::size_t slot = 0; slot < parents.size(); ++slot) {
            const std::uint32_t p = parents[slot];
            if (!nodes_[p].requires_grad || !desc[p] || !anc[p]) continue;
            std::optional<Var> contrib = vjp(static_cast<std::uint32_t>(i), slot, g);
            if (!contrib) continue;
            grad[p] = grad[p] == kNone ? contrib->id : add(Var{this, grad[p]}, *contrib).id;
        }
    }

    GradientMap out(this);
    for (const Var& w : wrt) {
        if (w.id < n && grad[w.id] != kNone) {
            out.set(w, Var{this, grad[w.id]});
        } else {
            out.set(w, constant(Tensor::zeros(nodes_[w.id].value.shape())));
        }
    }
    return out;
}

}  // namespace metassm
