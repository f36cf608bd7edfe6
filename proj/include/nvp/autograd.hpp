#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvp/tensor.hpp"

namespace nvp {

/// Named learnable tensor. Gradients are written by GradTape::backward for
/// every parameter watched on the tape; shapes of value and grad always match.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

class GradTape;

/// Handle to a node on a GradTape.
struct Var {
    GradTape* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    const Shape& shape() const;
    int64_t numel() const { return value().numel(); }
};

/// Reverse-mode tape. Primitive ops are recorded in execution order and the
/// backward pass replays them in exact reverse. A tape is single-owner: record
/// and backward happen on one logical thread, and one tape serves one forward
/// pass. Node storage is a deque so value references stay stable while
/// recording.
class GradTape {
public:
    using BackwardFn = std::function<void(GradTape&)>;

    // Node whose value is never differentiated (masks, running statistics).
    Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

    Var leaf(Tensor value, bool requires_grad) {
        return push(std::move(value), requires_grad, nullptr);
    }

    // Leaf bound to a Parameter. Watching the same parameter twice on one
    // tape returns the same node, so gradient contributions accumulate.
    Var watch(Parameter& p);

    // Records a primitive. `backward` reads grad(out) and accumulates into
    // the grads of the inputs; it is dropped when no input requires grad.
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be
    // scalar. Every watched parameter's grad is zeroed first and then receives
    // dLoss/dParam; parameters the loss does not reach stay at zero.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

    // Gradient accumulator for a node, allocated as zeros on first touch.
    Tensor& grad(Var v);
    bool has_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad.has_value(); }

    size_t size() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor value;
        std::optional<Tensor> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn fn);

    std::deque<Node> nodes_;
    std::vector<std::pair<int32_t, Parameter*>> watched_;
};

// ---- elementwise ops (equal shapes, or scalar / trailing-dim broadcast) ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);  // rejects non-positive entries
Var tanh(Var a);
Var relu(Var a);
Var rsqrt(Var a);  // 1/sqrt(a), a > 0
Var add_scalar(Var a, real_t c);
Var mul_scalar(Var a, real_t c);
Var mul_const(Var a, const Tensor& c);  // broadcastable constant factor

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---- reductions and shape ops ----

Var sum(Var a);             // -> [1]
Var mean(Var a);            // -> [1]
Var sum_per_sample(Var a);  // [N, ...] -> [N]
Var channel_mean(Var a);    // [N, H, W, C] -> [C], mean over N,H,W
Var broadcast_to_samples(Var s, int64_t n);  // [1] -> [n]
Var reshape(Var a, Shape shape);
Var take_channels(Var a, int64_t from, int64_t to);  // [N,H,W,C] -> [N,H,W,to-from]
Var concat_channels(Var a, Var b);
Var tile_attrs(Var y, int64_t h, int64_t w);  // [N,K] -> [N,h,w,K]

// ---- convolution ----

// Same-padding stride-1 cross-correlation. x is [N,H,W,Cin] (or [H,W,C]),
// w is [kh,kw,Cin,Cout] with odd spatial extents, b is [Cout].
Var conv2d(Var x, Var w, Var b);
Var conv2d(Var x, Var w);

// Direction/magnitude reparametrization per output channel:
// w[..., o] = g[o] * v[..., o] / ||v[..., o]||.
Var weight_norm(Var v, Var g);

inline const Tensor& Var::value() const { return tape->value(*this); }
inline const Shape& Var::shape() const { return tape->value(*this).shape(); }

}  // namespace nvp
