#pragma once

// Recorded-tape reverse-mode differentiation over dense double tensors.
//
// A Tape owns every value computed while building a loss. Operations append a
// node holding the result and a closure that pushes the output gradient back
// to the node's inputs. Nodes are appended in evaluation order, so the tape is
// always topologically sorted and backward is a single reverse sweep.

#include "timepd/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace timepd {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

    void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as its tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradient store produced by one backward sweep, keyed by node id.
class Gradients {
public:
    /// Gradient of a requires-grad node. Nodes the loss does not reach get zeros.
    Tensor operator[](Var v) const;
    /// nullptr when no gradient flowed into the node.
    const Tensor* find(Var v) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::optional<Tensor>> slots_;
};

/// Pushes grad_out into the input gradient slots. Null slots belong to inputs
/// that do not require grad. Implementations must accumulate (+=).
using BackwardFn = std::function<void(const Tensor& grad_out, std::vector<Tensor*>& grad_inputs)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad = true);

    /// Appends an op result. The node requires grad iff some input does, in
    /// which case `backward` must be provided.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

    /// Reverse sweep from a scalar loss node on this tape.
    Gradients backward(Var loss) const;

    std::size_t size() const { return nodes_.size(); }
    /// Value of node `id`; the next recorded node gets id size().
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }

private:
    friend class Var;
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };
    // deque: node references stay valid while the tape grows.
    std::deque<Node> nodes_;
};

/// Maps model parameters onto nodes of one tape.
///
/// In trainable mode unfrozen parameters become grad-requiring leaves and
/// frozen ones become constants, so frozen parameters never receive a
/// gradient slot unless `force_frozen` is set.
class Binding {
public:
    enum class Mode { trainable, constant };

    Binding(Tape& tape, Mode mode, bool force_frozen = false)
        : tape_(&tape), mode_(mode), force_frozen_(force_frozen) {}

    Var operator()(Parameter& p);
    Tape& tape() const { return *tape_; }
    Mode mode() const { return mode_; }

    /// Adds the gradients of every bound trainable parameter into Parameter::grad.
    void accumulate(const Gradients& grads) const;
    /// Gradient of a bound parameter, or zeros when it was not bound/trainable.
    Tensor gradient(const Gradients& grads, const Parameter& p) const;

private:
    Tape* tape_;
    Mode mode_;
    bool force_frozen_;
    std::unordered_map<const Parameter*, Var> bound_;
    std::vector<Parameter*> order_;
};

namespace ops {

// Elementwise binary ops broadcast with numpy rules.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var x, double factor);
Var square(Var x);
Var abs(Var x);
Var exp(Var x);
/// tanh-approximated GELU.
Var gelu(Var x);

/// Full reduction to a rank-0 tensor.
Var sum(Var x);
Var mean(Var x);

/// a [..., m, k] times b [k, n] (shared) or b [..., k, n] (same leading dims).
Var matmul(Var a, Var b);
/// Swaps the last two axes.
Var transpose(Var x);
Var reshape(Var x, Shape shape);

/// Softmax over the last axis.
Var softmax(Var x);
/// Normalizes over the last axis to zero mean and unit variance (no affine).
Var layer_normalize(Var x, double eps = 1e-5);

/// Moving average with an odd window along `axis`; edges replicate-padded so
/// the output keeps the input length.
Var avg_pool_1d(Var x, std::size_t kernel, std::size_t axis = 1);

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// x [B, L, E] -> [B, N, patch*E], N = (L - patch) / stride + 1, remainder dropped.
Var unfold(Var x, std::size_t patch, std::size_t stride);

/// Inverted dropout: kept values scaled by 1/(1-p). Mask is a pure function of
/// (seed, shape), so replays are bit-identical.
Var dropout(Var x, double p, std::uint64_t seed);
/// x * mask with a constant mask of the same shape.
Var mask_mul(Var x, const Tensor& mask);

/// Mean squared error over all elements.
Var mse(Var prediction, Var target);

} // namespace ops

/// Keep-mask used by ops::dropout, exposed for tests.
Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed);

/// Scalar-valued graph builder: receives the tape and the input node.
using ScalarGraphFn = std::function<Var(Tape&, Var)>;

/// max_i |g_ad - g_fd| / max(1, |g_fd|) with central differences of step eps.
double check_gradients(const ScalarGraphFn& f, const Tensor& x, double eps = 1e-5);

} // namespace timepd
