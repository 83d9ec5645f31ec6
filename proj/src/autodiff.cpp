#include "timepd/autodiff.hpp"

#include "timepd/error.hpp"
#include "timepd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace timepd {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const {
    if (!tape_) throw Error("use of an unbound Var");
    return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite output in ") + op);
    }
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        if (in.tape() != this) throw Error(std::string(op) + ": input belongs to another tape");
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || in.requires_grad();
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
    if (loss.tape() != this) throw Error("backward: loss is not on this tape");
    const Tensor& loss_value = nodes_[loss.id()].value;
    if (loss_value.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + to_string(loss_value.shape()));
    }
    Gradients grads;
    grads.tape_ = this;
    grads.slots_.resize(nodes_.size());
    if (!nodes_[loss.id()].requires_grad) return grads;
    grads.slots_[loss.id()] = Tensor::ones(loss_value.shape());

    std::vector<Tensor*> input_slots;
    for (std::size_t idx = loss.id() + 1; idx-- > 0;) {
        const Node& node = nodes_[idx];
        if (!grads.slots_[idx] || !node.backward) continue;
        input_slots.assign(node.inputs.size(), nullptr);
        for (std::size_t j = 0; j < node.inputs.size(); ++j) {
            const std::size_t in = node.inputs[j];
            if (!nodes_[in].requires_grad) continue;
            auto& slot = grads.slots_[in];
            if (!slot) slot = Tensor::zeros(nodes_[in].value.shape());
            input_slots[j] = &*slot;
        }
        node.backward(*grads.slots_[idx], input_slots);
    }
    return grads;
}

Tensor Gradients::operator[](Var v) const {
    if (v.tape() != tape_) throw Error("gradient lookup: node is not on this tape");
    if (!v.requires_grad()) throw Error("gradient lookup: node does not require grad");
    if (const Tensor* g = find(v)) return *g;
    return Tensor::zeros(v.shape());
}

const Tensor* Gradients::find(Var v) const {
    if (v.tape() != tape_ || v.id() >= slots_.size() || !slots_[v.id()]) return nullptr;
    return &*slots_[v.id()];
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

Var Binding::operator()(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    const bool trainable = mode_ == Mode::trainable && (!p.frozen || force_frozen_);
    Var v = trainable ? tape_->leaf(p.value, true) : tape_->constant(p.value);
    bound_.emplace(&p, v);
    if (trainable) order_.push_back(&p);
    return v;
}

void Binding::accumulate(const Gradients& grads) const {
    for (Parameter* p : order_) {
        if (const Tensor* g = grads.find(bound_.at(p))) {
            if (p->grad.shape() != p->value.shape()) p->zero_grad();
            p->grad.add_inplace(*g);
        }
    }
}

Tensor Binding::gradient(const Gradients& grads, const Parameter& p) const {
    auto it = bound_.find(&p);
    if (it != bound_.end() && it->second.requires_grad()) {
        if (const Tensor* g = grads.find(it->second)) return *g;
    }
    return Tensor::zeros(p.value.shape());
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                             to_string(b));
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

// For every flat index of `out`, the flat index of the broadcast source `in`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        stride[i + offset] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    const std::size_t n = numel(out);
    std::vector<std::size_t> index(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t flat = 0;
    for (std::size_t k = 0; k < n; ++k) {
        index[k] = flat;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            flat += stride[d];
            if (counter[d] < out[d]) break;
            flat -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    return index;
}

struct BinaryPlan {
    Shape out;
    bool same = false;
    std::vector<std::size_t> ia, ib;
};

BinaryPlan plan_binary(const Tensor& a, const Tensor& b, const char* op) {
    BinaryPlan plan;
    if (a.shape() == b.shape()) {
        plan.out = a.shape();
        plan.same = true;
        return plan;
    }
    plan.out = broadcast_shape(a.shape(), b.shape(), op);
    plan.ia = broadcast_index(a.shape(), plan.out);
    plan.ib = broadcast_index(b.shape(), plan.out);
    return plan;
}

template <class F>
Var unary(Var x, const char* op, F&& f, std::function<double(double, double)> dfdx) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    Tape* tape = x.tape();
    const Tensor* xp = &xv;
    const std::size_t out_id = tape->size();
    return tape->record(
        std::move(out), {x},
        [xp, tape, out_id, dfdx = std::move(dfdx)](const Tensor& g, std::vector<Tensor*>& gi) {
            const Tensor& y = tape->value(out_id);
            Tensor& gx = *gi[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx((*xp)[i], y[i]);
        },
        op);
}

void require_rank_at_least(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() < rank) {
        throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(rank) + ", got " +
                         to_string(t.shape()));
    }
}

struct AxisSplit {
    std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

namespace ops {

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto plan = plan_binary(av, bv, "add");
    Tensor out(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.ia[i]] + bv[plan.ib[i]];
    }
    return a.tape()->record(
        std::move(out), {a, b},
        [plan = std::move(plan)](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t side = 0; side < 2; ++side) {
                if (!gi[side]) continue;
                Tensor& t = *gi[side];
                if (plan.same) {
                    for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i];
                } else {
                    const auto& idx = side == 0 ? plan.ia : plan.ib;
                    for (std::size_t i = 0; i < g.size(); ++i) t[idx[i]] += g[i];
                }
            }
        },
        "add");
}

Var sub(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto plan = plan_binary(av, bv, "sub");
    Tensor out(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.ia[i]] - bv[plan.ib[i]];
    }
    return a.tape()->record(
        std::move(out), {a, b},
        [plan = std::move(plan)](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t side = 0; side < 2; ++side) {
                if (!gi[side]) continue;
                Tensor& t = *gi[side];
                const double sign = side == 0 ? 1.0 : -1.0;
                if (plan.same) {
                    for (std::size_t i = 0; i < g.size(); ++i) t[i] += sign * g[i];
                } else {
                    const auto& idx = side == 0 ? plan.ia : plan.ib;
                    for (std::size_t i = 0; i < g.size(); ++i) t[idx[i]] += sign * g[i];
                }
            }
        },
        "sub");
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto plan = plan_binary(av, bv, "mul");
    Tensor out(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan.ia[i]] * bv[plan.ib[i]];
    }
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    return a.tape()->record(
        std::move(out), {a, b},
        [plan = std::move(plan), ap, bp](const Tensor& g, std::vector<Tensor*>& gi) {
            if (plan.same) {
                if (gi[0])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (*bp)[i];
                if (gi[1])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * (*ap)[i];
                return;
            }
            if (gi[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[plan.ia[i]] += g[i] * (*bp)[plan.ib[i]];
            if (gi[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[plan.ib[i]] += g[i] * (*ap)[plan.ia[i]];
        },
        "mul");
}

Var scale(Var x, double factor) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
    return x.tape()->record(
        std::move(out), {x},
        [factor](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
        },
        "scale");
}

Var square(Var x) {
    return unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(Var x) {
    return unary(
        x, "abs", [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var exp(Var x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var gelu(Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    return unary(
        x, "gelu",
        [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(c * (v + a * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
        });
}

Var sum(Var x) {
    const Tensor& xv = x.value();
    const double total = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
    return x.tape()->record(
        Tensor::scalar(total), {x},
        [](const Tensor& g, std::vector<Tensor*>& gi) {
            const double gv = g[0];
            for (double& v : gi[0]->data()) v += gv;
        },
        "sum");
}

Var mean(Var x) {
    const Tensor& xv = x.value();
    if (xv.empty()) throw ShapeError("mean of empty tensor");
    const double n = static_cast<double>(xv.size());
    const double total = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
    return x.tape()->record(
        Tensor::scalar(total / n), {x},
        [n](const Tensor& g, std::vector<Tensor*>& gi) {
            const double gv = g[0] / n;
            for (double& v : gi[0]->data()) v += gv;
        },
        "mean");
}

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank_at_least(av, 2, "matmul");
    require_rank_at_least(bv, 2, "matmul");
    const std::size_t m = av.dim(av.rank() - 2);
    const std::size_t k = av.dim(av.rank() - 1);
    const std::size_t kb = bv.dim(bv.rank() - 2);
    const std::size_t n = bv.dim(bv.rank() - 1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions differ " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
    }
    const bool shared = bv.rank() == 2;
    if (!shared && (bv.rank() != av.rank() ||
                    !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin()))) {
        throw ShapeError("matmul: batch dimensions differ " + to_string(av.shape()) + " x " +
                         to_string(bv.shape()));
    }
    const std::size_t batch = av.size() / (m * k);
    Shape out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out(out_shape);
    const double* A = av.data().data();
    const double* B = bv.data().data();
    double* C = out.data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* Ab = A + bi * m * k;
        const double* Bb = shared ? B : B + bi * k * n;
        double* Cb = C + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = Cb + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = Ab[i * k + p];
                const double* brow = Bb + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }
    const Tensor* ap = &av;
    const Tensor* bp = &bv;
    return a.tape()->record(
        std::move(out), {a, b},
        [ap, bp, m, k, n, batch, shared](const Tensor& g, std::vector<Tensor*>& gi) {
            const double* A = ap->data().data();
            const double* B = bp->data().data();
            const double* G = g.data().data();
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const double* Ab = A + bi * m * k;
                const double* Bb = shared ? B : B + bi * k * n;
                const double* Gb = G + bi * m * n;
                if (gi[0]) {
                    double* dA = gi[0]->data().data() + bi * m * k;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = Gb + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double* brow = Bb + p * n;
                            double acc = 0.0;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            dA[i * k + p] += acc;
                        }
                    }
                }
                if (gi[1]) {
                    double* dB = gi[1]->data().data() + (shared ? 0 : bi * k * n);
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = Gb + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double aip = Ab[i * k + p];
                            double* drow = dB + p * n;
                            for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
                        }
                    }
                }
            }
        },
        "matmul");
}

Var transpose(Var x) {
    const Tensor& xv = x.value();
    require_rank_at_least(xv, 2, "transpose");
    const std::size_t r = xv.dim(xv.rank() - 2);
    const std::size_t c = xv.dim(xv.rank() - 1);
    const std::size_t batch = xv.size() / std::max<std::size_t>(1, r * c);
    Shape shape = xv.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    Tensor out(shape);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
    return x.tape()->record(
        std::move(out), {x},
        [r, c, batch](const Tensor& g, std::vector<Tensor*>& gi) {
            Tensor& gx = *gi[0];
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gx[b * r * c + i * c + j] += g[b * r * c + j * r + i];
        },
        "transpose");
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape()->record(
        std::move(out), {x},
        [](const Tensor& g, std::vector<Tensor*>& gi) {
            Tensor& gx = *gi[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        },
        "reshape");
}

Var softmax(Var x) {
    const Tensor& xv = x.value();
    require_rank_at_least(xv, 1, "softmax");
    const std::size_t n = xv.dim(xv.rank() - 1);
    const std::size_t rows = n ? xv.size() / n : 0;
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data().data() + r * n;
        double* o = out.data().data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    Tape* tape = x.tape();
    const std::size_t out_id = tape->size();
    return tape->record(
        std::move(out), {x},
        [tape, out_id, n, rows](const Tensor& g, std::vector<Tensor*>& gi) {
            const Tensor* yp = &tape->value(out_id);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = yp->data().data() + r * n;
                const double* gr = g.data().data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                double* dx = gi[0]->data().data() + r * n;
                for (std::size_t j = 0; j < n; ++j) dx[j] += yr[j] * (gr[j] - dot);
            }
        },
        "softmax");
}

Var layer_normalize(Var x, double eps) {
    const Tensor& xv = x.value();
    require_rank_at_least(xv, 1, "layer_normalize");
    const std::size_t n = xv.dim(xv.rank() - 1);
    const std::size_t rows = n ? xv.size() / n : 0;
    Tensor out(xv.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data().data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        double* o = out.data().data() + r * n;
        for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mu) * inv_std[r];
    }
    Tape* tape = x.tape();
    const std::size_t out_id = tape->size();
    return tape->record(
        std::move(out), {x},
        [tape, out_id, n, rows, inv_std = std::move(inv_std)](const Tensor& g, std::vector<Tensor*>& gi) {
            const Tensor* yp = &tape->value(out_id);
            const double dn = static_cast<double>(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xh = yp->data().data() + r * n;
                const double* gr = g.data().data() + r * n;
                double g_mean = 0.0, gx_mean = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    g_mean += gr[j];
                    gx_mean += gr[j] * xh[j];
                }
                g_mean /= dn;
                gx_mean /= dn;
                double* dx = gi[0]->data().data() + r * n;
                for (std::size_t j = 0; j < n; ++j) dx[j] += inv_std[r] * (gr[j] - g_mean - xh[j] * gx_mean);
            }
        },
        "layer_normalize");
}

Var avg_pool_1d(Var x, std::size_t kernel, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit s = split_axis(xv.shape(), axis, "avg_pool_1d");
    if (kernel == 0 || kernel % 2 == 0 || kernel > s.length) {
        throw ShapeError("avg_pool_1d: kernel must be odd and within [1, " + std::to_string(s.length) +
                         "], got " + std::to_string(kernel));
    }
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto len = static_cast<std::ptrdiff_t>(s.length);
    const double inv_k = 1.0 / static_cast<double>(kernel);
    auto clamp_t = [len](std::ptrdiff_t t) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, len - 1)); };
    Tensor out(xv.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
        const std::size_t base = o * s.length * s.inner;
        for (std::ptrdiff_t t = 0; t < len; ++t) {
            double* dst = out.data().data() + base + static_cast<std::size_t>(t) * s.inner;
            for (std::ptrdiff_t j = -half; j <= half; ++j) {
                const double* src = xv.data().data() + base + clamp_t(t + j) * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
            }
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= inv_k;
        }
    }
    return x.tape()->record(
        std::move(out), {x},
        [s, half, len, inv_k, clamp_t](const Tensor& g, std::vector<Tensor*>& gi) {
            double* dx = gi[0]->data().data();
            for (std::size_t o = 0; o < s.outer; ++o) {
                const std::size_t base = o * s.length * s.inner;
                for (std::ptrdiff_t t = 0; t < len; ++t) {
                    const double* gt = g.data().data() + base + static_cast<std::size_t>(t) * s.inner;
                    for (std::ptrdiff_t j = -half; j <= half; ++j) {
                        double* d = dx + base + clamp_t(t + j) * s.inner;
                        for (std::size_t i = 0; i < s.inner; ++i) d[i] += gt[i] * inv_k;
                    }
                }
            }
        },
        "avg_pool_1d");
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
    const Tensor& xv = x.value();
    const AxisSplit s = split_axis(xv.shape(), axis, "slice");
    if (start + length > s.length) {
        throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis length " + std::to_string(s.length));
    }
    Shape shape = xv.shape();
    shape[axis] = length;
    Tensor out(shape);
    const std::size_t chunk = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = xv.data().data() + o * s.length * s.inner + start * s.inner;
        std::copy(src, src + chunk, out.data().data() + o * chunk);
    }
    return x.tape()->record(
        std::move(out), {x},
        [s, start, chunk](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t o = 0; o < s.outer; ++o) {
                double* dst = gi[0]->data().data() + o * s.length * s.inner + start * s.inner;
                const double* src = g.data().data() + o * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
        },
        "slice");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range");
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& sh = p.shape();
        bool ok = sh.size() == first.size();
        for (std::size_t d = 0; ok && d < sh.size(); ++d) ok = d == axis || sh[d] == first[d];
        if (!ok) throw ShapeError("concat: incompatible shapes " + to_string(first) + " and " + to_string(sh));
        lengths.push_back(sh[axis]);
        total += sh[axis];
    }
    Shape shape = first;
    shape[axis] = total;
    const AxisSplit s = split_axis(shape, axis, "concat");
    Tensor out(shape);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& pv = parts[pi].value();
        const std::size_t chunk = lengths[pi] * s.inner;
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = pv.data().data() + o * chunk;
            std::copy(src, src + chunk, out.data().data() + o * s.length * s.inner + offset * s.inner);
        }
        offset += lengths[pi];
    }
    return parts.front().tape()->record(
        std::move(out), parts,
        [s, lengths](const Tensor& g, std::vector<Tensor*>& gi) {
            std::size_t offset = 0;
            for (std::size_t pi = 0; pi < gi.size(); ++pi) {
                const std::size_t chunk = lengths[pi] * s.inner;
                if (gi[pi]) {
                    for (std::size_t o = 0; o < s.outer; ++o) {
                        const double* src = g.data().data() + o * s.length * s.inner + offset * s.inner;
                        double* dst = gi[pi]->data().data() + o * chunk;
                        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                    }
                }
                offset += lengths[pi];
            }
        },
        "concat");
}

Var unfold(Var x, std::size_t patch, std::size_t stride) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) throw ShapeError("unfold: expected [B, L, E], got " + to_string(xv.shape()));
    const std::size_t B = xv.dim(0), L = xv.dim(1), E = xv.dim(2);
    if (patch == 0 || stride == 0) throw ShapeError("unfold: patch and stride must be positive");
    if (L < patch) {
        throw ShapeError("unfold: sequence length " + std::to_string(L) + " shorter than patch " +
                         std::to_string(patch));
    }
    const std::size_t N = (L - patch) / stride + 1;
    const std::size_t width = patch * E;
    Tensor out(Shape{B, N, width});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i) {
            const double* src = xv.data().data() + (b * L + i * stride) * E;
            std::copy(src, src + width, out.data().data() + (b * N + i) * width);
        }
    return x.tape()->record(
        std::move(out), {x},
        [B, L, E, N, width, stride](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < N; ++i) {
                    double* dst = gi[0]->data().data() + (b * L + i * stride) * E;
                    const double* src = g.data().data() + (b * N + i) * width;
                    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                }
        },
        "unfold");
}

Var dropout(Var x, double p, std::uint64_t seed) {
    Tensor mask = dropout_mask(x.shape(), p, seed);
    return mask_mul(x, mask);
}

Var mask_mul(Var x, const Tensor& mask) {
    const Tensor& xv = x.value();
    require_same_shape(xv, mask, "mask_mul");
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * mask[i];
    return x.tape()->record(
        std::move(out), {x},
        [mask](const Tensor& g, std::vector<Tensor*>& gi) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * mask[i];
        },
        "mask_mul");
}

Var mse(Var prediction, Var target) {
    const Tensor& pv = prediction.value();
    const Tensor& tv = target.value();
    require_same_shape(pv, tv, "mse");
    if (pv.empty()) throw ShapeError("mse of empty tensors");
    const double n = static_cast<double>(pv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    const Tensor* pp = &pv;
    const Tensor* tp = &tv;
    return prediction.tape()->record(
        Tensor::scalar(total / n), {prediction, target},
        [pp, tp, n](const Tensor& g, std::vector<Tensor*>& gi) {
            const double coef = 2.0 * g[0] / n;
            for (std::size_t i = 0; i < pp->size(); ++i) {
                const double d = coef * ((*pp)[i] - (*tp)[i]);
                if (gi[0]) (*gi[0])[i] += d;
                if (gi[1]) (*gi[1])[i] -= d;
            }
        },
        "mse");
}

} // namespace ops

Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw Error("dropout probability must lie in [0, 1), got " + std::to_string(p));
    Tensor mask(shape, 1.0);
    if (p == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - p);
    Rng rng(seed);
    for (double& m : mask.data()) m = rng.uniform() >= p ? keep_scale : 0.0;
    return mask;
}

double check_gradients(const ScalarGraphFn& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw Error("check_gradients: eps must be positive");
    auto evaluate = [&](const Tensor& point) {
        Tape tape;
        Var out = f(tape, tape.constant(point));
        const double v = out.value().item();
        if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite function value");
        return v;
    };
    Tape tape;
    Var input = tape.leaf(x, true);
    Var out = f(tape, input);
    if (!std::isfinite(out.value().item())) throw NumericError("check_gradients: non-finite function value");
    const Tensor analytic = tape.backward(out)[input];

    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = evaluate(probe);
        probe[i] = orig - eps;
        const double fm = evaluate(probe);
        probe[i] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    return worst;
}

} // namespace timepd
