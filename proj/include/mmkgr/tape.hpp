#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmkgr/tensor.hpp"

namespace mmkgr {

// Reverse-mode accumulation over an explicit tape. Nodes are created in
// topological order, so the backward sweep is a single reverse pass.
// Parameter leaves accumulate into Parameter::grad; a parameter may appear
// in any number of nodes (full or gathered) and contributions add up.
class Tape {
public:
    using Id = int;

    Id constant(Tensor v) { return push(std::move(v), false, {}, nullptr); }

    Id param(Parameter& p) {
        Id id = push(p.value, true, {}, nullptr);
        nodes_[id].backward = [&p](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            for (int i = 0; i < g.size(); ++i) p.grad[i] += g[i];
        };
        return id;
    }

    // Row gather from an embedding table. Backward scatter-adds into the
    // table's gradient without materializing the full table on the tape.
    Id gather_rows(Parameter& table, std::vector<int> ids) {
        const int d = table.value.cols();
        Tensor out(static_cast<int>(ids.size()), d);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const int r = ids[i];
            if (r < 0 || r >= table.value.rows())
                throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside " +
                                        table.value.shape_str() + " (" + table.name + ")");
            for (int c = 0; c < d; ++c) out.at(static_cast<int>(i), c) = table.value.at(r, c);
        }
        Id id = push(std::move(out), true, {}, nullptr);
        nodes_[id].backward = [&table, ids = std::move(ids)](Tape& t, Id self) {
            const Tensor& g = t.nodes_[self].grad;
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int c = 0; c < g.cols(); ++c)
                    table.grad.at(ids[i], c) += g.at(static_cast<int>(i), c);
        };
        return id;
    }

    Id matmul(Id x, Id w) {
        const Tensor& a = val(x);
        const Tensor& b = val(w);
        if (a.cols() != b.rows())
            throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " vs " +
                                        b.shape_str());
        Tensor out(a.rows(), b.cols());
        for (int i = 0; i < a.rows(); ++i)
            for (int k = 0; k < a.cols(); ++k) {
                const double aik = a.at(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < b.cols(); ++j) out.at(i, j) += aik * b.at(k, j);
            }
        return push(std::move(out), needs(x) || needs(w), {x, w}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            const Tensor& g = n.grad;
            const Tensor& a = t.val(n.inputs[0]);
            const Tensor& b = t.val(n.inputs[1]);
            if (t.needs(n.inputs[0])) {
                Tensor& da = t.grad_buf(n.inputs[0]);
                for (int i = 0; i < a.rows(); ++i)
                    for (int j = 0; j < b.cols(); ++j) {
                        const double gij = g.at(i, j);
                        if (gij == 0.0) continue;
                        for (int k = 0; k < a.cols(); ++k) da.at(i, k) += gij * b.at(k, j);
                    }
            }
            if (t.needs(n.inputs[1])) {
                Tensor& db = t.grad_buf(n.inputs[1]);
                for (int i = 0; i < a.rows(); ++i)
                    for (int k = 0; k < a.cols(); ++k) {
                        const double aik = a.at(i, k);
                        if (aik == 0.0) continue;
                        for (int j = 0; j < b.cols(); ++j) db.at(k, j) += aik * g.at(i, j);
                    }
            }
        });
    }

    Id add(Id x, Id y) { return binary_elemwise(x, y, "add", Elem::Add); }
    Id sub(Id x, Id y) { return binary_elemwise(x, y, "sub", Elem::Sub); }
    Id hadamard(Id x, Id y) { return binary_elemwise(x, y, "hadamard", Elem::Mul); }

    Id relu(Id x) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            const Tensor& xin = t.val(n.inputs[0]);
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < xin.size(); ++i)
                if (xin[i] > 0.0) dx[i] += n.grad[i];
        });
    }

    Id sigmoid(Id x) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = sigmoid_scalar(v);
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < n.value.size(); ++i) {
                const double s = n.value[i];
                dx[i] += n.grad[i] * s * (1.0 - s);
            }
        });
    }

    Id tanh_op(Id x) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = std::tanh(v);
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < n.value.size(); ++i)
                dx[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
        });
    }

    Id log_op(Id x) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = std::log(v);
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            const Tensor& xin = t.val(n.inputs[0]);
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < xin.size(); ++i) dx[i] += n.grad[i] / xin[i];
        });
    }

    // x log x with the 0 log 0 = 0 convention; entries near zero also get a
    // zero gradient, keeping entropy terms finite when softmax underflows.
    Id xlogx(Id x) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = v > kXlogxFloor ? v * std::log(v) : 0.0;
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            const Tensor& xin = t.val(n.inputs[0]);
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < xin.size(); ++i)
                if (xin[i] > kXlogxFloor) dx[i] += n.grad[i] * (std::log(xin[i]) + 1.0);
        });
    }

    // Elementwise a*x + b.
    Id affine(Id x, double a, double b) {
        Tensor out = val(x);
        for (auto& v : out.data()) v = a * v + b;
        return push(std::move(out), needs(x), {x}, [a](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < n.grad.size(); ++i) dx[i] += a * n.grad[i];
        });
    }

    Id scale(Id x, double a) { return affine(x, a, 0.0); }

    Id concat_cols(Id x, Id y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        if (a.rows() != b.rows())
            throw std::invalid_argument("concat_cols: shape mismatch " + a.shape_str() + " vs " +
                                        b.shape_str());
        Tensor out(a.rows(), a.cols() + b.cols());
        for (int i = 0; i < a.rows(); ++i) {
            for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
            for (int j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
        }
        return push(std::move(out), needs(x) || needs(y), {x, y}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            const int ac = t.val(n.inputs[0]).cols();
            const Tensor& g = n.grad;
            if (t.needs(n.inputs[0])) {
                Tensor& da = t.grad_buf(n.inputs[0]);
                for (int i = 0; i < da.rows(); ++i)
                    for (int j = 0; j < da.cols(); ++j) da.at(i, j) += g.at(i, j);
            }
            if (t.needs(n.inputs[1])) {
                Tensor& db = t.grad_buf(n.inputs[1]);
                for (int i = 0; i < db.rows(); ++i)
                    for (int j = 0; j < db.cols(); ++j) db.at(i, j) += g.at(i, ac + j);
            }
        });
    }

    Id slice_cols(Id x, int from, int to) {
        const Tensor& a = val(x);
        if (from < 0 || to > a.cols() || from >= to)
            throw std::invalid_argument("slice_cols: [" + std::to_string(from) + "," +
                                        std::to_string(to) + ") outside " + a.shape_str());
        Tensor out(a.rows(), to - from);
        for (int i = 0; i < a.rows(); ++i)
            for (int j = from; j < to; ++j) out.at(i, j - from) = a.at(i, j);
        return push(std::move(out), needs(x), {x}, [from](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const Tensor& g = n.grad;
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) dx.at(i, from + j) += g.at(i, j);
        });
    }

    Id softmax_rows(Id x) {
        Tensor out = val(x);
        for (int i = 0; i < out.rows(); ++i) {
            double mx = out.at(i, 0);
            for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, out.at(i, j));
            double sum = 0.0;
            for (int j = 0; j < out.cols(); ++j) {
                out.at(i, j) = std::exp(out.at(i, j) - mx);
                sum += out.at(i, j);
            }
            for (int j = 0; j < out.cols(); ++j) out.at(i, j) /= sum;
        }
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const Tensor& p = n.value;
            const Tensor& g = n.grad;
            for (int i = 0; i < p.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < p.cols(); ++j) dot += g.at(i, j) * p.at(i, j);
                for (int j = 0; j < p.cols(); ++j)
                    dx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
            }
        });
    }

    Id mean_rows(Id x) {
        const Tensor& a = val(x);
        Tensor out(1, a.cols());
        for (int j = 0; j < a.cols(); ++j) {
            double s = 0.0;
            for (int i = 0; i < a.rows(); ++i) s += a.at(i, j);
            out.at(0, j) = s / a.rows();
        }
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const Tensor& g = n.grad;
            for (int i = 0; i < dx.rows(); ++i)
                for (int j = 0; j < dx.cols(); ++j) dx.at(i, j) += g.at(0, j) / dx.rows();
        });
    }

    // Per-row sum over columns: [m x n] -> [m x 1].
    Id row_sum(Id x) {
        const Tensor& a = val(x);
        Tensor out(a.rows(), 1);
        for (int i = 0; i < a.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < a.cols(); ++j) s += a.at(i, j);
            out.at(i, 0) = s;
        }
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const Tensor& g = n.grad;
            for (int i = 0; i < dx.rows(); ++i)
                for (int j = 0; j < dx.cols(); ++j) dx.at(i, j) += g.at(i, 0);
        });
    }

    Id sum_all(Id x) {
        const Tensor& a = val(x);
        double s = 0.0;
        for (double v : a.data()) s += v;
        return push(Tensor::scalar(s), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const double g = n.grad[0];
            for (int i = 0; i < dx.size(); ++i) dx[i] += g;
        });
    }

    Id reshape(Id x, int rows, int cols) {
        const Tensor& a = val(x);
        if (rows * cols != a.size())
            throw std::invalid_argument("reshape: " + a.shape_str() + " to " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        Tensor out(rows, cols, a.data());
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            for (int i = 0; i < dx.size(); ++i) dx[i] += n.grad[i];
        });
    }

    Id element(Id x, int r, int c) {
        const Tensor& a = val(x);
        if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols())
            throw std::out_of_range("element: (" + std::to_string(r) + "," + std::to_string(c) +
                                    ") outside " + a.shape_str());
        return push(Tensor::scalar(a.at(r, c)), needs(x), {x}, [r, c](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            t.grad_buf(n.inputs[0]).at(r, c) += n.grad[0];
        });
    }

    Id repeat_rows(Id x, int m) {
        const Tensor& a = val(x);
        if (a.rows() != 1) throw std::invalid_argument("repeat_rows: input must be 1xN, got " +
                                                       a.shape_str());
        Tensor out(m, a.cols());
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(0, j);
        return push(std::move(out), needs(x), {x}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            if (!t.needs(n.inputs[0])) return;
            Tensor& dx = t.grad_buf(n.inputs[0]);
            const Tensor& g = n.grad;
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) dx.at(0, j) += g.at(i, j);
        });
    }

    // Row-wise scaling: out[i,:] = x[i,:] * s[i,0].
    Id scale_rows(Id x, Id s) {
        const Tensor& a = val(x);
        const Tensor& w = val(s);
        if (w.rows() != a.rows() || w.cols() != 1)
            throw std::invalid_argument("scale_rows: scale must be " + std::to_string(a.rows()) +
                                        "x1, got " + w.shape_str());
        Tensor out(a.rows(), a.cols());
        for (int i = 0; i < a.rows(); ++i)
            for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * w.at(i, 0);
        return push(std::move(out), needs(x) || needs(s), {x, s}, [](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            const Tensor& a = t.val(n.inputs[0]);
            const Tensor& w = t.val(n.inputs[1]);
            const Tensor& g = n.grad;
            if (t.needs(n.inputs[0])) {
                Tensor& dx = t.grad_buf(n.inputs[0]);
                for (int i = 0; i < a.rows(); ++i)
                    for (int j = 0; j < a.cols(); ++j) dx.at(i, j) += g.at(i, j) * w.at(i, 0);
            }
            if (t.needs(n.inputs[1])) {
                Tensor& ds = t.grad_buf(n.inputs[1]);
                for (int i = 0; i < a.rows(); ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < a.cols(); ++j) acc += g.at(i, j) * a.at(i, j);
                    ds.at(i, 0) += acc;
                }
            }
        });
    }

    const Tensor& val(Id id) const { return nodes_[id].value; }
    bool needs(Id id) const { return nodes_[id].needs_grad; }
    std::size_t node_count() const { return nodes_.size(); }

    // Gradient of a node after backward(); only valid for needs_grad nodes.
    const Tensor& grad(Id id) const { return nodes_[id].grad; }

    // Root must be scalar. `seed` is d(loss)/d(root), letting callers fold
    // per-rollout weights into the sweep instead of adding scale nodes.
    void backward(Id root, double seed = 1.0) {
        if (val(root).size() != 1)
            throw std::logic_error("backward: root must be 1x1, got " + val(root).shape_str());
        for (auto& n : nodes_)
            if (n.needs_grad && n.grad.size() == 0)
                n.grad = Tensor(n.value.rows(), n.value.cols());
        nodes_[root].grad[0] += seed;
        for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
            auto& n = nodes_[id];
            if (!n.needs_grad || !n.backward) continue;
            n.backward(*this, id);
        }
    }

private:
    static constexpr double kXlogxFloor = 1e-300;

    enum class Elem { Add, Sub, Mul };

    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<Id> inputs;
        std::function<void(Tape&, Id)> backward;
        bool needs_grad = false;
    };

    Id binary_elemwise(Id x, Id y, const char* name, Elem op) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        if (!a.same_shape(b))
            throw std::invalid_argument(std::string(name) + ": shape mismatch " + a.shape_str() +
                                        " vs " + b.shape_str());
        Tensor out(a.rows(), a.cols());
        for (int i = 0; i < a.size(); ++i) {
            switch (op) {
                case Elem::Add: out[i] = a[i] + b[i]; break;
                case Elem::Sub: out[i] = a[i] - b[i]; break;
                case Elem::Mul: out[i] = a[i] * b[i]; break;
            }
        }
        return push(std::move(out), needs(x) || needs(y), {x, y}, [op](Tape& t, Id self) {
            auto& n = t.nodes_[self];
            const Tensor& g = n.grad;
            const Tensor& a = t.val(n.inputs[0]);
            const Tensor& b = t.val(n.inputs[1]);
            if (t.needs(n.inputs[0])) {
                Tensor& dx = t.grad_buf(n.inputs[0]);
                for (int i = 0; i < g.size(); ++i)
                    dx[i] += op == Elem::Mul ? g[i] * b[i] : g[i];
            }
            if (t.needs(n.inputs[1])) {
                Tensor& dy = t.grad_buf(n.inputs[1]);
                for (int i = 0; i < g.size(); ++i) {
                    switch (op) {
                        case Elem::Add: dy[i] += g[i]; break;
                        case Elem::Sub: dy[i] -= g[i]; break;
                        case Elem::Mul: dy[i] += g[i] * a[i]; break;
                    }
                }
            }
        });
    }

    Tensor& grad_buf(Id id) { return nodes_[id].grad; }

    Id push(Tensor value, bool needs_grad, std::vector<Id> inputs,
            std::function<void(Tape&, Id)> back) {
#ifndef NDEBUG
        if (!value.all_finite())
            throw std::domain_error("tape: non-finite value produced (shape " +
                                    value.shape_str() + ")");
#endif
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(back);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    static double sigmoid_scalar(double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
    }

    std::vector<Node> nodes_;
};

// Standard LSTM cell. Gate block layout along columns: input, forget,
// candidate, output.
struct LstmParams {
    Parameter w_input;  // [in x 4h]
    Parameter w_hidden; // [h x 4h]
    Parameter bias;     // [1 x 4h]

    int hidden_size() const { return w_hidden.value.rows(); }
    int input_size() const { return w_input.value.rows(); }

    std::vector<Parameter*> parameters() { return {&w_input, &w_hidden, &bias}; }
};

struct LstmState {
    Tape::Id h;
    Tape::Id c;
};

inline LstmState lstm_step(Tape& t, Tape::Id input, LstmState state, LstmParams& p) {
    const int h = p.hidden_size();
    Tape::Id z = t.add(t.add(t.matmul(input, t.param(p.w_input)),
                             t.matmul(state.h, t.param(p.w_hidden))),
                       t.param(p.bias));
    Tape::Id gi = t.sigmoid(t.slice_cols(z, 0, h));
    Tape::Id gf = t.sigmoid(t.slice_cols(z, h, 2 * h));
    Tape::Id gc = t.tanh_op(t.slice_cols(z, 2 * h, 3 * h));
    Tape::Id go = t.sigmoid(t.slice_cols(z, 3 * h, 4 * h));
    Tape::Id c_next = t.add(t.hadamard(gf, state.c), t.hadamard(gi, gc));
    Tape::Id h_next = t.hadamard(go, t.tanh_op(c_next));
    return {h_next, c_next};
}

} // namespace mmkgr
