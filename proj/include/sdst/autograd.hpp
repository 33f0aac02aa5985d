#pragma once

// Reverse-mode automatic differentiation over row-major float matrices.
//
// A Tape records every operation of one forward pass. Leaves are either
// constants or parameters; calling backward() on a 1x1 result propagates
// gradients into Parameter::grad for every trainable parameter reached.
// Nodes that cannot reach a trainable leaf skip their backward work.

#include "sdst/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numbers>
#include <span>

namespace sdst {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var constant(Matrix value) { return push(std::move(value), false, {}); }

    Var param(const ParamPtr& p) {
        Var v = push(p->value, p->trainable, {});
        if (p->trainable) {
            nodes_[v.id].backprop = [this, v, p] { p->grad += nodes_[v.id].grad; };
        }
        return v;
    }

    const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    /// Gradient buffer of a node after backward(); empty when none reached it.
    const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }

    void accumulate(Var v, const Matrix& g) {
        auto& n = nodes_[v.id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = g;
        else n.grad += g;
    }

    Var push(Matrix value, bool needs_grad, std::function<void()> backprop) {
        nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backprop)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void set_backprop(Var v, std::function<void()> fn) { nodes_[v.id].backprop = std::move(fn); }

    void backward(Var loss, float seed = 1.0f) {
        auto& root = nodes_.at(loss.id);
        if (root.value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
        if (!root.needs_grad) return;
        root.grad = Matrix::Constant(1, 1, seed);
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[i];
            if (n.needs_grad && n.grad.size() != 0 && n.backprop) n.backprop();
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void()> backprop;
    };
    std::vector<Node> nodes_;
};

namespace ops {

inline Var matmul(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.cols() != bv.rows()) {
        throw std::invalid_argument("matmul: shape mismatch " + std::to_string(av.rows()) + "x" +
                                    std::to_string(av.cols()) + " * " + std::to_string(bv.rows()) + "x" +
                                    std::to_string(bv.cols()));
    }
    Matrix out(av.rows(), bv.cols());
    out.noalias() = av * bv;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, b, r] {
            const Matrix& g = t.grad(r);
            if (t.needs_grad(a)) {
                Matrix ga(g.rows(), t.value(b).rows());
                ga.noalias() = g * t.value(b).transpose();
                t.accumulate(a, ga);
            }
            if (t.needs_grad(b)) {
                Matrix gb(t.value(a).cols(), g.cols());
                gb.noalias() = t.value(a).transpose() * g;
                t.accumulate(b, gb);
            }
        });
    }
    return r;
}

inline Var add(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw std::invalid_argument("add: shape mismatch");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var r = t.push(av + bv, ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, b, r] {
            t.accumulate(a, t.grad(r));
            t.accumulate(b, t.grad(r));
        });
    }
    return r;
}

inline Var scale(Tape& t, Var a, float s) {
    bool ng = t.needs_grad(a);
    Var r = t.push(t.value(a) * s, ng, {});
    if (ng) t.set_backprop(r, [&t, a, r, s] { t.accumulate(a, t.grad(r) * s); });
    return r;
}

/// Adds a 1 x C row vector to every row of a.
inline Var add_row(Tape& t, Var a, Var row) {
    const Matrix& av = t.value(a);
    const Matrix& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) throw std::invalid_argument("add_row: shape mismatch");
    Matrix out = av;
    out.rowwise() += rv.row(0);
    bool ng = t.needs_grad(a) || t.needs_grad(row);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, row, r] {
            t.accumulate(a, t.grad(r));
            if (t.needs_grad(row)) t.accumulate(row, t.grad(r).colwise().sum());
        });
    }
    return r;
}

/// Rows [begin, begin + count) of a.
inline Var slice_rows(Tape& t, Var a, Eigen::Index begin, Eigen::Index count) {
    const Matrix& av = t.value(a);
    if (begin < 0 || count < 0 || begin + count > av.rows()) throw std::out_of_range("slice_rows: out of range");
    bool ng = t.needs_grad(a);
    Var r = t.push(av.middleRows(begin, count), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, r, begin, count] {
            Matrix g = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
            g.middleRows(begin, count) = t.grad(r);
            t.accumulate(a, g);
        });
    }
    return r;
}

inline Var concat_rows(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.cols() != bv.cols()) throw std::invalid_argument("concat_rows: column mismatch");
    Matrix out(av.rows() + bv.rows(), av.cols());
    out.topRows(av.rows()) = av;
    out.bottomRows(bv.rows()) = bv;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, b, r] {
            const Matrix& g = t.grad(r);
            Eigen::Index na = t.value(a).rows();
            if (t.needs_grad(a)) t.accumulate(a, g.topRows(na));
            if (t.needs_grad(b)) t.accumulate(b, g.bottomRows(g.rows() - na));
        });
    }
    return r;
}

inline Var concat_cols(Tape& t, std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool ng = false;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += t.value(p).cols();
        ng = ng || t.needs_grad(p);
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        std::vector<Var> saved(parts.begin(), parts.end());
        t.set_backprop(r, [&t, saved, r] {
            Eigen::Index c0 = 0;
            for (Var p : saved) {
                Eigen::Index w = t.value(p).cols();
                if (t.needs_grad(p)) t.accumulate(p, t.grad(r).middleCols(c0, w));
                c0 += w;
            }
        });
    }
    return r;
}

/// out[i] = a[i + offset], zero where i + offset falls outside [0, rows).
inline Var shift_rows(Tape& t, Var a, Eigen::Index offset) {
    const Matrix& av = t.value(a);
    Eigen::Index n = av.rows();
    Matrix out = Matrix::Zero(n, av.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index src = i + offset;
        if (src >= 0 && src < n) out.row(i) = av.row(src);
    }
    bool ng = t.needs_grad(a);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, r, offset] {
            const Matrix& g = t.grad(r);
            Eigen::Index rows = g.rows();
            Matrix ga = Matrix::Zero(rows, g.cols());
            for (Eigen::Index i = 0; i < rows; ++i) {
                Eigen::Index src = i + offset;
                if (src >= 0 && src < rows) ga.row(src) += g.row(i);
            }
            t.accumulate(a, ga);
        });
    }
    return r;
}

/// Each row of a repeated `times` times consecutively.
inline Var repeat_rows(Tape& t, Var a, int times) {
    if (times < 1) throw std::invalid_argument("repeat_rows: times must be >= 1");
    const Matrix& av = t.value(a);
    Matrix out(av.rows() * times, av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (int k = 0; k < times; ++k) out.row(i * times + k) = av.row(i);
    bool ng = t.needs_grad(a);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, r, times] {
            const Matrix& g = t.grad(r);
            Matrix ga = Matrix::Zero(t.value(a).rows(), g.cols());
            for (Eigen::Index i = 0; i < ga.rows(); ++i)
                for (int k = 0; k < times; ++k) ga.row(i) += g.row(i * times + k);
            t.accumulate(a, ga);
        });
    }
    return r;
}

/// Rows of `table` selected by ids.
inline Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
    const Matrix& tv = t.value(table);
    Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]));
        out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    bool ng = t.needs_grad(table);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        std::vector<int> saved(ids.begin(), ids.end());
        t.set_backprop(r, [&t, table, r, saved] {
            const Matrix& g = t.grad(r);
            Matrix gt = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
            for (std::size_t i = 0; i < saved.size(); ++i) gt.row(saved[i]) += g.row(static_cast<Eigen::Index>(i));
            t.accumulate(table, gt);
        });
    }
    return r;
}

/// Groups k consecutive rows into one row of width k*F; the last group is zero-padded.
inline Var stack_frames(Tape& t, Var a, int k) {
    if (k < 1) throw std::invalid_argument("stack_frames: k must be >= 1");
    const Matrix& av = t.value(a);
    Eigen::Index T = av.rows(), F = av.cols();
    if (T == 0) throw std::invalid_argument("empty feature sequence");
    Eigen::Index Tp = (T + k - 1) / k;
    Matrix out = Matrix::Zero(Tp, k * F);
    for (Eigen::Index i = 0; i < T; ++i) out.block(i / k, (i % k) * F, 1, F) = av.row(i);
    bool ng = t.needs_grad(a);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, a, r, k] {
            const Matrix& g = t.grad(r);
            Eigen::Index rows = t.value(a).rows(), f = t.value(a).cols();
            Matrix ga(rows, f);
            for (Eigen::Index i = 0; i < rows; ++i) ga.row(i) = g.block(i / k, (i % k) * f, 1, f);
            t.accumulate(a, ga);
        });
    }
    return r;
}

inline constexpr float kLayerNormEps = 1e-5f;

/// Row-wise layer normalisation with learned gain and bias (both 1 x C).
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gain);
    const Matrix& bv = t.value(bias);
    Eigen::Index n = xv.rows(), c = xv.cols();
    Matrix xhat(n, c);
    Eigen::VectorXf inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        float mean = xv.row(i).mean();
        RowVector centered = xv.row(i).array() - mean;
        float var = centered.squaredNorm() / static_cast<float>(c);
        inv_std(i) = 1.0f / std::sqrt(var + kLayerNormEps);
        xhat.row(i) = centered * inv_std(i);
    }
    Matrix out = (xhat.array().rowwise() * gv.row(0).array()).matrix();
    out.rowwise() += bv.row(0);
    bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, x, gain, bias, r, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
            const Matrix& g = t.grad(r);
            if (t.needs_grad(gain)) t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
            if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
            if (t.needs_grad(x)) {
                const Matrix& gv2 = t.value(gain);
                Matrix dxhat = (g.array().rowwise() * gv2.row(0).array()).matrix();
                Eigen::Index rows = g.rows(), cols = g.cols();
                Matrix dx(rows, cols);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    float m1 = dxhat.row(i).mean();
                    float m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
                    dx.row(i) = ((dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
                }
                t.accumulate(x, dx);
            }
        });
    }
    return r;
}

/// tanh approximation of GELU.
inline Var gelu(Tape& t, Var x) {
    const Matrix& xv = t.value(x);
    static constexpr float k0 = 0.7978845608028654f;  // sqrt(2/pi)
    static constexpr float k1 = 0.044715f;
    Matrix th = ((xv.array() + k1 * xv.array().cube()) * k0).tanh().matrix();
    Matrix out = (0.5f * xv.array() * (1.0f + th.array())).matrix();
    bool ng = t.needs_grad(x);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, x, r, th = std::move(th)] {
            const auto xa = t.value(x).array();
            auto dth = (1.0f - th.array().square()) * k0 * (1.0f + 3.0f * k1 * xa.square());
            Matrix d = (t.grad(r).array() * (0.5f * (1.0f + th.array()) + 0.5f * xa * dth)).matrix();
            t.accumulate(x, d);
        });
    }
    return r;
}

/// Multi-head scaled dot-product attention over the rows of q, k, v.
/// With `causal`, row i attends only to rows j <= i.
inline Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal) {
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    Eigen::Index L = qv.rows(), d = qv.cols();
    if (kv.rows() != L || vv.rows() != L || kv.cols() != d || vv.cols() != d)
        throw std::invalid_argument("attention: shape mismatch");
    if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    Eigen::Index dh = d / heads;
    float sc = 1.0f / std::sqrt(static_cast<float>(dh));
    auto probs = std::make_shared<std::vector<Matrix>>(heads);
    Matrix out(L, d);
    for (int h = 0; h < heads; ++h) {
        Matrix s(L, L);
        s.noalias() = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose();
        s *= sc;
        for (Eigen::Index i = 0; i < L; ++i) {
            Eigen::Index limit = causal ? i + 1 : L;
            float mx = s.row(i).head(limit).maxCoeff();
            float sum = 0.0f;
            for (Eigen::Index j = 0; j < limit; ++j) {
                float e = std::exp(s(i, j) - mx);
                s(i, j) = e;
                sum += e;
            }
            s.row(i).head(limit) /= sum;
            for (Eigen::Index j = limit; j < L; ++j) s(i, j) = 0.0f;
        }
        out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
        (*probs)[h] = std::move(s);
    }
    bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
    Var r = t.push(std::move(out), ng, {});
    if (ng) {
        t.set_backprop(r, [&t, q, k, v, r, heads, dh, sc, probs] {
            const Matrix& g = t.grad(r);
            const Matrix& qv2 = t.value(q);
            const Matrix& kv2 = t.value(k);
            const Matrix& vv2 = t.value(v);
            Eigen::Index n = g.rows();
            Matrix gq = Matrix::Zero(n, g.cols()), gk = Matrix::Zero(n, g.cols()), gv = Matrix::Zero(n, g.cols());
            for (int h = 0; h < heads; ++h) {
                const Matrix& p = (*probs)[h];
                auto go = g.middleCols(h * dh, dh);
                gv.middleCols(h * dh, dh).noalias() = p.transpose() * go;
                Matrix dp(n, n);
                dp.noalias() = go * vv2.middleCols(h * dh, dh).transpose();
                Eigen::VectorXf rowdot = (dp.array() * p.array()).rowwise().sum();
                Matrix ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * sc;
                gq.middleCols(h * dh, dh).noalias() = ds * kv2.middleCols(h * dh, dh);
                gk.middleCols(h * dh, dh).noalias() = ds.transpose() * qv2.middleCols(h * dh, dh);
            }
            t.accumulate(q, gq);
            t.accumulate(k, gk);
            t.accumulate(v, gv);
        });
    }
    return r;
}

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
/// over rows whose mask entry is set. Throws when no row is masked in.
inline Var masked_nll(Tape& t, Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    const Matrix& lv = t.value(logits);
    Eigen::Index n = lv.rows();
    if (static_cast<Eigen::Index>(targets.size()) != n || static_cast<Eigen::Index>(mask.size()) != n)
        throw std::invalid_argument("masked_nll: targets/mask length must equal logits rows");
    int count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) throw std::invalid_argument("masked_nll: every position is masked out");
    Matrix probs = Matrix::Zero(n, lv.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        int y = targets[i];
        if (y < 0 || y >= lv.cols()) throw std::out_of_range("masked_nll: target id out of range");
        float mx = lv.row(i).maxCoeff();
        RowVector e = (lv.row(i).array() - mx).exp().matrix();
        float sum = e.sum();
        probs.row(i) = e / sum;
        total += -(static_cast<double>(lv(i, y)) - mx - std::log(static_cast<double>(sum)));
    }
    float loss = static_cast<float>(total / count);
    bool ng = t.needs_grad(logits);
    Var r = t.push(Matrix::Constant(1, 1, loss), ng, {});
    if (ng) {
        std::vector<int> tg(targets.begin(), targets.end());
        std::vector<std::uint8_t> mk(mask.begin(), mask.end());
        t.set_backprop(r, [&t, logits, r, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk), count] {
            float g = t.grad(r)(0, 0) / static_cast<float>(count);
            Matrix d = probs;
            for (std::size_t i = 0; i < tg.size(); ++i)
                if (mk[i]) d(static_cast<Eigen::Index>(i), tg[i]) -= 1.0f;
            t.accumulate(logits, d * g);
        });
    }
    return r;
}

}  // namespace ops
}  // namespace sdst
