#include "sdst/autograd.hpp"
#include "sdst/optim.hpp"

#include <gtest/gtest.h>

using namespace sdst;

namespace {

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalar probe sum(out .* weights) so every output element matters.
double probe(const std::vector<ParamPtr>& inputs, const Build& f, const Matrix& weights, bool backward) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& p : inputs) vs.push_back(t.param(p));
    Var out = f(t, vs);
    double value = (t.value(out).cast<double>().array() * weights.cast<double>().array()).sum();
    if (backward) {
        Var loss = t.push(Matrix::Constant(1, 1, static_cast<float>(value)), true, {});
        t.set_backprop(loss, [&t, out, weights, loss] { t.accumulate(out, weights * t.grad(loss)(0, 0)); });
        t.backward(loss);
    }
    return value;
}

void gradcheck(std::vector<ParamPtr> inputs, const Build& f, double tol = 2e-2, double h = 1e-2) {
    Rng rng(99);
    Matrix weights;
    {
        Tape t;
        std::vector<Var> vs;
        for (const auto& p : inputs) vs.push_back(t.param(p));
        const Matrix& ov = t.value(f(t, vs));
        weights = gaussian(ov.rows(), ov.cols(), 1.0f, rng);
    }
    for (auto& p : inputs) p->zero_grad();
    probe(inputs, f, weights, true);
    for (const auto& p : inputs) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            float keep = p->value.data()[i];
            p->value.data()[i] = keep + static_cast<float>(h);
            double up = probe(inputs, f, weights, false);
            p->value.data()[i] = keep - static_cast<float>(h);
            double down = probe(inputs, f, weights, false);
            p->value.data()[i] = keep;
            double numeric = (up - down) / (2 * h);
            double analytic = p->grad.data()[i];
            EXPECT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric)))
                << p->name << "[" << i << "]";
        }
    }
}

ParamPtr rand_param(const std::string& name, int r, int c, std::uint64_t seed, float s = 1.0f) {
    Rng rng(seed);
    return make_param(name, gaussian(r, c, s, rng));
}

}  // namespace

TEST(Autograd, Matmul) {
    gradcheck({rand_param("a", 3, 4, 1), rand_param("b", 4, 2, 2)},
              [](Tape& t, const std::vector<Var>& v) { return ops::matmul(t, v[0], v[1]); });
}

TEST(Autograd, AddScaleAddRow) {
    gradcheck({rand_param("a", 3, 4, 1), rand_param("b", 3, 4, 2), rand_param("r", 1, 4, 3)},
              [](Tape& t, const std::vector<Var>& v) {
                  return ops::add_row(t, ops::scale(t, ops::add(t, v[0], v[1]), 0.5f), v[2]);
              });
}

TEST(Autograd, RowSlicingConcatAndShift) {
    gradcheck({rand_param("a", 5, 3, 1), rand_param("b", 2, 3, 2)}, [](Tape& t, const std::vector<Var>& v) {
        Var s = ops::slice_rows(t, v[0], 1, 3);
        Var c = ops::concat_rows(t, s, v[1]);
        std::array<Var, 3> parts{ops::shift_rows(t, c, -1), c, ops::shift_rows(t, c, 2)};
        return ops::concat_cols(t, parts);
    });
}

TEST(Autograd, RepeatGatherStack) {
    gradcheck({rand_param("table", 6, 3, 1)}, [](Tape& t, const std::vector<Var>& v) {
        std::vector<int> ids{4, 0, 4, 2, 5};
        Var g = ops::gather_rows(t, v[0], ids);
        return ops::stack_frames(t, ops::repeat_rows(t, g, 2), 3);
    });
}

TEST(Autograd, LayerNorm) {
    gradcheck({rand_param("x", 4, 6, 1), rand_param("g", 1, 6, 2), rand_param("b", 1, 6, 3)},
              [](Tape& t, const std::vector<Var>& v) { return ops::layer_norm(t, v[0], v[1], v[2]); });
}

TEST(Autograd, Gelu) {
    gradcheck({rand_param("x", 3, 5, 4, 2.0f)}, [](Tape& t, const std::vector<Var>& v) { return ops::gelu(t, v[0]); },
              2e-2, 1e-3);
}

TEST(Autograd, AttentionCausalAndBidirectional) {
    for (bool causal : {true, false}) {
        gradcheck({rand_param("q", 5, 8, 1), rand_param("k", 5, 8, 2), rand_param("v", 5, 8, 3)},
                  [causal](Tape& t, const std::vector<Var>& v) { return ops::attention(t, v[0], v[1], v[2], 2, causal); });
    }
}

TEST(Autograd, MaskedNll) {
    std::vector<int> targets{1, 3, 0, 2};
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    gradcheck({rand_param("logits", 4, 5, 7)}, [&](Tape& t, const std::vector<Var>& v) {
        return ops::masked_nll(t, v[0], targets, mask);
    });
}

TEST(Autograd, AttentionIsCausal) {
    Rng rng(5);
    Matrix q = gaussian(6, 4, 1.0f, rng), k = gaussian(6, 4, 1.0f, rng), v = gaussian(6, 4, 1.0f, rng);
    Tape t1;
    Matrix a = t1.value(ops::attention(t1, t1.constant(q), t1.constant(k), t1.constant(v), 2, true));
    k.row(5).setRandom();
    v.row(5).setRandom();
    Tape t2;
    Matrix b = t2.value(ops::attention(t2, t2.constant(q), t2.constant(k), t2.constant(v), 2, true));
    EXPECT_EQ(a.topRows(5), b.topRows(5));
    EXPECT_NE(a.row(5), b.row(5));
}

TEST(Autograd, ConstantsReceiveNoGradient) {
    auto p = rand_param("w", 2, 2, 1);
    p->trainable = false;
    Tape t;
    Var x = t.constant(Matrix::Ones(1, 2));
    Var y = ops::matmul(t, x, t.param(p));
    Var loss = ops::matmul(t, y, t.constant(Matrix::Ones(2, 1)));
    t.backward(loss);
    EXPECT_TRUE(p->grad.isZero(0.0f));
}

TEST(Autograd, BackwardNeedsScalar) {
    Tape t;
    auto p = rand_param("w", 2, 2, 1);
    Var y = t.param(p);
    EXPECT_THROW(t.backward(y), std::invalid_argument);
}

TEST(Optimizer, WarmupThenConstant) {
    EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 1, 2000), 1e-4 / 2000);
    EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 500, 2000), 1e-4 * 500 / 2000);
    EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 2000, 2000), 1e-4);
    EXPECT_DOUBLE_EQ(warmup_lr(1e-4, 5000, 2000), 1e-4);
    EXPECT_DOUBLE_EQ(warmup_lr(5e-5, 3, 0), 5e-5);
}

TEST(Optimizer, SkipsFrozenAndZeroesGradients) {
    auto a = rand_param("a", 2, 2, 1), b = rand_param("b", 2, 2, 2);
    b->trainable = false;
    a->grad.setConstant(1.0f);
    b->grad.setConstant(1.0f);
    Matrix a0 = a->value, b0 = b->value;
    AdamW opt;
    double norm = opt.step({a, b}, 0.1);
    EXPECT_DOUBLE_EQ(norm, 2.0);
    EXPECT_NE(a->value, a0);
    EXPECT_EQ(b->value, b0);
    EXPECT_TRUE(a->grad.isZero(0.0f));
    EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(Optimizer, FirstStepMagnitudeIsLearningRate) {
    auto a = make_param("bias", Matrix::Zero(1, 3));
    a->grad << 0.5f, -0.25f, 0.1f;
    AdamWConfig cfg;
    cfg.clip_norm = 0.0;
    AdamW opt(cfg);
    opt.step({a}, 0.01);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(std::abs(a->value(0, i)), 0.01f, 1e-6f);
}
