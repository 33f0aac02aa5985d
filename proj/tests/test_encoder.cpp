#include "sdst/encoder.hpp"
#include "sdst/optim.hpp"

#include <gtest/gtest.h>

using namespace sdst;

namespace {

Utterance symbols(int n, int modulo = 10) {
    Utterance u;
    for (int i = 0; i < n; ++i) u.symbols.push_back(i % modulo);
    return u;
}

}  // namespace

TEST(ToyEncoder, LengthIsSymbolsTimesExpansion) {
    ToyEncoderConfig cfg;
    cfg.expansion = 4;
    ToyEncoder enc(cfg);
    FeatureSequence f = enc.encode(symbols(30));
    EXPECT_EQ(f.rows(), 120);
    EXPECT_EQ(f.cols(), cfg.dim);
    EXPECT_TRUE(f.allFinite());
}

TEST(ToyEncoder, LengthIsDeterministicInInputLength) {
    ToyEncoderConfig cfg;
    cfg.expansion = 3;
    ToyEncoder enc(cfg);
    for (int n = 1; n < 20; ++n) EXPECT_EQ(enc.encode(symbols(n, 7)).rows(), 3 * n);
}

TEST(ToyEncoder, Deterministic) {
    ToyEncoder enc(ToyEncoderConfig{});
    EXPECT_EQ(enc.encode(symbols(12)), enc.encode(symbols(12)));
    ToyEncoder twin(ToyEncoderConfig{});
    EXPECT_EQ(enc.encode(symbols(12)), twin.encode(symbols(12)));
}

TEST(ToyEncoder, RejectsEmptyAndOutOfRange) {
    ToyEncoder enc(ToyEncoderConfig{});
    EXPECT_THROW(enc.encode(Utterance{}), std::invalid_argument);
    Utterance bad;
    bad.symbols = {0, 1000};
    EXPECT_THROW(enc.encode(bad), std::out_of_range);
}

TEST(ToyEncoder, FrozenWeightsStayBitIdentical) {
    ToyEncoder enc(ToyEncoderConfig{});
    enc.set_trainable(false);
    EXPECT_FALSE(enc.trainable());
    auto before = checksum(enc.parameters());
    Tape t;
    Var out = enc.encode(t, symbols(8));
    Var loss = ops::matmul(t, t.constant(Matrix::Ones(1, t.value(out).rows())),
                           ops::matmul(t, out, t.constant(Matrix::Ones(t.value(out).cols(), 1))));
    t.backward(loss);
    AdamW opt;
    opt.step(enc.parameters(), 1e-2);
    EXPECT_EQ(checksum(enc.parameters()), before);
}

TEST(ToyEncoder, TrainableWeightsMove) {
    ToyEncoder enc(ToyEncoderConfig{});
    enc.set_trainable(true);
    auto before = checksum(enc.parameters());
    Tape t;
    Var out = enc.encode(t, symbols(8));
    Var loss = ops::matmul(t, t.constant(Matrix::Ones(1, t.value(out).rows())),
                           ops::matmul(t, out, t.constant(Matrix::Ones(t.value(out).cols(), 1))));
    t.backward(loss);
    AdamW opt;
    opt.step(enc.parameters(), 1e-2);
    EXPECT_NE(checksum(enc.parameters()), before);
}

TEST(PrecomputedEncoder, Passthrough) {
    PrecomputedEncoder enc(6);
    Rng rng(2);
    Utterance u;
    u.features = gaussian(57, 6, 1.0f, rng);
    FeatureSequence f = enc.encode(u);
    EXPECT_EQ(f.rows(), 57);
    EXPECT_EQ(f, *u.features);
    EXPECT_EQ(enc.spec().kind, EncoderKind::precomputed);
    EXPECT_EQ(enc.spec().output_dim, 6);
}

TEST(PrecomputedEncoder, CannotBeTrained) {
    PrecomputedEncoder enc(4);
    EXPECT_NO_THROW(enc.set_trainable(false));
    try {
        enc.set_trainable(true);
        FAIL() << "expected an error";
    } catch (const std::logic_error& e) {
        EXPECT_STREQ(e.what(), "encoder not trainable");
    }
    EXPECT_FALSE(enc.trainable());
    EXPECT_TRUE(enc.parameters().empty());
}

TEST(PrecomputedEncoder, RejectsEmptyOrWrongWidth) {
    PrecomputedEncoder enc(4);
    EXPECT_THROW(enc.encode(Utterance{}), std::invalid_argument);
    Utterance u;
    u.features = Matrix::Zero(3, 5);
    EXPECT_THROW(enc.encode(u), std::invalid_argument);
}
