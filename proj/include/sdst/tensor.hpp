#pragma once

// Dense matrix aliases, parameters and seeded initialisation helpers.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdst {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;

/// Feature frames of one utterance, one frame per row.
using FeatureSequence = Matrix;

using Rng = std::mt19937_64;

/// A learned tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }

    void zero_grad() { grad.setZero(); }
    std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

using ParamPtr = std::shared_ptr<Parameter>;
using ParameterList = std::vector<ParamPtr>;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, float stddev, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

inline ParamPtr make_param(std::string name, Matrix value) {
    return std::make_shared<Parameter>(std::move(name), std::move(value));
}

inline ParamPtr gaussian_param(std::string name, Eigen::Index rows, Eigen::Index cols, float stddev,
                               Rng& rng) {
    return make_param(std::move(name), gaussian(rows, cols, stddev, rng));
}

inline ParamPtr zeros_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return make_param(std::move(name), Matrix::Zero(rows, cols));
}

inline ParamPtr ones_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return make_param(std::move(name), Matrix::Ones(rows, cols));
}

inline void set_trainable(const ParameterList& params, bool flag) {
    for (const auto& p : params) p->trainable = flag;
}

inline std::size_t count_parameters(const ParameterList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p->size();
    return n;
}

/// Deep copy of the parameter values, used to snapshot and restore weights.
inline std::vector<Matrix> snapshot(const ParameterList& params) {
    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p->value);
    return out;
}

inline void restore(const ParameterList& params, const std::vector<Matrix>& values) {
    if (params.size() != values.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

/// FNV-1a over raw bytes; used for weight checksums and config hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::uint64_t checksum(const ParameterList& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params) {
        h = fnv1a(p->name.data(), p->name.size(), h);
        h = fnv1a(p->value.data(), sizeof(float) * p->size(), h);
    }
    return h;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace sdst
