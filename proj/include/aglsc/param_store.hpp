#pragma once

#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace aglsc {

struct Parameter {
    std::string name;
    DenseMatrix value;
    DenseMatrix grad;
    DenseMatrix m;  // Adam first moment
    DenseMatrix v;  // Adam second moment
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameters with same-shaped gradient and moment buffers. Insertion
// order is preserved and defines checkpoint layout.
class ParamStore {
public:
    Parameter& add(std::string name, DenseMatrix value) {
        if (find(name) != nullptr) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
        Parameter p;
        p.name = std::move(name);
        p.grad = DenseMatrix::Zero(value.rows(), value.cols());
        p.m = DenseMatrix::Zero(value.rows(), value.cols());
        p.v = DenseMatrix::Zero(value.rows(), value.cols());
        p.value = std::move(value);
        params_.push_back(std::move(p));
        return params_.back();
    }

    Parameter* find(std::string_view name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }
    const Parameter* find(std::string_view name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    Parameter& at(std::string_view name) {
        if (auto* p = find(name)) return *p;
        throw ConfigError("ParamStore: unknown parameter '" + std::string(name) + "'");
    }
    const Parameter& at(std::string_view name) const {
        if (const auto* p = find(name)) return *p;
        throw ConfigError("ParamStore: unknown parameter '" + std::string(name) + "'");
    }

    DenseMatrix& value(std::string_view name) { return at(name).value; }
    const DenseMatrix& value(std::string_view name) const { return at(name).value; }
    DenseMatrix& grad(std::string_view name) { return at(name).grad; }
    const DenseMatrix& grad(std::string_view name) const { return at(name).grad; }

    std::vector<Parameter>& params() noexcept { return params_; }
    const std::vector<Parameter>& params() const noexcept { return params_; }
    std::size_t size() const noexcept { return params_.size(); }

    std::uint64_t step() const noexcept { return step_; }
    void set_step(std::uint64_t s) noexcept { step_ = s; }

    void zero_grad() {
        for (auto& p : params_) p.grad.setZero();
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    bool operator==(const ParamStore& other) const {
        if (step_ != other.step_ || params_.size() != other.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& a = params_[i];
            const auto& b = other.params_[i];
            if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
            if (a.value != b.value || a.m != b.m || a.v != b.v) return false;
        }
        return true;
    }

private:
    std::vector<Parameter> params_;
    std::uint64_t step_ = 0;
};

// One bias-corrected Adam update of every parameter. Gradients are checked
// for finiteness before anything is modified, then zeroed.
inline void adam_step(ParamStore& store, const AdamOptions& opt) {
    for (const auto& p : store.params())
        if (!p.grad.allFinite()) throw DivergenceError(p.name);

    const std::uint64_t t = store.step() + 1;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    for (auto& p : store.params()) {
        const Index n = p.value.size();
        double* x = p.value.data();
        double* g = p.grad.data();
        double* m = p.m.data();
        double* v = p.v.data();
        for (Index i = 0; i < n; ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            x[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
            g[i] = 0.0;
        }
    }
    store.set_step(t);
}

inline void adam_step(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    adam_step(store, AdamOptions{lr, beta1, beta2, eps});
}

}  // namespace aglsc
