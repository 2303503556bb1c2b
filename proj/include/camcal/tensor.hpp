#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace camcal::ad {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. Data is immutable during a forward pass; the
// grad buffer exists only when requires_grad is set and is accumulated
// additively by the tape during backward.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // same length as data when requires_grad

    TensorT(Shape s, bool req_grad)
        : shape(std::move(s)),
          data(static_cast<size_t>(numel_of(shape)), T(0)),
          requires_grad(req_grad),
          grad(req_grad ? data.size() : 0, T(0)) {}

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), T(0));
    }

    void ensure_grad() {
        if (requires_grad && grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
using VarT = std::shared_ptr<TensorT<T>>;

template <typename T>
VarT<T> make_var(Shape shape, bool requires_grad = false) {
    return std::make_shared<TensorT<T>>(std::move(shape), requires_grad);
}

template <typename T>
VarT<T> make_var(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto v = make_var<T>(std::move(shape), requires_grad);
    if (static_cast<int64_t>(values.size()) != v->numel())
        throw std::invalid_argument("make_var: value count does not match shape " +
                                    shape_str(v->shape));
    v->data = std::move(values);
    return v;
}

template <typename T>
VarT<T> scalar_var(T value, bool requires_grad = false) {
    auto v = make_var<T>(Shape{1}, requires_grad);
    v->data[0] = value;
    return v;
}

template <typename T>
void fill_uniform(TensorT<T>& t, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& x : t.data) x = static_cast<T>(dist(rng));
}

// Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
void kaiming_uniform(TensorT<T>& t, std::mt19937_64& rng, int fan_in) {
    const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    fill_uniform(t, rng, -bound, bound);
}

}  // namespace camcal::ad
