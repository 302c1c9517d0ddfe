#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitkit {

// Errors surfaced by the library. The CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

// Dense n-dimensional tensor, row-major contiguous. Values are immutable by
// convention once an op has produced them; mutation is reserved for builders
// (fill_, random init) that own the tensor exclusively.
template <typename S>
class TensorT {
  public:
    TensorT() = default;

    explicit TensorT(Shape shape, S fill = S(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    TensorT(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static TensorT scalar(S v) { return TensorT(Shape{}, std::vector<S>{v}); }

    const Shape& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](size_t i) { return data_[i]; }
    S operator[](size_t i) const { return data_[i]; }

    S& operator()(size_t i) { return data_[i]; }
    S operator()(size_t i) const { return data_[i]; }
    S& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    S operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
    S& operator()(size_t i, size_t j, size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    S operator()(size_t i, size_t j, size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    S& operator()(size_t i, size_t j, size_t k, size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    S operator()(size_t i, size_t j, size_t k, size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    S item() const {
        if (numel() != 1)
            throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    void fill_(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void ensure_finite(const std::string& tag) const {
        if (!all_finite()) throw NumericError("non-finite values in " + tag);
    }

    template <typename T>
    TensorT<T> cast() const {
        std::vector<T> d(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<T>(data_[i]);
        return TensorT<T>(shape_, std::move(d));
    }

    std::string shape_string() const { return shape_str(shape_); }

  private:
    Shape shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
inline void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() +
                             " vs " + b.shape_string());
}

}  // namespace gaitkit
