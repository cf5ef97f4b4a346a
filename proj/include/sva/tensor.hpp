#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "sva/error.hpp"

namespace sva {

using Index = Eigen::Index;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

/// Dense multi-dimensional value: a shape plus row-major 64-bit floats.
/// Immutable by convention once handed to the tape; Eigen maps provide the
/// matrix/array views all numeric kernels run on.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_ = Eigen::VectorXd::Zero(checked_size(shape_));
    }

    Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
        const Index n = checked_size(shape_);
        if (static_cast<Index>(values.size()) != n)
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        data_ = ConstVecMap(values.data(), n);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        t.data_.setConstant(v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool empty() const { return shape_.empty(); }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index size() const { return data_.size(); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](Index i) { return data_[i]; }
    double operator[](Index i) const { return data_[i]; }

    /// Row-major element access for rank-2 tensors.
    double& at(int r, int c) { return data_[static_cast<Index>(r) * dim(1) + c]; }
    double at(int r, int c) const { return data_[static_cast<Index>(r) * dim(1) + c]; }

    /// Flat views.
    VecMap vec() { return VecMap(data_.data(), data_.size()); }
    ConstVecMap vec() const { return ConstVecMap(data_.data(), data_.size()); }
    ArrMap array() { return ArrMap(data_.data(), data_.size()); }
    ConstArrMap array() const { return ConstArrMap(data_.data(), data_.size()); }

    /// Rank-2 view; throws on other ranks.
    MatMap mat() {
        require_rank2();
        return MatMap(data_.data(), dim(0), dim(1));
    }
    ConstMatMap mat() const {
        require_rank2();
        return ConstMatMap(data_.data(), dim(0), dim(1));
    }

    /// View with explicit rows x cols (reinterpret, size must agree).
    MatMap mat_view(Index rows, Index cols) {
        if (rows * cols != size())
            throw ShapeError("mat_view " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " does not cover tensor of size " + std::to_string(size()));
        return MatMap(data_.data(), rows, cols);
    }
    ConstMatMap mat_view(Index rows, Index cols) const {
        if (rows * cols != size())
            throw ShapeError("mat_view " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " does not cover tensor of size " + std::to_string(size()));
        return ConstMatMap(data_.data(), rows, cols);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const { return data_.allFinite(); }

    void set_zero() { data_.setZero(); }

    std::string shape_str() const { return shape_str(shape_); }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

private:
    static Index checked_size(const std::vector<int>& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
        Index n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    void require_rank2() const {
        if (rank() != 2) throw ShapeError("rank-2 view requested on tensor of shape " + shape_str());
    }

    std::vector<int> shape_;
    Eigen::VectorXd data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

} // namespace sva
