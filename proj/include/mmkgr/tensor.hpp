#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmkgr {

// Dense row-major matrix of doubles. Rank <= 2: vectors are 1xN or Nx1.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(check_extent(rows, cols), 0.0) {}
    Tensor(int rows, int cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (static_cast<std::size_t>(check_extent(rows, cols)) != data_.size()) {
            throw std::invalid_argument("Tensor: value count " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str());
        }
    }

    static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
    static Tensor full(int rows, int cols, double v) {
        Tensor t(rows, cols);
        for (auto& x : t.data_) x = v;
        return t;
    }
    // 1x1 wrapper, used for scalar losses.
    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int size() const { return rows_ * cols_; }
    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double item() const {
        if (size() != 1) throw std::logic_error("Tensor::item on shape " + shape_str());
        return data_[0];
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (auto& x : data_) x = v;
    }

private:
    static int check_extent(int rows, int cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
        return rows * cols;
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Learnable tensor with an accumulated gradient and a stable checkpoint name.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.rows(), value.cols());
    }

    void zero_grad() { grad.fill(0.0); }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

} // namespace mmkgr
