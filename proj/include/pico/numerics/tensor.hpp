#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pico {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a value stops being finite or an embedding degenerates.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles. Value semantics; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    // Two-dimensional view helpers. A rank-1 tensor is treated as a single row.
    std::size_t rows() const { return shape_.size() == 1 ? 1 : shape_.at(0); }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    void fill(double v);
    bool all_finite() const;
    // Throws NumericError naming `where` if any entry is NaN or infinite.
    void require_finite(const char* where) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace pico
