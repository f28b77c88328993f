#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace motlab {

enum class Dtype { f32, f64 };

const char* dtype_name(Dtype dt);
Dtype dtype_from_name(const std::string& s);
std::size_t dtype_bytes(Dtype dt);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major tensor. Values live in exactly one of the two buffers,
/// selected by dtype; all math runs natively in that precision.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, Dtype dt = Dtype::f64);
    static Tensor full(Shape shape, double value, Dtype dt = Dtype::f64);
    /// Builds an f64 tensor from explicit values (test/serialization helper).
    static Tensor from(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    Dtype dtype() const { return dtype_; }
    std::int64_t numel() const { return numel_; }
    bool empty() const { return numel_ == 0; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }

    // 2-D views; most of the stack works on matrices (rows = tokens).
    std::int64_t rows() const;
    std::int64_t cols() const;

    template <class T> std::span<T> data();
    template <class T> std::span<const T> data() const;

    // Dtype-erased element access (slow path: tests, serialization, probes).
    double at(std::int64_t i) const;
    void set(std::int64_t i, double v);
    double at2(std::int64_t r, std::int64_t c) const { return at(r * cols() + c); }
    void set2(std::int64_t r, std::int64_t c, double v) { set(r * cols() + c, v); }

    Tensor astype(Dtype dt) const;
    Tensor clone() const { return *this; }
    void fill(double v);
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double sum_all() const;
    double sq_norm() const;
    double max_abs_diff(const Tensor& o) const;
    bool bit_equal(const Tensor& o) const;

private:
    Shape shape_;
    std::int64_t numel_ = 0;
    Dtype dtype_ = Dtype::f64;
    std::vector<float> f32_;
    std::vector<double> f64_;
};

template <> inline std::span<double> Tensor::data<double>() {
    check(dtype_ == Dtype::f64, "tensor is not f64");
    return {f64_.data(), f64_.size()};
}
template <> inline std::span<const double> Tensor::data<double>() const {
    check(dtype_ == Dtype::f64, "tensor is not f64");
    return {f64_.data(), f64_.size()};
}
template <> inline std::span<float> Tensor::data<float>() {
    check(dtype_ == Dtype::f32, "tensor is not f32");
    return {f32_.data(), f32_.size()};
}
template <> inline std::span<const float> Tensor::data<float>() const {
    check(dtype_ == Dtype::f32, "tensor is not f32");
    return {f32_.data(), f32_.size()};
}

/// Calls f(T{}) where T is the scalar type of dt.
template <class F>
auto dtype_dispatch(Dtype dt, F&& f) {
    return dt == Dtype::f64 ? f(double{}) : f(float{});
}

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation.
//
// Every matmul kernel reports its MAC count into a thread-local counter,
// bucketed by what the multiply is doing in the model. The counter is always
// on (the cost is one thread-local add per GEMM call).
// ---------------------------------------------------------------------------

enum class MacCategory { attn_proj, attn_mix, ffn, router, head, embed_io, other };
constexpr int kNumMacCategories = 7;
const char* mac_category_name(MacCategory c);

namespace macs {
void reset();
void add(std::int64_t n, MacCategory c);
std::int64_t total();
std::int64_t by(MacCategory c);
/// Category applied to matmuls that do not pass one explicitly.
MacCategory current_category();
}  // namespace macs

/// RAII scope that tags all matmuls issued inside it with a category.
class MacScope {
public:
    explicit MacScope(MacCategory c);
    ~MacScope();
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

private:
    MacCategory prev_;
};

// ---------------------------------------------------------------------------
// Raw kernels (no autodiff). The tape in graph.hpp builds on these.
// ---------------------------------------------------------------------------

/// C = op(A) * op(B) with optional transposes; counts rows*cols*inner MACs.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// In-place C += op(A) * op(B); shapes must already agree.
void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b, bool trans_a = false,
                bool trans_b = false);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
void scale_inplace(Tensor& a, double c);
/// a + c*b, elementwise.
Tensor axpy(const Tensor& a, double c, const Tensor& b);

}  // namespace motlab
