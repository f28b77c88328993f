#include "tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstring>
#include <sstream>

namespace motlab {

const char* dtype_name(Dtype dt) { return dt == Dtype::f64 ? "f64" : "f32"; }

Dtype dtype_from_name(const std::string& s) {
    if (s == "f64") return Dtype::f64;
    if (s == "f32") return Dtype::f32;
    throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

std::size_t dtype_bytes(Dtype dt) { return dt == Dtype::f64 ? 8 : 4; }

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, Dtype dt) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = shape_numel(t.shape_);
    t.dtype_ = dt;
    if (dt == Dtype::f64)
        t.f64_.assign(static_cast<std::size_t>(t.numel_), 0.0);
    else
        t.f32_.assign(static_cast<std::size_t>(t.numel_), 0.0f);
    return t;
}

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
    Tensor t = zeros(std::move(shape), dt);
    t.fill(value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = shape_numel(t.shape_);
    check(t.numel_ == static_cast<std::int64_t>(values.size()),
          "value count does not match shape " + shape_str(t.shape_));
    t.dtype_ = Dtype::f64;
    t.f64_ = std::move(values);
    return t;
}

std::int64_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    if (shape_.size() == 1) return 1;
    throw ConfigError("rows(): tensor is not 1/2-D: " + shape_str(shape_));
}

std::int64_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    throw ConfigError("cols(): tensor is not 1/2-D: " + shape_str(shape_));
}

double Tensor::at(std::int64_t i) const {
    return dtype_ == Dtype::f64 ? f64_[static_cast<std::size_t>(i)]
                                : static_cast<double>(f32_[static_cast<std::size_t>(i)]);
}

void Tensor::set(std::int64_t i, double v) {
    if (dtype_ == Dtype::f64)
        f64_[static_cast<std::size_t>(i)] = v;
    else
        f32_[static_cast<std::size_t>(i)] = static_cast<float>(v);
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == dtype_) return *this;
    Tensor t = zeros(shape_, dt);
    for (std::int64_t i = 0; i < numel_; ++i) t.set(i, at(i));
    return t;
}

void Tensor::fill(double v) {
    if (dtype_ == Dtype::f64)
        std::fill(f64_.begin(), f64_.end(), v);
    else
        std::fill(f32_.begin(), f32_.end(), static_cast<float>(v));
}

bool Tensor::all_finite() const {
    if (dtype_ == Dtype::f64) {
        for (double v : f64_)
            if (!std::isfinite(v)) return false;
    } else {
        for (float v : f32_)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::sum_all() const {
    double s = 0;
    for (std::int64_t i = 0; i < numel_; ++i) s += at(i);
    return s;
}

double Tensor::sq_norm() const {
    double s = 0;
    for (std::int64_t i = 0; i < numel_; ++i) {
        double v = at(i);
        s += v * v;
    }
    return s;
}

double Tensor::max_abs_diff(const Tensor& o) const {
    check(shape_ == o.shape_, "max_abs_diff: shape mismatch " + shape_str(shape_) + " vs " +
                                  shape_str(o.shape_));
    double m = 0;
    for (std::int64_t i = 0; i < numel_; ++i) m = std::max(m, std::abs(at(i) - o.at(i)));
    return m;
}

bool Tensor::bit_equal(const Tensor& o) const {
    if (shape_ != o.shape_ || dtype_ != o.dtype_) return false;
    if (dtype_ == Dtype::f64)
        return std::memcmp(f64_.data(), o.f64_.data(), f64_.size() * sizeof(double)) == 0;
    return std::memcmp(f32_.data(), o.f32_.data(), f32_.size() * sizeof(float)) == 0;
}

// --------------------------------------------------------------------------
// MAC counter
// --------------------------------------------------------------------------

const char* mac_category_name(MacCategory c) {
    switch (c) {
        case MacCategory::attn_proj: return "attn_proj";
        case MacCategory::attn_mix: return "attn_mix";
        case MacCategory::ffn: return "ffn";
        case MacCategory::router: return "router";
        case MacCategory::head: return "head";
        case MacCategory::embed_io: return "embed_io";
        case MacCategory::other: return "other";
    }
    return "?";
}

namespace {
struct MacState {
    std::array<std::int64_t, kNumMacCategories> counts{};
    MacCategory current = MacCategory::other;
};
thread_local MacState g_macs;
}  // namespace

namespace macs {
void reset() { g_macs.counts.fill(0); }
void add(std::int64_t n, MacCategory c) { g_macs.counts[static_cast<int>(c)] += n; }
std::int64_t total() {
    std::int64_t s = 0;
    for (auto v : g_macs.counts) s += v;
    return s;
}
std::int64_t by(MacCategory c) { return g_macs.counts[static_cast<int>(c)]; }
MacCategory current_category() { return g_macs.current; }
}  // namespace macs

MacScope::MacScope(MacCategory c) : prev_(g_macs.current) { g_macs.current = c; }
MacScope::~MacScope() { g_macs.current = prev_; }

// --------------------------------------------------------------------------
// Kernels
// --------------------------------------------------------------------------

namespace {

template <class T>
using MatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using MutMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
void matmul_impl(Tensor& c, const Tensor& a, const Tensor& b, bool ta, bool tb, bool accumulate) {
    const std::int64_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    const std::int64_t m = ta ? ac : ar;
    const std::int64_t k = ta ? ar : ac;
    const std::int64_t kb = tb ? bc : br;
    const std::int64_t n = tb ? br : bc;
    if (k != kb)
        throw ConfigError("matmul: inner dims disagree: " + shape_str(a.shape()) + (ta ? "^T" : "") +
                          " x " + shape_str(b.shape()) + (tb ? "^T" : ""));
    MatMap<T> am(a.data<T>().data(), ar, ac);
    MatMap<T> bm(b.data<T>().data(), br, bc);
    MutMatMap<T> cm(c.data<T>().data(), m, n);
    if (!ta && !tb)
        accumulate ? void(cm.noalias() += am * bm) : void(cm.noalias() = am * bm);
    else if (ta && !tb)
        accumulate ? void(cm.noalias() += am.transpose() * bm) : void(cm.noalias() = am.transpose() * bm);
    else if (!ta && tb)
        accumulate ? void(cm.noalias() += am * bm.transpose()) : void(cm.noalias() = am * bm.transpose());
    else
        accumulate ? void(cm.noalias() += am.transpose() * bm.transpose())
                   : void(cm.noalias() = am.transpose() * bm.transpose());
    macs::add(m * n * k, macs::current_category());
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ConfigError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                          dtype_name(b.dtype()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_same_dtype(a, b, "matmul");
    const std::int64_t m = trans_a ? a.cols() : a.rows();
    const std::int64_t n = trans_b ? b.rows() : b.cols();
    Tensor c = Tensor::zeros({m, n}, a.dtype());
    dtype_dispatch(a.dtype(), [&](auto tag) {
        matmul_impl<decltype(tag)>(c, a, b, trans_a, trans_b, false);
    });
    return c;
}

void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_same_dtype(a, b, "matmul_acc");
    check_same_dtype(a, c, "matmul_acc");
    dtype_dispatch(a.dtype(), [&](auto tag) {
        matmul_impl<decltype(tag)>(c, a, b, trans_a, trans_b, true);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "add");
    check(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c = a;
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto cd = c.data<T>();
        auto bd = b.data<T>();
        for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
        return 0;
    });
    return c;
}

void add_inplace(Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "add_inplace");
    check(a.shape() == b.shape(),
          "add_inplace: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ad = a.data<T>();
        auto bd = b.data<T>();
        for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
        return 0;
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "sub");
    check(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c = a;
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto cd = c.data<T>();
        auto bd = b.data<T>();
        for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
        return 0;
    });
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "mul");
    check(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c = a;
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto cd = c.data<T>();
        auto bd = b.data<T>();
        for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
        return 0;
    });
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    scale_inplace(r, c);
    return r;
}

void scale_inplace(Tensor& a, double c) {
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ad = a.data<T>();
        const T cc = static_cast<T>(c);
        for (auto& v : ad) v *= cc;
        return 0;
    });
}

Tensor axpy(const Tensor& a, double c, const Tensor& b) {
    check_same_dtype(a, b, "axpy");
    check(a.shape() == b.shape(),
          "axpy: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor r = a;
    dtype_dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto rd = r.data<T>();
        auto bd = b.data<T>();
        const T cc = static_cast<T>(c);
        for (std::size_t i = 0; i < rd.size(); ++i) rd[i] += cc * bd[i];
        return 0;
    });
    return r;
}

}  // namespace motlab
