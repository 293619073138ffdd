#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace balf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

/// Dense tensor extents, rank 1..3. Layout is row-major with the last
/// (channel) axis fastest-varying, fixed once for the whole project so
/// serialization and partition index math stay unambiguous.
struct Shape {
    std::array<int, 3> d{1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(int a) : d{a, 1, 1}, rank(1) { check(); }
    Shape(int a, int b) : d{a, b, 1}, rank(2) { check(); }
    Shape(int a, int b, int c) : d{a, b, c}, rank(3) { check(); }

    int operator[](int i) const { return d[static_cast<size_t>(i)]; }

    std::size_t numel() const {
        std::size_t n = 1;
        for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(d[static_cast<size_t>(i)]);
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank != o.rank) return false;
        for (int i = 0; i < rank; ++i)
            if (d[static_cast<size_t>(i)] != o.d[static_cast<size_t>(i)]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "[";
        for (int i = 0; i < rank; ++i) os << (i ? "," : "") << d[static_cast<size_t>(i)];
        os << "]";
        return os.str();
    }

private:
    void check() const {
        for (int i = 0; i < rank; ++i)
            if (d[static_cast<size_t>(i)] <= 0) throw ShapeError("non-positive extent in shape " + str());
    }
};

namespace detail {

/// Every numeric buffer is allocated on a fixed 64-byte boundary. SIMD code
/// then takes the same peel/packet split on every run, so results never
/// depend on where the heap happened to place an allocation and repeated
/// runs stay bitwise identical.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    using is_always_equal = std::true_type;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}

    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t(Align));
    }

    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

}  // namespace detail

template <typename T>
using AlignedVec = std::vector<T, detail::AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Storage {
    Shape shape;
    AlignedVec<T> data;
    AlignedVec<T> grad;  // lazily allocated on first access
    bool requires_grad = false;

    // Gradients materialize zero-filled the first time they are touched —
    // recording a graph does not pay for buffers backward may never need.
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    bool has_grad() const { return !grad.empty(); }

    void release_buffers() {
        AlignedVec<T>().swap(data);
        AlignedVec<T>().swap(grad);
    }
};

}  // namespace detail

/// Shared-buffer tensor handle: copying aliases the same storage, clone()
/// deep-copies. Gradients live next to the values and accumulate across
/// backward passes until zero_grad().
template <typename T>
class TensorT {
public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(const Shape& s, bool requires_grad = false) {
        TensorT t;
        t.st_ = std::make_shared<detail::Storage<T>>();
        t.st_->shape = s;
        t.st_->data.assign(s.numel(), T(0));
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static TensorT full(const Shape& s, T v, bool requires_grad = false) {
        TensorT t = zeros(s, requires_grad);
        for (auto& x : t.st_->data) x = v;
        return t;
    }

    static TensorT from(const Shape& s, std::vector<T> values, bool requires_grad = false) {
        if (values.size() != s.numel())
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match shape " + s.str());
        TensorT t;
        t.st_ = std::make_shared<detail::Storage<T>>();
        t.st_->shape = s;
        t.st_->data.assign(values.begin(), values.end());
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return full(Shape(1), v, requires_grad);
    }

    bool defined() const { return static_cast<bool>(st_); }
    const Shape& shape() const { return st_->shape; }
    std::size_t numel() const { return st_->shape.numel(); }
    int rank() const { return st_->shape.rank; }
    int dim(int i) const { return st_->shape[i]; }

    std::span<T> data() { return {st_->data.data(), st_->data.size()}; }
    std::span<const T> data() const { return {st_->data.data(), st_->data.size()}; }

    bool requires_grad() const { return st_->requires_grad; }

    void set_requires_grad(bool rg) {
        st_->requires_grad = rg;
        if (!rg) st_->grad.clear();
    }

    std::span<T> grad() {
        if (!st_->requires_grad) throw Error("tensor does not require grad");
        st_->ensure_grad();
        return {st_->grad.data(), st_->grad.size()};
    }
    std::span<const T> grad() const {
        if (!st_->requires_grad) throw Error("tensor does not require grad");
        st_->ensure_grad();
        return {st_->grad.data(), st_->grad.size()};
    }

    void zero_grad() {
        for (auto& g : st_->grad) g = T(0);
    }

    // Row-major, channel fastest: flat = (i*W + j)*C + c for [H,W,C].
    T& at(int i) { return st_->data[static_cast<size_t>(i)]; }
    T at(int i) const { return st_->data[static_cast<size_t>(i)]; }
    T& at(int i, int j) { return st_->data[static_cast<size_t>(i) * st_->shape[1] + j]; }
    T at(int i, int j) const { return st_->data[static_cast<size_t>(i) * st_->shape[1] + j]; }
    T& at(int i, int j, int c) {
        return st_->data[(static_cast<size_t>(i) * st_->shape[1] + j) * st_->shape[2] + c];
    }
    T at(int i, int j, int c) const {
        return st_->data[(static_cast<size_t>(i) * st_->shape[1] + j) * st_->shape[2] + c];
    }

    bool all_finite() const {
        for (T v : st_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    TensorT clone() const {
        TensorT t;
        t.st_ = std::make_shared<detail::Storage<T>>(*st_);
        return t;
    }

    bool same_storage(const TensorT& o) const { return st_ == o.st_; }

    detail::Storage<T>* storage() const { return st_.get(); }
    std::shared_ptr<detail::Storage<T>> storage_ptr() const { return st_; }

private:
    std::shared_ptr<detail::Storage<T>> st_;
};

using Tensor = TensorT<float>;

}  // namespace balf
