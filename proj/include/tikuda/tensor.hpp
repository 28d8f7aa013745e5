#pragma once

#include "tikuda/errors.hpp"
#include "tikuda/matrix.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tikuda {

/// Dense B×N×T×F array (batch, node, time, feature), row-major.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(std::size_t b, std::size_t n, std::size_t t, std::size_t f)
        : b_(b), n_(n), t_(t), f_(f), data_(b * n * t * f, 0.0) {}

    [[nodiscard]] std::size_t batch() const noexcept { return b_; }
    [[nodiscard]] std::size_t nodes() const noexcept { return n_; }
    [[nodiscard]] std::size_t steps() const noexcept { return t_; }
    [[nodiscard]] std::size_t features() const noexcept { return f_; }
    [[nodiscard]] bool empty() const noexcept { return b_ == 0; }

    double& at(std::size_t b, std::size_t n, std::size_t t, std::size_t f) noexcept {
        return data_[((b * n_ + n) * t_ + t) * f_ + f];
    }
    [[nodiscard]] double at(std::size_t b, std::size_t n, std::size_t t, std::size_t f) const noexcept {
        return data_[((b * n_ + n) * t_ + t) * f_ + f];
    }

    /// Samples at the given batch indices, in order.
    [[nodiscard]] Tensor4 select(std::span<const std::size_t> index) const {
        Tensor4 out(index.size(), n_, t_, f_);
        const std::size_t block = n_ * t_ * f_;
        for (std::size_t i = 0; i < index.size(); ++i) {
            if (index[i] >= b_) {
                throw OutOfRange("Tensor4::select: index " + std::to_string(index[i]) + " >= " + std::to_string(b_));
            }
            std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(index[i] * block), block,
                        out.data_.begin() + static_cast<std::ptrdiff_t>(i * block));
        }
        return out;
    }

    /// (B·N)×F slice at time t; row b·N + n.
    [[nodiscard]] Matrix step(std::size_t t) const {
        Matrix out(b_ * n_, f_);
        for (std::size_t b = 0; b < b_; ++b) {
            for (std::size_t n = 0; n < n_; ++n) {
                for (std::size_t f = 0; f < f_; ++f) {
                    out(b * n_ + n, f) = at(b, n, t, f);
                }
            }
        }
        return out;
    }

    [[nodiscard]] std::span<const double> flat() const noexcept { return data_; }

private:
    std::size_t b_ = 0;
    std::size_t n_ = 0;
    std::size_t t_ = 0;
    std::size_t f_ = 0;
    std::vector<double> data_;
};

}  // namespace tikuda
