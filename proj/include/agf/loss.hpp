#pragma once

// Differentiable sequence-lifting losses: per-joint Euclidean position error
// summed over frames and joints, plus the matching first-difference velocity
// term. Batched tensors are laid out (B*T) x J x 3.

#include "agf/tensor.hpp"

namespace agf {

struct LossConfig {
    double lambda_velocity = 1.0;  // nonnegative
};

namespace detail {

// sum over all positions of the per-joint Euclidean norm of (a - b)
template <typename T>
Tensor<T> norm_sum(const Tensor<T>& a, const Tensor<T>& b) {
    auto diff = sub(a, b);
    auto sq = mul(diff, diff);
    return sum_all(agf::sqrt(sum_last(sq)));
}

}  // namespace detail

// sum_t sum_j ||pred - gt||_2, averaged over the batch
template <typename T>
Tensor<T> position_loss(const Tensor<T>& pred, const Tensor<T>& gt, std::size_t batch) {
    if (pred.shape() != gt.shape())
        throw std::runtime_error("position_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                 shape_str(gt.shape()));
    return mul_scalar(detail::norm_sum(pred, gt), 1.0 / static_cast<double>(batch));
}

// sum_{t>=2} sum_j ||dpred - dgt||_2, averaged over the batch; 0 when T == 1.
// pred/gt are (B*T) x J x 3 with `frames` consecutive rows per sequence.
template <typename T>
Tensor<T> velocity_loss(const Tensor<T>& pred, const Tensor<T>& gt, std::size_t batch, std::size_t frames) {
    if (pred.shape() != gt.shape())
        throw std::runtime_error("velocity_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                 shape_str(gt.shape()));
    if (frames < 2) return Tensor<T>::scalar(T(0));
    const std::size_t joints = pred.shape()[1];
    auto delta = [&](const Tensor<T>& x) {
        auto grouped = reshape(x, {batch, frames, joints * 3});
        auto head = slice_axis1(grouped, 0, frames - 1);
        auto tail = slice_axis1(grouped, 1, frames - 1);
        return reshape(sub(tail, head), {batch * (frames - 1), joints, std::size_t(3)});
    };
    return mul_scalar(detail::norm_sum(delta(pred), delta(gt)), 1.0 / static_cast<double>(batch));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, std::size_t batch, std::size_t frames,
                     const LossConfig& cfg) {
    auto pos = position_loss(pred, gt, batch);
    if (cfg.lambda_velocity == 0.0) return pos;
    return add(pos, mul_scalar(velocity_loss(pred, gt, batch, frames), cfg.lambda_velocity));
}

}  // namespace agf
