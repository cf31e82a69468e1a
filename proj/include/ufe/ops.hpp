#pragma once

// Differentiable operations. Spatial tensors are laid out [C, H, W].
// Elementwise binary ops accept identical shapes, or one operand with a
// single element which is broadcast.

#include <vector>

#include "ufe/tensor.hpp"

namespace ufe::ops {

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

// Bilinear, align-corners = false.
template <class T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int factor);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

// Full reductions to shape [1].
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// Concatenate [C_i, H, W] tensors along channels.
template <class T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);

// y = W x + b with x: [n], W: [m, n], b: [m].
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

// Per-channel feature modulation: (1 + gamma[c]) * x[c] + beta[c].
template <class T>
BasicTensor<T> modulate(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                        const BasicTensor<T>& beta);

}  // namespace ufe::ops
