#pragma once

#include <optional>

#include "styleremix/tensor.hpp"

namespace styleremix {

/// Convolution stride: a positive integer, or the fractional stride 1/2
/// used by the decoder's upsampling layers.
class Stride {
public:
    static Stride integer(std::size_t step);
    static Stride half() { return Stride(1, true); }

    bool is_half() const { return half_; }
    std::size_t step() const { return step_; }

    bool operator==(const Stride&) const = default;

private:
    Stride(std::size_t step, bool half) : step_(step), half_(half) {}
    std::size_t step_;
    bool half_;
};

/// Kernel bank [c_out, c_in, k_h, k_w] with odd k_h, k_w, optional bias [c_out].
/// Padding is always reflection "same".
template <typename T>
struct ConvKernel {
    Tensor<T> weights;
    Tensor<T> bias;  // undefined when absent
    Stride stride = Stride::integer(1);

    std::size_t out_channels() const { return weights.dim(0); }
    std::size_t in_channels() const { return weights.dim(1); }
    std::size_t kernel_h() const { return weights.dim(2); }
    std::size_t kernel_w() const { return weights.dim(3); }
};

/// Mirror index into [0, n) without repeating the edge sample. A length-1
/// axis maps everything onto its single sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Cross-correlation with reflection padding; [n,c_in,h,w] -> [n,c_out,h/s,w/s].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel);

/// Nearest-neighbour 2x upsampling; [n,c,h,w] -> [n,c,2h,2w].
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input);

/// Fractional-stride convolution: 2x nearest upsample, then stride-1 conv2d.
template <typename T>
Tensor<T> upsample_conv2d(const Tensor<T>& input, const ConvKernel<T>& kernel);

/// Per-sample, per-channel standardisation over h*w followed by gamma/beta.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(1e-5));

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Max-subtracted softmax over a 1-D tensor. Throws on non-finite input.
template <typename T>
Tensor<T> softmax_vec(const Tensor<T>& input);

/// out[n,i,:,:] = input[n,i,:,:] * weights[i]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, const Tensor<T>& weights);

/// Scales input-channel slice i of a [c_out,c_in,kh,kw] kernel by weights[i].
template <typename T>
Tensor<T> scale_input_slices(const Tensor<T>& kernel, const Tensor<T>& weights);

/// Unnormalised gram matrices: [n,C,H,W] -> [n,C,C], G = M M^T per sample.
template <typename T>
Tensor<T> gram_matrix(const Tensor<T>& features);

}  // namespace styleremix
