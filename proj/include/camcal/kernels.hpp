#pragma once

// Dense compute kernels on raw row-major buffers.
//
// Every kernel comes in two flavours: a plain serial loop nest (the
// reference, kept around for tests and as the fallback without OpenMP)
// and an OpenMP-parallel version. The parallel versions split work so
// that each output element is accumulated by exactly one thread in a
// fixed order, so results are bit-identical to the serial path for any
// thread count.

#include <cstdint>

namespace camcal::kernels {

struct Conv2dDims {
    int batch = 1;
    int in_channels = 0;
    int in_h = 0;
    int in_w = 0;
    int out_channels = 0;
    int kernel_h = 0;
    int kernel_w = 0;
    int stride = 1;
    int padding = 0;

    int out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
    int out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
};

// out[n,co,oy,ox] = sum_{ci,ky,kx} in[n,ci,oy*s-p+ky,ox*s-p+kx] * k[co,ci,ky,kx]
template <typename T>
void conv2d_forward(const T* in, const T* kernel, T* out, const Conv2dDims& d);
template <typename T>
void conv2d_forward_serial(const T* in, const T* kernel, T* out, const Conv2dDims& d);

// grad_in[n,ci,iy,ix] += gather over (co,ky,kx) of grad_out * kernel
template <typename T>
void conv2d_backward_input(const T* grad_out, const T* kernel, T* grad_in, const Conv2dDims& d);
template <typename T>
void conv2d_backward_input_serial(const T* grad_out, const T* kernel, T* grad_in, const Conv2dDims& d);

// grad_kernel[co,ci,ky,kx] += sum over (n,oy,ox) of grad_out * in
template <typename T>
void conv2d_backward_kernel(const T* in, const T* grad_out, T* grad_kernel, const Conv2dDims& d);
template <typename T>
void conv2d_backward_kernel_serial(const T* in, const T* grad_out, T* grad_kernel, const Conv2dDims& d);

// C[m,n] (+)= sum_k A[m,k] * B[k,n]; trans_a/trans_b read A/B transposed.
// A is m x k (or k x m when transposed), B is k x n (or n x k).
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k,
            bool trans_a, bool trans_b, bool accumulate);
template <typename T>
void matmul_serial(const T* a, const T* b, T* c, int m, int n, int k,
                   bool trans_a, bool trans_b, bool accumulate);

// Caps OpenMP worker count; no-op when built without OpenMP.
void set_max_threads(int n);
int max_threads();

}  // namespace camcal::kernels
