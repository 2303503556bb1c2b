#include "camcal/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace camcal::kernels {

namespace {

template <typename T>
inline void conv2d_accumulate_one(const T* in, const T* kernel, T* out,
                                  const Conv2dDims& d, int n, int co) {
    const int oh = d.out_h();
    const int ow = d.out_w();
    const T* in_n = in + static_cast<int64_t>(n) * d.in_channels * d.in_h * d.in_w;
    const T* k_co = kernel + static_cast<int64_t>(co) * d.in_channels * d.kernel_h * d.kernel_w;
    T* out_nc = out + (static_cast<int64_t>(n) * d.out_channels + co) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            T acc = 0;
            for (int ci = 0; ci < d.in_channels; ++ci) {
                const T* in_c = in_n + static_cast<int64_t>(ci) * d.in_h * d.in_w;
                const T* k_c = k_co + static_cast<int64_t>(ci) * d.kernel_h * d.kernel_w;
                for (int ky = 0; ky < d.kernel_h; ++ky) {
                    const int iy = oy * d.stride - d.padding + ky;
                    if (iy < 0 || iy >= d.in_h) continue;
                    for (int kx = 0; kx < d.kernel_w; ++kx) {
                        const int ix = ox * d.stride - d.padding + kx;
                        if (ix < 0 || ix >= d.in_w) continue;
                        acc += in_c[iy * d.in_w + ix] * k_c[ky * d.kernel_w + kx];
                    }
                }
            }
            out_nc[oy * ow + ox] = acc;
        }
    }
}

template <typename T>
inline void conv2d_backward_input_one(const T* grad_out, const T* kernel, T* grad_in,
                                      const Conv2dDims& d, int n, int ci) {
    const int oh = d.out_h();
    const int ow = d.out_w();
    T* gin = grad_in + (static_cast<int64_t>(n) * d.in_channels + ci) * d.in_h * d.in_w;
    const T* gout_n = grad_out + static_cast<int64_t>(n) * d.out_channels * oh * ow;
    for (int iy = 0; iy < d.in_h; ++iy) {
        for (int ix = 0; ix < d.in_w; ++ix) {
            T acc = 0;
            for (int co = 0; co < d.out_channels; ++co) {
                const T* gout_c = gout_n + static_cast<int64_t>(co) * oh * ow;
                const T* k_c = kernel +
                    (static_cast<int64_t>(co) * d.in_channels + ci) * d.kernel_h * d.kernel_w;
                for (int ky = 0; ky < d.kernel_h; ++ky) {
                    const int num = iy + d.padding - ky;
                    if (num < 0 || num % d.stride != 0) continue;
                    const int oy = num / d.stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < d.kernel_w; ++kx) {
                        const int numx = ix + d.padding - kx;
                        if (numx < 0 || numx % d.stride != 0) continue;
                        const int ox = numx / d.stride;
                        if (ox >= ow) continue;
                        acc += gout_c[oy * ow + ox] * k_c[ky * d.kernel_w + kx];
                    }
                }
            }
            gin[iy * d.in_w + ix] += acc;
        }
    }
}

template <typename T>
inline void conv2d_backward_kernel_one(const T* in, const T* grad_out, T* grad_kernel,
                                       const Conv2dDims& d, int co) {
    const int oh = d.out_h();
    const int ow = d.out_w();
    for (int ci = 0; ci < d.in_channels; ++ci) {
        for (int ky = 0; ky < d.kernel_h; ++ky) {
            for (int kx = 0; kx < d.kernel_w; ++kx) {
                T acc = 0;
                for (int n = 0; n < d.batch; ++n) {
                    const T* in_c = in +
                        (static_cast<int64_t>(n) * d.in_channels + ci) * d.in_h * d.in_w;
                    const T* gout_c = grad_out +
                        (static_cast<int64_t>(n) * d.out_channels + co) * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * d.stride - d.padding + ky;
                        if (iy < 0 || iy >= d.in_h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * d.stride - d.padding + kx;
                            if (ix < 0 || ix >= d.in_w) continue;
                            acc += gout_c[oy * ow + ox] * in_c[iy * d.in_w + ix];
                        }
                    }
                }
                grad_kernel[((static_cast<int64_t>(co) * d.in_channels + ci) * d.kernel_h + ky) *
                                d.kernel_w + kx] += acc;
            }
        }
    }
}

template <typename T>
inline void matmul_rows(const T* a, const T* b, T* c, int m, int n, int k,
                        bool trans_a, bool trans_b, bool accumulate,
                        int row_begin, int row_end) {
    for (int i = row_begin; i < row_end; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                const T av = trans_a ? a[static_cast<int64_t>(p) * m + i]
                                     : a[static_cast<int64_t>(i) * k + p];
                const T bv = trans_b ? b[static_cast<int64_t>(j) * k + p]
                                     : b[static_cast<int64_t>(p) * n + j];
                acc += av * bv;
            }
            T* dst = c + static_cast<int64_t>(i) * n + j;
            if (accumulate) {
                *dst += acc;
            } else {
                *dst = acc;
            }
        }
    }
}

}  // namespace

template <typename T>
void conv2d_forward_serial(const T* in, const T* kernel, T* out, const Conv2dDims& d) {
    for (int n = 0; n < d.batch; ++n)
        for (int co = 0; co < d.out_channels; ++co)
            conv2d_accumulate_one(in, kernel, out, d, n, co);
}

template <typename T>
void conv2d_forward(const T* in, const T* kernel, T* out, const Conv2dDims& d) {
#ifdef _OPENMP
    const int64_t jobs = static_cast<int64_t>(d.batch) * d.out_channels;
#pragma omp parallel for schedule(static)
    for (int64_t job = 0; job < jobs; ++job) {
        conv2d_accumulate_one(in, kernel, out, d,
                              static_cast<int>(job / d.out_channels),
                              static_cast<int>(job % d.out_channels));
    }
#else
    conv2d_forward_serial(in, kernel, out, d);
#endif
}

template <typename T>
void conv2d_backward_input_serial(const T* grad_out, const T* kernel, T* grad_in,
                                  const Conv2dDims& d) {
    for (int n = 0; n < d.batch; ++n)
        for (int ci = 0; ci < d.in_channels; ++ci)
            conv2d_backward_input_one(grad_out, kernel, grad_in, d, n, ci);
}

template <typename T>
void conv2d_backward_input(const T* grad_out, const T* kernel, T* grad_in,
                           const Conv2dDims& d) {
#ifdef _OPENMP
    const int64_t jobs = static_cast<int64_t>(d.batch) * d.in_channels;
#pragma omp parallel for schedule(static)
    for (int64_t job = 0; job < jobs; ++job) {
        conv2d_backward_input_one(grad_out, kernel, grad_in, d,
                                  static_cast<int>(job / d.in_channels),
                                  static_cast<int>(job % d.in_channels));
    }
#else
    conv2d_backward_input_serial(grad_out, kernel, grad_in, d);
#endif
}

template <typename T>
void conv2d_backward_kernel_serial(const T* in, const T* grad_out, T* grad_kernel,
                                   const Conv2dDims& d) {
    for (int co = 0; co < d.out_channels; ++co)
        conv2d_backward_kernel_one(in, grad_out, grad_kernel, d, co);
}

template <typename T>
void conv2d_backward_kernel(const T* in, const T* grad_out, T* grad_kernel,
                            const Conv2dDims& d) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int co = 0; co < d.out_channels; ++co)
        conv2d_backward_kernel_one(in, grad_out, grad_kernel, d, co);
#else
    conv2d_backward_kernel_serial(in, grad_out, grad_kernel, d);
#endif
}

template <typename T>
void matmul_serial(const T* a, const T* b, T* c, int m, int n, int k,
                   bool trans_a, bool trans_b, bool accumulate) {
    matmul_rows(a, b, c, m, n, k, trans_a, trans_b, accumulate, 0, m);
}

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k,
            bool trans_a, bool trans_b, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        matmul_rows(a, b, c, m, n, k, trans_a, trans_b, accumulate, i, i + 1);
#else
    matmul_serial(a, b, c, m, n, k, trans_a, trans_b, accumulate);
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

#define CAMCAL_INSTANTIATE_KERNELS(T)                                                       \
    template void conv2d_forward<T>(const T*, const T*, T*, const Conv2dDims&);             \
    template void conv2d_forward_serial<T>(const T*, const T*, T*, const Conv2dDims&);      \
    template void conv2d_backward_input<T>(const T*, const T*, T*, const Conv2dDims&);      \
    template void conv2d_backward_input_serial<T>(const T*, const T*, T*, const Conv2dDims&); \
    template void conv2d_backward_kernel<T>(const T*, const T*, T*, const Conv2dDims&);     \
    template void conv2d_backward_kernel_serial<T>(const T*, const T*, T*, const Conv2dDims&); \
    template void matmul<T>(const T*, const T*, T*, int, int, int, bool, bool, bool);       \
    template void matmul_serial<T>(const T*, const T*, T*, int, int, int, bool, bool, bool);

CAMCAL_INSTANTIATE_KERNELS(float)
CAMCAL_INSTANTIATE_KERNELS(double)

#undef CAMCAL_INSTANTIATE_KERNELS

}  // namespace camcal::kernels
