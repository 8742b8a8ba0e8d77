/* Dense GEMM with a fixed reduction order.
 *
 * Every output element is accumulated as
 *     c = 0.0; for k = 0..K-1: c = c + a[i,k] * b[k,j]
 * with the product rounded before the add.  The result is therefore
 * bitwise identical to a scalar triple loop.  Build with -ffp-contract=off
 * so the compiler never fuses the multiply and add.
 */
#ifndef SMARTMIXED_GEMM_H
#define SMARTMIXED_GEMM_H

#include <stddef.h>
#include <stdlib.h>
#include <string.h>

#if defined(__AVX512F__)
#define SM_VLEN 8
#define SM_MR 8
#elif defined(__AVX__)
#define SM_VLEN 4
#define SM_MR 4
#else
#define SM_VLEN 2
#define SM_MR 4
#endif
#define SM_NR (2 * SM_VLEN)
#define SM_MC 128

typedef double sm_vec __attribute__((vector_size(SM_VLEN * sizeof(double))));

static inline sm_vec sm_load(const double *p)
{
    sm_vec v;
    memcpy(&v, p, sizeof(v));
    return v;
}

static inline void sm_store(double *p, sm_vec v)
{
    memcpy(p, &v, sizeof(v));
}

/* acc[r][c] over one MR x NR tile, full K. */
static void sm_micro(size_t K, const double *restrict ap, const double *restrict bp,
                     double *restrict c, ptrdiff_t ldc, size_t mr, size_t nr)
{
    sm_vec acc0[SM_MR], acc1[SM_MR];
    const sm_vec zero = {0};
#pragma GCC unroll 8
    for (size_t r = 0; r < SM_MR; ++r) {
        acc0[r] = zero;
        acc1[r] = zero;
    }
    for (size_t k = 0; k < K; ++k) {
        const sm_vec b0 = sm_load(bp);
        const sm_vec b1 = sm_load(bp + SM_VLEN);
#pragma GCC unroll 8
        for (size_t r = 0; r < SM_MR; ++r) {
            const double a = ap[r];
            acc0[r] = acc0[r] + b0 * a;
            acc1[r] = acc1[r] + b1 * a;
        }
        ap += SM_MR;
        bp += SM_NR;
    }
    if (mr == SM_MR && nr == SM_NR) {
        for (size_t r = 0; r < SM_MR; ++r) {
            sm_store(c + r * ldc, acc0[r]);
            sm_store(c + r * ldc + SM_VLEN, acc1[r]);
        }
        return;
    }
    double tile[SM_MR * SM_NR];
    for (size_t r = 0; r < SM_MR; ++r) {
        sm_store(tile + r * SM_NR, acc0[r]);
        sm_store(tile + r * SM_NR + SM_VLEN, acc1[r]);
    }
    for (size_t r = 0; r < mr; ++r)
        for (size_t j = 0; j < nr; ++j)
            c[r * ldc + j] = tile[r * SM_NR + j];
}

/* C[M,N] (row-major, ldc) = A[M,K] @ B[K,N]; A and B addressed by element
 * strides so transposed views need no copy.  Returns 0, or -1 on OOM. */
static int sm_gemm(size_t M, size_t N, size_t K,
                   const double *a, ptrdiff_t sa_i, ptrdiff_t sa_k,
                   const double *b, ptrdiff_t sb_k, ptrdiff_t sb_j,
                   double *c, ptrdiff_t ldc)
{
    if (M == 0 || N == 0)
        return 0;
    if (K == 0) {
        for (size_t i = 0; i < M; ++i)
            memset(c + i * ldc, 0, N * sizeof(double));
        return 0;
    }
    const size_t npanels = (N + SM_NR - 1) / SM_NR;
    const size_t mc = M < SM_MC ? M : SM_MC;
    const size_t mpanels_c = (mc + SM_MR - 1) / SM_MR;
    double *bpack = malloc(npanels * K * SM_NR * sizeof(double));
    double *apack = malloc(mpanels_c * K * SM_MR * sizeof(double));
    if (!bpack || !apack) {
        free(bpack);
        free(apack);
        return -1;
    }
    for (size_t p = 0; p < npanels; ++p) {
        const size_t j0 = p * SM_NR;
        const size_t nr = N - j0 < SM_NR ? N - j0 : SM_NR;
        double *dst = bpack + p * K * SM_NR;
        for (size_t k = 0; k < K; ++k) {
            const double *src = b + k * sb_k + j0 * sb_j;
            size_t j = 0;
            for (; j < nr; ++j)
                dst[k * SM_NR + j] = src[j * sb_j];
            for (; j < SM_NR; ++j)
                dst[k * SM_NR + j] = 0.0;
        }
    }
    for (size_t i0 = 0; i0 < M; i0 += SM_MC) {
        const size_t mb = M - i0 < SM_MC ? M - i0 : SM_MC;
        const size_t mpanels = (mb + SM_MR - 1) / SM_MR;
        for (size_t p = 0; p < mpanels; ++p) {
            const size_t r0 = i0 + p * SM_MR;
            const size_t mr = M - r0 < SM_MR ? M - r0 : SM_MR;
            double *dst = apack + p * K * SM_MR;
            for (size_t k = 0; k < K; ++k) {
                size_t r = 0;
                for (; r < mr; ++r)
                    dst[k * SM_MR + r] = a[(r0 + r) * sa_i + k * sa_k];
                for (; r < SM_MR; ++r)
                    dst[k * SM_MR + r] = 0.0;
            }
        }
        for (size_t q = 0; q < npanels; ++q) {
            const size_t j0 = q * SM_NR;
            const size_t nr = N - j0 < SM_NR ? N - j0 : SM_NR;
            for (size_t p = 0; p < mpanels; ++p) {
                const size_t r0 = i0 + p * SM_MR;
                const size_t mr = M - r0 < SM_MR ? M - r0 : SM_MR;
                sm_micro(K, apack + p * K * SM_MR, bpack + q * K * SM_NR,
                         c + r0 * ldc + j0, ldc, mr, nr);
            }
        }
    }
    free(bpack);
    free(apack);
    return 0;
}

#endif
