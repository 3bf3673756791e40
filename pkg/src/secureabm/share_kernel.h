/* Batched additive-sharing kernel.
 *
 * Shares of participant q in a session with key K:
 *   share to recipient r < n-1, component c: uniform_mod(sender_key(K, q), r*m + c)
 *   share to recipient n-1: value - sum of the others (mod p)
 * Accumulation uses separate 32-bit halves so the inner loop carries no
 * modular branches and vectorizes.
 */
#ifndef SECUREABM_SHARE_KERNEL_H
#define SECUREABM_SHARE_KERNEL_H

#include <stdint.h>
#include <stdlib.h>

#define SK_GOLDEN 0x9E3779B97F4A7C15ULL
#define SK_GOLDEN2 0xD1B54A32D192ED03ULL
#define SK_ATTEMPT_SHIFT 48
#define SK_M32 0xFFFFFFFFULL

static inline uint64_t sk_mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

static inline uint64_t sk_word(uint64_t key, uint64_t ctr) {
    return sk_mix64(key + (ctr + 1) * SK_GOLDEN);
}

static inline uint64_t sk_redraw(uint64_t key, uint64_t ctr, uint64_t p, int shift) {
    uint64_t attempt = 0, v = p;
    while (v >= p) {
        attempt++;
        v = sk_word(key, ctr | (attempt << SK_ATTEMPT_SHIFT)) >> shift;
    }
    return v;
}

static inline uint64_t sk_combine(uint64_t hi, uint64_t lo, uint64_t p) {
    unsigned __int128 t = ((unsigned __int128)(hi % p) << 32) + (lo % p);
    return (uint64_t)(t % p);
}

static inline uint64_t sk_sub(uint64_t a, uint64_t b, uint64_t p) {
    return a >= b ? a - b : a + (p - b);
}

/* Uniform draws of one sender's non-residual shares. */
static inline void sk_draws(uint64_t key, int64_t len, uint64_t p, int shift,
                            uint64_t *restrict draws) {
    uint64_t bad = 0;
    for (int64_t j = 0; j < len; j++) {
        uint64_t w = sk_word(key, (uint64_t)j) >> shift;
        draws[j] = w;
        bad |= (uint64_t)(w >= p);
    }
    if (bad) {
        for (int64_t j = 0; j < len; j++)
            if (draws[j] >= p) draws[j] = sk_redraw(key, (uint64_t)j, p, shift);
    }
}

/* Residual share of one sender, per component. */
static inline void sk_residuals(const uint64_t *restrict draws, int64_t n, int64_t m,
                                const uint64_t *restrict value, uint64_t p,
                                uint64_t *restrict out) {
    for (int64_t c = 0; c < m; c++) {
        uint64_t lo = 0, hi = 0;
        for (int64_t r = 0; r < n - 1; r++) {
            uint64_t d = draws[r * m + c];
            lo += d & SK_M32;
            hi += d >> 32;
        }
        out[c] = sk_sub(value[c], sk_combine(hi, lo, p), p);
    }
}

/* partials: (total, m) output; returns -1 on allocation failure. */
static int sk_session_partials(const uint64_t *keys, const int64_t *offsets, int64_t n_sessions,
                               const uint64_t *values, int64_t m, uint64_t p, int shift,
                               uint64_t *partials) {
    int64_t max_n = 0;
    for (int64_t s = 0; s < n_sessions; s++)
        if (offsets[s + 1] - offsets[s] > max_n) max_n = offsets[s + 1] - offsets[s];
    if (max_n == 0) return 0;
    size_t cells = (size_t)(max_n * m);
    uint64_t *draws = malloc(cells * sizeof(uint64_t));
    uint64_t *acc_lo = malloc(cells * sizeof(uint64_t));
    uint64_t *acc_hi = malloc(cells * sizeof(uint64_t));
    uint64_t *resid = malloc((size_t)m * sizeof(uint64_t));
    if (!draws || !acc_lo || !acc_hi || !resid) {
        free(draws); free(acc_lo); free(acc_hi); free(resid);
        return -1;
    }
    for (int64_t s = 0; s < n_sessions; s++) {
        int64_t base = offsets[s], n = offsets[s + 1] - base;
        int64_t len = (n - 1) * m;
        for (int64_t j = 0; j < n * m; j++) { acc_lo[j] = 0; acc_hi[j] = 0; }
        for (int64_t q = 0; q < n; q++) {
            uint64_t key = sk_mix64(keys[s] ^ ((uint64_t)(q + 1) * SK_GOLDEN2));
            sk_draws(key, len, p, shift, draws);
            for (int64_t j = 0; j < len; j++) {
                acc_lo[j] += draws[j] & SK_M32;
                acc_hi[j] += draws[j] >> 32;
            }
            sk_residuals(draws, n, m, values + (base + q) * m, p, resid);
            for (int64_t c = 0; c < m; c++) {
                acc_lo[len + c] += resid[c] & SK_M32;
                acc_hi[len + c] += resid[c] >> 32;
            }
        }
        for (int64_t j = 0; j < n * m; j++)
            partials[base * m + j] = sk_combine(acc_hi[j], acc_lo[j], p);
    }
    free(draws); free(acc_lo); free(acc_hi); free(resid);
    return 0;
}

/* shares: (sum n_s^2, m) output ordered by (session, sender, recipient). */
static int sk_session_shares(const uint64_t *keys, const int64_t *offsets, int64_t n_sessions,
                             const uint64_t *values, int64_t m, uint64_t p, int shift,
                             uint64_t *shares) {
    int64_t row = 0;
    for (int64_t s = 0; s < n_sessions; s++) {
        int64_t base = offsets[s], n = offsets[s + 1] - base;
        int64_t len = (n - 1) * m;
        for (int64_t q = 0; q < n; q++) {
            uint64_t key = sk_mix64(keys[s] ^ ((uint64_t)(q + 1) * SK_GOLDEN2));
            uint64_t *dst = shares + row * m;
            sk_draws(key, len, p, shift, dst);
            sk_residuals(dst, n, m, values + (base + q) * m, p, dst + len);
            row += n;
        }
    }
    return 0;
}

#endif
