"""Independent reference implementations used only by the tests.

These are deliberately slow and direct: explicit sums, dense matrices and
grid searches, sharing no code with the package beyond array layout.
"""

import cmath
import math

import numpy as np


def brute_dft2(x):
    """Orthonormal 2-D DFT by the O(N^4) double sum."""
    x = np.asarray(x, dtype=np.complex128)
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for k in range(h):
        for l in range(w):
            acc = 0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * cmath.exp(-2j * math.pi * (k * m / h + l * n / w))
            out[k, l] = acc
    return out / math.sqrt(h * w)


def dft_matrix(n):
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / math.sqrt(n)


def dft2_matrix(h, w):
    """Dense matrix of the orthonormal 2-D DFT acting on row-major vectors."""
    return np.kron(dft_matrix(h), dft_matrix(w))


def diff_matrix(h, w):
    """Dense forward-difference operator, rows then columns, zero at the far edge."""
    n = h * w
    d = np.zeros((2 * n, n))
    for i in range(h):
        for j in range(w):
            p = i * w + j
            if i + 1 < h:
                d[p, p] = -1
                d[p, p + w] = 1
            if j + 1 < w:
                d[n + p, p] = -1
                d[n + p, p + 1] = 1
    return d


def kept_count(h, w, fraction):
    """Number of bins with max(|m_c|, |n_c|) <= (1 - fraction) * (N // 2), by enumeration."""
    count = 0
    for m in range(-(h // 2), h - h // 2):
        for n in range(-(w // 2), w - w // 2):
            if abs(m) <= (1 - fraction) * (h // 2) and abs(n) <= (1 - fraction) * (w // 2):
                count += 1
    return count


def prox_objective(a, y, vmag, rho):
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logterm = np.where(a > 0, np.log(np.maximum(a, 1e-300) ** 2), -np.inf)
    data = np.where(y > 0, 0.5 * (a**2 - y * logterm), 0.5 * a**2)
    return data + 0.5 * rho * (a - vmag) ** 2


def grid_min(y, vmag, rho, points=20001):
    """Minimum of the scalar prox objective over a dense grid of magnitudes."""
    hi = vmag + math.sqrt(y) + 1.0
    grid = np.linspace(0.0, hi, points)
    return float(np.min(prox_objective(grid, y, vmag, rho)))


def central_difference_grad(f, u, step=1e-5):
    """Gradient of real f w.r.t. real and imaginary parts, packed as Re + 1j Im."""
    u = np.asarray(u, dtype=np.complex128)
    out = np.zeros(u.shape, dtype=np.complex128)
    for idx in np.ndindex(u.shape):
        for unit, part in ((1.0, 1.0), (1j, 1j)):
            e = np.zeros(u.shape, dtype=np.complex128)
            e[idx] = unit * step
            out[idx] += part * (f(u + e) - f(u - e)) / (2 * step)
    return out


def ring_support(r1, r2):
    reach = int(math.ceil(r2)) + 1
    return {
        (m, n)
        for m in range(-reach, reach + 1)
        for n in range(-reach, reach + 1)
        if r1 < math.sqrt(m * m + n * n) <= r2 and (m, n) != (0, 0)
    }
