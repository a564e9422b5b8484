"""Independent reference computations used by the tests.

Nothing here imports the package's numeric kernels.
"""
import math

import numpy as np

MASK64 = (1 << 64) - 1


def naive_matmul(a, b):
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += a[i][k] * b[k][j]
            out[i][j] = s
    return np.array(out)


def naive_softmax_row(row, scale=1.0):
    m = max(scale * x for x in row)
    e = [math.exp(scale * x - m) for x in row]
    total = sum(e)
    return [x / total for x in e]


def naive_attention(q, k, v):
    """softmax(Q K^T / sqrt(d)) V with plain Python loops."""
    q, k, v = (np.asarray(x).tolist() for x in (q, k, v))
    d = len(q[0])
    out = []
    for qi in q:
        scores = [sum(a * b for a, b in zip(qi, kj)) for kj in k]
        w = naive_softmax_row(scores, 1.0 / math.sqrt(d))
        out.append([sum(w[j] * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return np.array(out)


def splitmix64(seed, n):
    s, out = seed & MASK64, []
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) & MASK64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def box_muller_stream(seed, n):
    raw = splitmix64(seed, 2 * n)
    out = []
    for i in range(n):
        u1 = ((raw[2 * i] >> 11) + 1) / 2.0**53
        u2 = ((raw[2 * i + 1] >> 11) + 1) / 2.0**53
        out.append(math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2))
    return out


def least_squares_parallel(tokens, v):
    """Projection of v onto span(tokens) via the normal equations T^T T x = T^T v."""
    t = np.asarray(tokens, dtype=np.float64).T  # h_c x N
    gram = t.T @ t
    x = np.linalg.solve(gram, t.T @ v)
    return t @ x


def naive_mse(a, b):
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    total, count = 0.0, 0
    for ra, rb in zip(a, b):
        for x, y in zip(ra, rb):
            total += (x - y) ** 2
            count += 1
    return total / count
