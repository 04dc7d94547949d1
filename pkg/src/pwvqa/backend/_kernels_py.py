"""Pure-NumPy kernel implementations.

Fallback backend used when the compiled extension is unavailable (or when
forced via PWVQA_BACKEND=py). Function signatures mirror `_kernels.pyx`;
all kernels are elementwise over float64 arrays of a common shape and
return freshly allocated arrays.
"""

import numpy as np

NAME = "py"


def sigmoid(x):
    """Logistic sigmoid, two-branch form so exp never overflows."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x):
    """ln(sigmoid(x)), stable for large |x| (strictly negative for finite x)."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def _ea_core(zq, zv, zk, alpha):
    """Shared pieces of the explain-away sum.

    With s* the three sigmoids and b = alpha + 1, the three-term power sum
    factors as Z = P^alpha * S2 where P = sq*sv*sk and S2 is the sum of
    pairwise products. P and S2 are evaluated over the elementwise-sorted
    sigmoids, which makes Z bitwise invariant under argument permutation.
    """
    sq, sv, sk = sigmoid(zq), sigmoid(zv), sigmoid(zk)
    lo, mid, hi = np.sort(np.stack([sq, sv, sk]), axis=0)
    prod = lo * mid * hi
    pair_sum = (lo * mid + lo * hi) + mid * hi
    return sq, sv, sk, prod**alpha, pair_sum


def ea_forward(zq, zv, zk, alpha, eps):
    """Explain-away fusion: log of the three-way sigmoid-power sum, scaled by 1/(alpha+1)."""
    _, _, _, p_alpha, pair_sum = _ea_core(zq, zv, zk, alpha)
    with np.errstate(divide="ignore"):  # eps=0 at deep saturation -> -inf, by design
        return np.log(p_alpha * pair_sum + eps) / (alpha + 1.0)


def ea_backward(zq, zv, zk, alpha, eps):
    """Partials of ea_forward w.r.t. each branch logit."""
    sq, sv, sk, p_alpha, pair_sum = _ea_core(zq, zv, zk, alpha)
    denom = (alpha + 1.0) * (p_alpha * pair_sum + eps)
    dq = (1.0 - sq) * p_alpha * (alpha * pair_sum + sq * (sv + sk)) / denom
    dv = (1.0 - sv) * p_alpha * (alpha * pair_sum + sv * (sq + sk)) / denom
    dk = (1.0 - sk) * p_alpha * (alpha * pair_sum + sk * (sq + sv)) / denom
    return dq, dv, dk


def sum_forward(zq, zv, zk):
    """ln(sigmoid(zq + zv + zk))."""
    return log_sigmoid(np.asarray(zq, dtype=np.float64) + zv + zk)


def sum_backward(zq, zv, zk):
    """All three partials equal sigmoid(-(zq + zv + zk))."""
    d = sigmoid(-(np.asarray(zq, dtype=np.float64) + zv + zk))
    return d, d.copy(), d.copy()


def hm_forward(zq, zv, zk):
    """ln(sigmoid(zq) * sigmoid(zv) * sigmoid(zk)), computed as a sum of log-sigmoids."""
    return log_sigmoid(zq) + log_sigmoid(zv) + log_sigmoid(zk)


def hm_backward(zq, zv, zk):
    return (
        sigmoid(-np.asarray(zq, dtype=np.float64)),
        sigmoid(-np.asarray(zv, dtype=np.float64)),
        sigmoid(-np.asarray(zk, dtype=np.float64)),
    )


def rubi_forward(zk, zq):
    """Question-mask baseline: zk * sigmoid(zq)."""
    return np.asarray(zk, dtype=np.float64) * sigmoid(zq)


def rubi_backward(zk, zq):
    """Partials (dq, dv, dk) of rubi_forward; the vision branch does not enter."""
    zk = np.asarray(zk, dtype=np.float64)
    s = sigmoid(zq)
    return zk * s * (1.0 - s), np.zeros_like(zk), s
