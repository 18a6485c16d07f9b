import numpy as np

# probabilities are clamped at this value inside every log term
PROB_CLAMP = 1e-8


def clamped_log(probs):
    return np.log(np.maximum(probs, PROB_CLAMP))


def symkl(p, q):
    """Symmetric KL ½KL(p‖q) + ½KL(q‖p) along the last axis, with clamped logs.

    Both arguments are (..., A) arrays of distributions sharing a support,
    entries that are zero in both contribute nothing."""

    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * np.sum((p - q) * (clamped_log(p) - clamped_log(q)), axis=-1)


def symkl_grad(p, q):
    """Gradient of `symkl(p, q)` with respect to `q` (elementwise, same shape).

    The clamp is treated as a constant, its derivative is zero below PROB_CLAMP."""

    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    active = q > PROB_CLAMP
    ratio = np.divide(p - q, q, out=np.zeros_like(q), where=active)
    return 0.5 * ((clamped_log(q) - clamped_log(p)) - ratio)


def cross_entropy(probs, actions):
    """Per-row −ln p[a] with the probability clamped at PROB_CLAMP"""

    probs = np.asarray(probs, dtype=float)
    taken = probs[np.arange(len(actions)), actions]
    return -clamped_log(taken)
