"""Exact checks of the pivot-as-latent-variable bound on small discrete chains.

A chain is ``x -> h -> y`` with a noise channel ``h -> h_bar``; the denoiser's
belief over the pivot is ``q(h) = P(h | h_bar)``. For a pair (x, y)::

    log P(y|x) >= E_q[log P(y|h)] - KL(q || P(h|x))        (the bound)
    log P(y|x) -  bound  = KL(q || P(h|x,y))                (exact gap)

and the gap is commonly approximated by ``KL(q || P(h|y))``. The Markov
structure makes ``P(y|h,x) = P(y|h)`` hold exactly; when ``P(y|h)`` is a
permutation matrix, ``P(h|x,y) = P(h|y)`` as well.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

MAX_SUPPORT = 32
ROW_TOL = 1e-12


class ZeroProbabilityError(ValueError):
    """The requested pair has P(y|x) = 0, or q puts mass where P(h|x) has none."""


def _check_stochastic(m, name):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError(f"{name} has negative entries")
    sums = m.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_TOL):
        raise ValueError(f"{name} rows must sum to 1 (max error {np.abs(sums - 1).max():.2e})")
    if any(s > MAX_SUPPORT for s in m.shape):
        raise ValueError(f"{name} exceeds support cap {MAX_SUPPORT}")
    return m


@dataclass(frozen=True)
class DiscreteChain:
    px: np.ndarray
    ph_given_x: np.ndarray   # (|X|, |H|)
    py_given_h: np.ndarray   # (|H|, |Y|)
    noise_channel: np.ndarray  # (|H|, |H_bar|)

    def __post_init__(self):
        object.__setattr__(self, "px", _check_stochastic(self.px, "px"))
        object.__setattr__(self, "ph_given_x", _check_stochastic(self.ph_given_x, "ph_given_x"))
        object.__setattr__(self, "py_given_h", _check_stochastic(self.py_given_h, "py_given_h"))
        object.__setattr__(self, "noise_channel", _check_stochastic(self.noise_channel, "noise_channel"))
        nx, nh = self.ph_given_x.shape
        if self.px.shape != (nx,) or self.py_given_h.shape[0] != nh or self.noise_channel.shape[0] != nh:
            raise ValueError("inconsistent chain dimensions")

    @property
    def ph(self):
        return self.px @ self.ph_given_x

    def joint(self):
        """P(x, h, y) as a dense (|X|, |H|, |Y|) array."""
        return self.px[:, None, None] * self.ph_given_x[:, :, None] * self.py_given_h[None, :, :]


def _normalize(v, what):
    z = v.sum()
    if z <= 0:
        raise ZeroProbabilityError(what)
    return v / z


def denoiser_posterior(chain: DiscreteChain, h_bar: int) -> np.ndarray:
    """P(h | h_bar) proportional to P(h) P(h_bar | h)."""
    return _normalize(chain.ph * chain.noise_channel[:, h_bar], f"P(h_bar={h_bar}) = 0")


def kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; +inf when p has mass outside q's support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    s = p > 0
    if np.any(q[s] <= 0):
        return float("inf")
    return float(np.sum(p[s] * (np.log(p[s]) - np.log(q[s]))))


def posterior(chain: DiscreteChain, x: int, y: int) -> np.ndarray:
    """P(h | x, y) proportional to P(h|x) P(y|h)."""
    return _normalize(chain.ph_given_x[x] * chain.py_given_h[:, y], f"P(y={y}|x={x}) = 0")


def pivot_given_target(chain: DiscreteChain, y: int) -> np.ndarray:
    """P(h | y) proportional to P(h) P(y|h)."""
    return _normalize(chain.ph * chain.py_given_h[:, y], f"P(y={y}) = 0")


def true_loglik(chain: DiscreteChain, x: int, y: int) -> float:
    """log P(y|x) = log sum_h P(h|x) P(y|h); -inf for impossible pairs."""
    p = float(chain.ph_given_x[x] @ chain.py_given_h[:, y])
    return float(np.log(p)) if p > 0 else float("-inf")


def elbo(chain: DiscreteChain, q, x: int, y: int) -> float:
    """E_q[log P(y|h)] - KL(q || P(h|x)); -inf if q leaves the support it needs."""
    q = np.asarray(q, dtype=np.float64)
    if abs(q.sum() - 1.0) > 1e-9 or np.any(q < 0):
        raise ValueError("q is not a distribution")
    s = q > 0
    pyh = chain.py_given_h[s, y]
    phx = chain.ph_given_x[x, s]
    if np.any(pyh <= 0) or np.any(phx <= 0):
        return float("-inf")
    qs = q[s]
    return float(np.sum(qs * np.log(pyh)) - np.sum(qs * (np.log(qs) - np.log(phx))))


@dataclass(frozen=True)
class GapReport:
    true_loglik: float
    elbo: float
    gap: float           # true_loglik - elbo
    kl_posterior: float  # KL(q || P(h|x,y)), the exact gap
    kl_approx: float     # KL(q || P(h|y))

    @property
    def approx_error(self):
        return abs(self.gap - self.kl_approx)


def gap(chain: DiscreteChain, q, x: int, y: int) -> GapReport:
    ll = true_loglik(chain, x, y)
    if not np.isfinite(ll):
        raise ZeroProbabilityError(f"P(y={y}|x={x}) = 0")
    b = elbo(chain, q, x, y)
    return GapReport(ll, b, ll - b, kl(q, posterior(chain, x, y)), kl(q, pivot_given_target(chain, y)))


# -- random instances -------------------------------------------------------------

def random_stochastic(rng, rows, cols, concentration=1.0, sparsity=0.0):
    m = rng.dirichlet(np.full(cols, concentration), size=rows)
    if sparsity > 0:
        keep = rng.random((rows, cols)) >= sparsity
        keep[np.arange(rows), rng.integers(cols, size=rows)] = True
        m = m * keep
        m /= m.sum(axis=1, keepdims=True)
    return m


def random_chain(rng, nx=4, nh=4, ny=4, nhb=None, permutation_y=False, sparsity=0.0):
    """Random chain; ``permutation_y`` makes P(y|h) a permutation (|Y| = |H|)."""
    nhb = nhb or nh
    if permutation_y:
        py = np.eye(nh)[rng.permutation(nh)]
    else:
        py = random_stochastic(rng, nh, ny, sparsity=sparsity)
    return DiscreteChain(
        rng.dirichlet(np.ones(nx)),
        random_stochastic(rng, nx, nh, sparsity=sparsity),
        py,
        random_stochastic(rng, nh, nhb),
    )


def _possible_pair(rng, chain):
    pyx = chain.ph_given_x @ chain.py_given_h
    xs, ys = np.nonzero(pyx > 0)
    k = rng.integers(len(xs))
    return int(xs[k]), int(ys[k])


def _support_ok_q(rng, chain, x, y):
    """A denoiser posterior restricted to supp P(h|x,y) so the bound is finite."""
    support = (chain.ph_given_x[x] > 0) & (chain.py_given_h[:, y] > 0)
    hb = int(rng.integers(chain.noise_channel.shape[1]))
    q = chain.ph * chain.noise_channel[:, hb] * support
    if q.sum() <= 0:
        q = support.astype(np.float64)
    return q / q.sum()


@dataclass(frozen=True)
class VerifyRow:
    trial: int
    x: int
    y: int
    true_loglik: float
    elbo: float
    gap: float
    kl_posterior: float
    kl_approx: float
    elbo_at_posterior: float


def verify(trials=1000, seed=0, deterministic_y=False, max_size=6):
    """Random trials of the bound identities; returns (rows, summary dict)."""
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        nx, nh, ny = (int(v) for v in rng.integers(1, max_size + 1, size=3))
        chain = random_chain(rng, nx, nh, nh if deterministic_y else ny,
                             permutation_y=deterministic_y, sparsity=0.2 if t % 4 == 3 else 0.0)
        x, y = _possible_pair(rng, chain)
        q = _support_ok_q(rng, chain, x, y)
        rep = gap(chain, q, x, y)
        post = posterior(chain, x, y)
        rows.append(VerifyRow(t, x, y, rep.true_loglik, rep.elbo, rep.gap, rep.kl_posterior,
                              rep.kl_approx, elbo(chain, post, x, y)))
    return rows, summarize(rows, deterministic_y)


def summarize(rows, deterministic_y=False):
    slack = min(r.true_loglik - r.elbo for r in rows)
    gap_err = max(abs(r.gap - r.kl_posterior) for r in rows)
    tight_err = max(abs(r.true_loglik - r.elbo_at_posterior) for r in rows)
    approx_err = max(abs(r.gap - r.kl_approx) for r in rows)
    checks = {
        "bound_holds": slack >= -1e-12,
        "gap_equals_kl_posterior": gap_err <= 1e-12,
        "tight_at_posterior": tight_err <= 1e-12,
    }
    if deterministic_y:
        checks["approx_exact_for_permutation"] = approx_err < 1e-9
    return {
        "trials": len(rows),
        "min_slack": slack,
        "max_gap_error": gap_err,
        "max_tightness_error": tight_err,
        "max_approx_error": approx_err,
        "checks": checks,
        "passed": all(checks.values()),
    }


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "x", "y", "true_loglik", "elbo", "delta", "kl_posterior", "kl_approx"])
    for r in rows:
        w.writerow([r.trial, r.x, r.y, repr(r.true_loglik), repr(r.elbo), repr(r.gap),
                    repr(r.kl_posterior), repr(r.kl_approx)])
    return buf.getvalue()
