"""Optimistic / pessimistic dynamics inside the model's confidence tube.

``f~(s, u, ubar) = mu + beta * eta(s, u, ubar) * sigma`` with eta in
[-1, 1]^p.  The tube containment ``|f~ - mu| <= beta * sigma`` is enforced
in floating point, not just in exact arithmetic: after the clamp, any
coordinate whose rounded offset still exceeds the rounded bound is moved
one ulp at a time towards the centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policies import PolicyParams

ROLES = ("optimistic", "pessimistic")


def _pull_inside(x, centre, offset, bound, max_iter=64):
    """Nudge ``x`` towards ``centre + offset`` until ``|(x - offset) - centre| <= bound``."""
    target = centre + offset
    for _ in range(max_iter):
        bad = np.abs((x - offset) - centre) > bound
        if not bad.any():
            break
        x = np.where(bad, np.nextafter(x, target), x)
    return x


def tube_prediction(mean, std, beta, eta):
    """Noise-free hallucinated prediction, exactly inside the tube."""
    bound = beta * std
    p = mean + np.clip(beta * np.clip(eta, -1.0, 1.0) * std, -bound, bound)
    return _pull_inside(p, mean, 0.0, bound)


def tube_sample(mean, std, beta, eta, noise):
    """``(next_state, noise_free)``: prediction plus aleatoric noise such that
    ``|next_state - noise - mean| <= beta * std`` holds as computed."""
    p = tube_prediction(mean, std, beta, eta)
    if not np.any(noise):
        return p, p
    return _pull_inside(p + noise, mean, noise, beta * std), p


@dataclass(frozen=True)
class HallucinatedDynamics:
    """Immutable view ``mu + beta * eta * sigma`` over a fitted model.

    ``eta=None`` is the tube centre (eta identically zero).  ``role`` only
    records which direction trained eta; the formula is the same.
    """

    model: object
    beta: float
    eta: PolicyParams | None = None
    role: str = "optimistic"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.beta < 0 or math.isnan(self.beta):
            raise ValueError("beta must be >= 0")

    def eta_values(self, S, U, Ubar):
        if self.eta is None:
            return np.zeros((S.shape[0], self.model.state_dim))
        return self.eta.family.act(self.eta.theta, np.hstack([S, U, Ubar]))

    def predict(self, S, U, Ubar, W=None):
        """Batched ``(next_state, noise_free)`` with noise rows ``W``."""
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        Ubar = np.atleast_2d(np.asarray(Ubar, dtype=np.float64))
        mean, std = self.model.predict(S, U, Ubar)
        W = np.zeros_like(mean) if W is None else np.atleast_2d(W)
        if W.shape != mean.shape:
            raise ValueError("noise must have the state dimension")
        return tube_sample(mean, std, self.beta, self.eta_values(S, U, Ubar), W)


def hallucinated_step(h: HallucinatedDynamics, s, u, ubar, noise):
    """Single hallucinated transition; returns the (unwrapped) next state."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (h.model.state_dim,):
        raise ValueError("state dimension does not match the model")
    nxt, _ = h.predict(s[None, :], np.atleast_1d(u)[None, :], np.atleast_1d(ubar)[None, :],
                       np.asarray(noise, dtype=np.float64)[None, :])
    return nxt[0]


def plausible_membership(model, beta, candidate_fn, S, U, Ubar) -> bool:
    """True iff ``|candidate(z) - mu(z)| <= beta * sigma(z)`` at every tested input."""
    S, U, Ubar = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (S, U, Ubar))
    mean, std = model.predict(S, U, Ubar)
    cand = np.asarray(candidate_fn(S, U, Ubar), dtype=np.float64)
    return bool(np.all(np.abs(cand - mean) <= beta * std))


@dataclass(frozen=True)
class TheoryParams:
    """Lipschitz constants of the dynamics, the model std and both policies."""

    L_f: float | None = None
    L_sigma: float | None = None
    L_pi: float | None = None
    L_pibar: float | None = None

    def require(self):
        missing = [k for k, v in vars(self).items() if v is None]
        if missing:
            raise ValueError(f"missing Lipschitz constants: {', '.join(missing)}")
        return self


def deviation_bounds(theory: TheoryParams, beta: float, sigma_norms, factor: float = 2.0):
    """Per-step bound ``factor*beta*(1 + (L_f + 2 beta L_sigma) sqrt(1 + L_pi^2 + L_pibar^2))^(h-1)
    * sum_{h'<h} ||sigma_{h'}||`` for h = 1..H.

    ``sigma_norms[h']`` is the 2-norm of the model std at step h' of the true
    trajectory.  ``factor`` exists only for the negative control.
    """
    th = theory.require()
    growth = 1.0 + (th.L_f + 2.0 * beta * th.L_sigma) * math.sqrt(1.0 + th.L_pi ** 2 + th.L_pibar ** 2)
    sig = np.asarray(sigma_norms, dtype=np.float64)
    h = np.arange(1, sig.size + 1)
    return factor * beta * growth ** (h - 1) * np.cumsum(sig)


def trajectory_deviation_check(true_states, plausible_states, theory: TheoryParams, beta: float,
                               sigma_norms, factor: float = 2.0) -> bool:
    """True iff ``||s_h - s~_h||_2`` is within :func:`deviation_bounds` for every h >= 1.

    Both state arrays have H + 1 rows starting from the shared initial state.
    """
    s = np.asarray(true_states, dtype=np.float64)
    st = np.asarray(plausible_states, dtype=np.float64)
    if s.shape != st.shape:
        raise ValueError("trajectories have different shapes")
    dev = np.linalg.norm(s[1:] - st[1:], axis=1)
    return bool(np.all(dev <= deviation_bounds(theory, beta, sigma_norms[: len(dev)], factor)))


def se_std_lipschitz(model) -> float:
    """Lipschitz constant (2-norm, raw joint input) of the model's std vector.

    For a squared-exponential kernel the posterior std is the norm of a
    contracted feature map, so ``|sigma(z) - sigma(z')| <= sqrt(sv) * ||(z - z') / l||``;
    the embedding scale and output scale then enter multiplicatively.
    """
    k = model.kernel
    if k.family != "se":
        raise ValueError("analytic std Lipschitz constant only for the SE kernel")
    tr = model.transform
    if tr.angle_dims:
        raise ValueError("analytic std Lipschitz constant only without angle embeddings")
    ls = np.broadcast_to(np.asarray(k.lengthscales), (tr.out_dim,))
    per_dim = 1.0 / (ls * np.asarray(tr.scale))
    return float(model.temperature * np.linalg.norm(model.out_scale)
                 * math.sqrt(k.signal_variance) * per_dim.max())
