"""Calibrated GP dynamics model.

:class:`GpRegressor` is a plain multi-output GP with one shared kernel and
regulariser ``lam`` (so all outputs share the posterior variance); it grows
its Cholesky factor of ``K + lam I`` by block extension.
:class:`GpDynamicsModel` wraps it with the state/action embedding, the
delta-target convention, the confidence-width schedule, information-gain
bookkeeping and temperature recalibration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from . import _kernels
from .policies import InputTransform
from .types import NumericalError

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
TEMPERATURE_BOUNDS = (0.01, 100.0)


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential or linear kernel on (already embedded) inputs."""

    family: str = "se"
    lengthscales: tuple = (1.0,)
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.family not in ("se", "linear"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        ls = tuple(float(x) for x in np.atleast_1d(self.lengthscales))
        if any(x <= 0 for x in ls):
            raise ValueError("lengthscales must be positive")
        if not 0 < self.signal_variance <= 1.0:
            raise ValueError("signal variance must lie in (0, 1]")
        object.__setattr__(self, "lengthscales", ls)

    def _inv_ls(self, d):
        ls = np.asarray(self.lengthscales)
        if ls.size not in (1, d):
            raise ValueError(f"kernel has {ls.size} lengthscales for {d} inputs")
        return np.broadcast_to(1.0 / ls, (d,)).copy()

    def __call__(self, X, Z):
        X = np.ascontiguousarray(X, dtype=np.float64)
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        inv = self._inv_ls(X.shape[1])
        if self.family == "se":
            return _kernels.se_kernel(X, Z, inv, float(self.signal_variance))
        return self.signal_variance * (X * inv) @ (Z * inv).T

    def diag(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.family == "se":
            return np.full(X.shape[0], float(self.signal_variance))
        inv = self._inv_ls(X.shape[1])
        return self.signal_variance * np.sum((X * inv) ** 2, axis=1)

    def to_json(self):
        return {"family": self.family, "lengthscales": list(self.lengthscales),
                "signal_variance": self.signal_variance}


def _cholesky(A, what="kernel matrix"):
    """Cholesky with escalating diagonal jitter; returns (L, jitter)."""
    for j in JITTERS:
        try:
            M = A if j == 0.0 else A + j * np.eye(A.shape[0])
            return np.linalg.cholesky(M), j
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"{what} not positive definite after jitter up to {JITTERS[-1]:g}")


class GpRegressor:
    """Exact GP posterior ``mu = k (K + lam I)^-1 y``, ``var = k(z,z) - k (K + lam I)^-1 k``."""

    def __init__(self, kernel: Kernel, input_dim: int, output_dim: int, lam: float):
        if lam <= 0:
            raise ValueError("regulariser lam must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.X = np.zeros((0, input_dim))
        self.Y = np.zeros((0, output_dim))
        self.L = np.zeros((0, 0))
        self._derive()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _derive(self):
        n = self.n
        self.Linv = solve_triangular(self.L, np.eye(n), lower=True) if n else np.zeros((0, 0))
        self.alpha = self.Linv.T @ (self.Linv @ self.Y) if n else np.zeros((0, self.Y.shape[1]))

    def _extend(self, X2, Y2):
        """Append rows; returns the sequential variances sigma^2_{k-1}(z_k)."""
        K22 = self.kernel(X2, X2) + self.lam * np.eye(X2.shape[0])
        if self.n:
            B = solve_triangular(self.L, self.kernel(self.X, X2), lower=True)
            S = K22 - B.T @ B
        else:
            B = np.zeros((0, X2.shape[0]))
            S = K22
        L22, jit = _cholesky(S, "Schur complement")
        n, k = self.n, X2.shape[0]
        L = np.zeros((n + k, n + k))
        L[:n, :n] = self.L
        L[n:, :n] = B.T
        L[n:, n:] = L22
        self.L = L
        self.X = np.vstack([self.X, X2])
        self.Y = np.vstack([self.Y, Y2])
        return np.maximum(np.diag(L22) ** 2 - self.lam - jit, 0.0)

    def add(self, X, Y, admit_variance: float = 0.0, max_points: int | None = None):
        """Add observations by block-extending the Cholesky factor.

        With ``admit_variance > 0`` (or a ``max_points`` cap) points are
        offered one at a time and kept only if their current posterior
        variance exceeds the threshold.  Returns the sequential variances of
        the admitted points and a boolean admission mask.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[0] == 0:
            return np.zeros(0), np.zeros(0, dtype=bool)
        if X.shape[1] != self.X.shape[1] or Y.shape[1] != self.Y.shape[1] or len(X) != len(Y):
            raise ValueError("observation dimensions do not match the regressor")
        if admit_variance <= 0.0 and max_points is None:
            seq = self._extend(X, Y)
            self._derive()
            return seq, np.ones(len(X), dtype=bool)
        seq, mask = [], np.zeros(len(X), dtype=bool)
        for i in range(len(X)):
            if max_points is not None and self.n >= max_points:
                break
            var = self.kernel.diag(X[i:i + 1])[0]
            if self.n:
                b = solve_triangular(self.L, self.kernel(self.X, X[i:i + 1]), lower=True)
                var = var - float(b[:, 0] @ b[:, 0])
            if var > admit_variance:
                seq.append(self._extend(X[i:i + 1], Y[i:i + 1])[0])
                mask[i] = True
        self._derive()
        return np.array(seq), mask

    def refactor(self):
        """Recompute the factor from scratch (full factorisation)."""
        if self.n:
            self.L, _ = _cholesky(self.kernel(self.X, self.X) + self.lam * np.eye(self.n))
        self._derive()

    def truncated(self, n: int) -> "GpRegressor":
        """Regressor on the first ``n`` points; reuses the leading factor block,
        so it equals the regressor as it was when it held ``n`` points."""
        g = GpRegressor(self.kernel, self.X.shape[1], self.Y.shape[1], self.lam)
        g.X, g.Y = self.X[:n].copy(), self.Y[:n].copy()
        g.L = self.L[:n, :n].copy()
        g._derive()
        return g

    def predict(self, Xq):
        """Posterior mean (m, p) and shared posterior variance (m,)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        prior = self.kernel.diag(Xq)
        if self.n == 0:
            return np.zeros((Xq.shape[0], self.Y.shape[1])), prior
        Kq = self.kernel(Xq, self.X)
        V = Kq @ self.Linv.T
        return Kq @ self.alpha, np.maximum(prior - np.einsum("ij,ij->i", V, V), 0.0)


def info_gain_closed_form(kernel: Kernel, X, lam: float) -> float:
    """0.5 * log det(I + K / lam) for one output copy."""
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        return 0.0
    _, logdet = np.linalg.slogdet(np.eye(len(X)) + kernel(X, X) / lam)
    return 0.5 * logdet


def mig_greedy(kernel: Kernel, candidates, n: int, lam: float) -> float:
    """Greedy lower bound on the maximum information gain of ``n`` picks.

    Each step adds the not yet chosen candidate with the largest posterior
    variance, which is the largest marginal gain ``0.5 * log(1 + var / lam)``.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if C.shape[0] == 0:
        raise ValueError("empty candidate set")
    if not 0 <= n <= len(C):
        raise ValueError("budget must lie in [0, number of candidates]")
    g = GpRegressor(kernel, C.shape[1], 1, lam)
    total = 0.0
    taken = np.zeros(len(C), dtype=bool)
    for _ in range(n):
        _, var = g.predict(C)
        var[taken] = -np.inf
        i = int(np.argmax(var))
        taken[i] = True
        total += 0.5 * math.log1p(var[i] / lam)
        g.add(C[i:i + 1], np.zeros((1, 1)))
    return total


@dataclass
class BetaSchedule:
    """Confidence-width schedule.

    ``theoretical`` mode: ``rkhs_bound + (noise_std / lam) * sqrt(2 ln(1/delta) + 2 gamma)``;
    ``fixed`` mode: the constant ``value``.
    """

    mode: str = "fixed"
    value: float = 1.0
    rkhs_bound: float = 1.0
    noise_std: float = 0.1
    lam: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if self.mode not in ("fixed", "theoretical"):
            raise ValueError(f"unknown beta mode {self.mode!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.mode == "fixed" and self.value < 0:
            raise ValueError("beta must be >= 0")

    def beta(self, gamma: float = 0.0) -> float:
        if self.mode == "fixed":
            return float(self.value)
        return self.rkhs_bound + (self.noise_std / self.lam) * math.sqrt(
            2.0 * math.log(1.0 / self.delta) + 2.0 * gamma)

    def to_json(self):
        return dict(mode=self.mode, value=self.value, rkhs_bound=self.rkhs_bound,
                    noise_std=self.noise_std, lam=self.lam, delta=self.delta)


@dataclass
class ComplexityTracker:
    """Running realised uncertainty sum and information gain.

    Both sums run over observations actually added to the model, using the
    sequential posterior variance each point had just before it was added,
    summed over the p output copies (normalised units).
    """

    n_outputs: int
    lam: float
    variance_sum: float = 0.0
    info_gain: float = 0.0
    per_episode: list = field(default_factory=list)

    def record(self, seq_variances) -> tuple:
        v = np.asarray(seq_variances, dtype=np.float64)
        dvar = float(self.n_outputs * v.sum())
        dinfo = float(self.n_outputs * 0.5 * np.log1p(v / self.lam).sum())
        self.variance_sum += dvar
        self.info_gain += dinfo
        return dvar, dinfo

    def report(self):
        """(gamma_hat, info_gain, bound_ok) with the variance-sum bound
        ``sum sigma^2 <= (1 + 2 lam) * I``."""
        ok = self.variance_sum <= (1.0 + 2.0 * self.lam) * self.info_gain * (1 + 1e-12) + 1e-300
        return self.variance_sum, self.info_gain, bool(ok)


def _apply_temperature(std, temperature):
    return std * temperature


def calibration_gap(z_scores_fn, temperature, levels) -> float:
    """Mean over confidence levels of (empirical coverage - nominal level)."""
    r = z_scores_fn(temperature)
    q = norm.ppf(0.5 + 0.5 * levels)
    return float(np.mean([(r <= qi).mean() - p for qi, p in zip(q, levels)]))


class GpDynamicsModel:
    """p GP output copies over the embedded joint input z = (s, u, ubar).

    Targets are the next state minus the current state (angle differences
    wrapped) in ``target="delta"`` mode or the next state itself in
    ``"absolute"`` mode, divided by ``out_scale``.  ``predict`` returns the
    mean next state (angles unwrapped) and the per-dimension std in state
    units, multiplied by the calibration temperature.
    """

    def __init__(self, transform: InputTransform, state_dim: int, angle_dims=(), *,
                 kernel: Kernel | None = None, lam="pH", horizon: int = 1,
                 out_scale=None, target: str = "delta", noise_std=0.0,
                 beta_schedule: BetaSchedule | None = None,
                 admit_variance: float = 0.0, max_points: int | None = None):
        if target not in ("delta", "absolute"):
            raise ValueError(f"unknown target mode {target!r}")
        self.transform = transform
        self.state_dim = int(state_dim)
        self.angle_dims = tuple(angle_dims)
        self.kernel = kernel or Kernel()
        self.lam_policy = lam
        self.horizon = int(horizon)
        self.lam = float(self.state_dim * self.horizon) if lam == "pH" else float(lam)
        self.out_scale = (np.ones(self.state_dim) if out_scale is None
                          else np.broadcast_to(np.asarray(out_scale, float), (self.state_dim,)).copy())
        self.target = target
        self.noise_std = np.broadcast_to(np.asarray(noise_std, float), (self.state_dim,)).copy()
        self.beta_schedule = beta_schedule or BetaSchedule()
        self.admit_variance = float(admit_variance)
        self.max_points = max_points
        self.temperature = 1.0
        self.gp = GpRegressor(self.kernel, transform.out_dim, self.state_dim, self.lam)
        self.tracker = ComplexityTracker(self.state_dim, self.lam)
        self.episode_count = 0
        self.observations = 0

    @classmethod
    def for_env(cls, env, **kwargs) -> "GpDynamicsModel":
        from .policies import joint_transform
        sp = env.spec
        kwargs.setdefault("horizon", sp.horizon)
        kwargs.setdefault("noise_std", sp.noise_std)
        return cls(joint_transform(env), sp.state_dim, env.angle_dims, **kwargs)

    # -- embedding --------------------------------------------------------

    def embed(self, S, U, Ubar):
        return self.transform(np.hstack([np.atleast_2d(S), np.atleast_2d(U), np.atleast_2d(Ubar)]))

    def _targets(self, S, S_next):
        if self.target == "absolute":
            return S_next / self.out_scale
        D = S_next - S
        for d in self.angle_dims:
            D[:, d] = _kernels.wrap_angle(D[:, d])
        return D / self.out_scale

    # -- learning ---------------------------------------------------------

    def fit(self, transitions):
        """Append one episode of transitions; returns (gamma increment, info-gain increment)."""
        transitions = list(transitions)
        if not transitions:
            return 0.0, 0.0
        S = np.array([t.state for t in transitions])
        U = np.array([t.agent_action for t in transitions])
        Ub = np.array([t.adversary_action for t in transitions])
        Sn = np.array([t.next_state for t in transitions])
        if S.shape[1] != self.state_dim:
            raise ValueError("transition state dimension does not match the model")
        seq, _ = self.gp.add(self.embed(S, U, Ub), self._targets(S, Sn),
                             self.admit_variance, self.max_points)
        inc = self.tracker.record(seq)
        self.tracker.per_episode.append((len(seq), inc[0], inc[1]))
        self.episode_count += 1
        self.observations += len(transitions)
        return inc

    def truncated(self, n_points: int) -> "GpDynamicsModel":
        """Copy restricted to the first ``n_points`` stored observations."""
        m = self._blank_copy()
        m.gp = self.gp.truncated(n_points)
        return m

    def _blank_copy(self):
        m = GpDynamicsModel(self.transform, self.state_dim, self.angle_dims, kernel=self.kernel,
                            lam=self.lam, horizon=self.horizon, out_scale=self.out_scale,
                            target=self.target, noise_std=self.noise_std,
                            beta_schedule=self.beta_schedule, admit_variance=self.admit_variance,
                            max_points=self.max_points)
        m.lam_policy = self.lam_policy
        m.temperature = self.temperature
        return m

    @property
    def n_points(self) -> int:
        return self.gp.n

    # -- queries ----------------------------------------------------------

    def predict(self, S, U, Ubar):
        """Mean next state and std (state units), each of shape (m, p)."""
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        Z = self.embed(S, U, Ubar)
        mu_n, var_n = self.gp.predict(Z)
        std = _apply_temperature(np.sqrt(var_n)[:, None] * self.out_scale[None, :], self.temperature)
        mean = mu_n * self.out_scale
        if self.target == "delta":
            mean = mean + S
        return mean, std

    def predict_z(self, z):
        """Single joint input ``z = (s, u, ubar)`` -> (mean, std) vectors."""
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.transform.dim:
            raise ValueError(f"expected joint input of size {self.transform.dim}")
        p = self.state_dim
        q = (self.transform.dim - p)
        mean, std = self.predict(z[None, :p], z[None, p:p + q][:, :q], np.zeros((1, 0)))
        return mean[0], std[0]

    def beta(self) -> float:
        return self.beta_schedule.beta(self.tracker.info_gain)

    def info_gain_increment(self, z, record: bool = True) -> float:
        """0.5 * log(1 + var(z) / lam) summed over the p outputs at a joint input."""
        Z = self.transform(np.asarray(z, dtype=np.float64).reshape(1, -1))
        _, var = self.gp.predict(Z)
        if record:
            return self.tracker.record(var)[1]
        return float(self.state_dim * 0.5 * math.log1p(var[0] / self.lam))

    def complexity_report(self):
        return self.tracker.report()

    # -- calibration ------------------------------------------------------

    def recalibrate(self, S, U, Ubar, S_next, levels=None, bounds=TEMPERATURE_BOUNDS,
                    iterations: int = 60) -> float:
        """Temperature scaling of the epistemic std on a held-out set.

        The one-step predictive for output i is Gaussian with variance
        ``(T sigma_i)^2 + noise_i^2``.  The signed calibration gap (mean over
        confidence levels of coverage minus level) is non-decreasing in T;
        bisection in log T locates its sign change inside ``bounds``.  The
        result is stored and applied to every later std query.
        """
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if S.shape[0] == 0:
            raise ValueError("empty validation set")
        levels = np.linspace(0.1, 0.9, 9) if levels is None else np.asarray(levels, float)
        Z = self.embed(S, U, Ubar)
        mu_n, var_n = self.gp.predict(Z)
        resid = np.abs(self._targets(S, np.asarray(S_next, float)) - mu_n)
        sig = np.sqrt(var_n)[:, None]
        noise = (self.noise_std / self.out_scale)[None, :]

        def zscores(T):
            return (resid / np.sqrt(_apply_temperature(sig, T) ** 2 + noise ** 2 + 1e-300)).ravel()

        lo, hi = math.log(bounds[0]), math.log(bounds[1])
        if calibration_gap(zscores, bounds[0], levels) >= 0:
            T = bounds[0]
        elif calibration_gap(zscores, bounds[1], levels) <= 0:
            T = bounds[1]
        else:
            for _ in range(iterations):
                mid = 0.5 * (lo + hi)
                if calibration_gap(zscores, math.exp(mid), levels) < 0:
                    lo = mid
                else:
                    hi = mid
            T = math.exp(0.5 * (lo + hi))
        self.temperature = float(min(max(T, bounds[0]), bounds[1]))
        return self.temperature

    # -- persistence ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "rhucrl-gp-model/1",
            "transform": self.transform.to_json(),
            "state_dim": self.state_dim,
            "angle_dims": list(self.angle_dims),
            "kernel": self.kernel.to_json(),
            "lam": self.lam,
            "lam_policy": self.lam_policy if isinstance(self.lam_policy, str) else float(self.lam_policy),
            "horizon": self.horizon,
            "out_scale": self.out_scale.tolist(),
            "target": self.target,
            "noise_std": self.noise_std.tolist(),
            "beta_schedule": self.beta_schedule.to_json(),
            "admit_variance": self.admit_variance,
            "max_points": self.max_points,
            "temperature": self.temperature,
            "inputs": self.gp.X.tolist(),
            "targets": self.gp.Y.tolist(),
            "tracker": {"variance_sum": self.tracker.variance_sum,
                        "info_gain": self.tracker.info_gain,
                        "per_episode": [list(x) for x in self.tracker.per_episode]},
            "episode_count": self.episode_count,
            "observations": self.observations,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d) -> "GpDynamicsModel":
        t = d["transform"]
        tr = InputTransform(t["dim"], tuple(t["angle_dims"]), tuple(t["shift"]), tuple(t["scale"]))
        k = d["kernel"]
        m = cls(tr, d["state_dim"], tuple(d["angle_dims"]),
                kernel=Kernel(k["family"], tuple(k["lengthscales"]), k["signal_variance"]),
                lam=d["lam"], horizon=d["horizon"], out_scale=d["out_scale"], target=d["target"],
                noise_std=d["noise_std"], beta_schedule=BetaSchedule(**d["beta_schedule"]),
                admit_variance=d["admit_variance"], max_points=d["max_points"])
        m.lam_policy = d["lam_policy"]
        m.temperature = d["temperature"]
        X = np.array(d["inputs"], dtype=np.float64).reshape(-1, tr.out_dim)
        Y = np.array(d["targets"], dtype=np.float64).reshape(-1, m.state_dim)
        m.gp.X, m.gp.Y = X, Y
        m.gp.refactor()
        tk = d["tracker"]
        m.tracker.variance_sum = tk["variance_sum"]
        m.tracker.info_gain = tk["info_gain"]
        m.tracker.per_episode = [tuple(x) for x in tk["per_episode"]]
        m.episode_count = d["episode_count"]
        m.observations = d["observations"]
        return m

    @classmethod
    def loads(cls, s: str) -> "GpDynamicsModel":
        return cls.from_json(json.loads(s))
