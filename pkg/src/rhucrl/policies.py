"""Deterministic feature-map policies with saturating outputs.

A :class:`PolicyFamily` fixes the input transform, the feature map and the
output box; a flat parameter vector then selects one member.  All
evaluation is batched: ``family.act(theta, X)`` takes one parameter row per
input row, which is how population optimizers score many candidates at
once.  The all-zero parameter vector maps every input to the box centre.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

FEATURE_MAPS = ("none", "constant", "linear", "quadratic", "radial")
SATURATIONS = ("tanh", "clip")


@dataclass(frozen=True)
class InputTransform:
    """Embed raw inputs: angle coordinates become (cos, sin), the rest are
    shifted and scaled."""

    dim: int
    angle_dims: tuple = ()
    shift: tuple = ()
    scale: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "angle_dims", tuple(int(a) for a in self.angle_dims))
        shift = np.zeros(self.dim) if len(self.shift) == 0 else np.asarray(self.shift, float)
        scale = np.ones(self.dim) if len(self.scale) == 0 else np.asarray(self.scale, float)
        if shift.shape != (self.dim,) or scale.shape != (self.dim,) or np.any(scale <= 0):
            raise ValueError("shift/scale must match the input dimension and scale must be > 0")
        object.__setattr__(self, "shift", tuple(shift.tolist()))
        object.__setattr__(self, "scale", tuple(scale.tolist()))

    @property
    def plain_dims(self) -> np.ndarray:
        return np.array([d for d in range(self.dim) if d not in self.angle_dims], dtype=int)

    @property
    def out_dim(self) -> int:
        return self.dim + len(self.angle_dims)

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        plain = self.plain_dims
        sh = np.asarray(self.shift)[plain]
        sc = np.asarray(self.scale)[plain]
        parts = [(X[:, plain] - sh) / sc]
        for d in self.angle_dims:
            parts.append(np.cos(X[:, d:d + 1]))
            parts.append(np.sin(X[:, d:d + 1]))
        return np.hstack(parts)

    def to_json(self):
        return {"dim": self.dim, "angle_dims": list(self.angle_dims),
                "shift": list(self.shift), "scale": list(self.scale)}


def _radial_centers(d: int, per_dim: int) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, per_dim)] * d
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


@dataclass(frozen=True)
class PolicyFamily:
    """Policy class ``x -> center + half_width * squash(W @ phi(T(x)))``.

    Parameters
    ----------
    transform : InputTransform
        Raw-input embedding.
    feature_map : str
        ``"none"`` (no parameters; always the box centre), ``"constant"``,
        ``"linear"`` (embedded input plus bias), ``"quadratic"`` (adds all
        pairwise products) or ``"radial"`` (Gaussian bumps on a fixed grid
        in [-1, 1]^d plus bias).
    low, high : array_like
        Output box.
    saturation : str
        ``"tanh"`` or ``"clip"``; the result is always clipped to the box.
    radial_per_dim : int
        Grid points per embedded dimension for the radial map.
    """

    transform: InputTransform
    feature_map: str
    low: tuple
    high: tuple
    saturation: str = "tanh"
    radial_per_dim: int = 3

    def __post_init__(self):
        if self.feature_map not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map {self.feature_map!r}")
        if self.saturation not in SATURATIONS:
            raise ValueError(f"unknown saturation {self.saturation!r}")
        lo = np.atleast_1d(np.asarray(self.low, float))
        hi = np.atleast_1d(np.asarray(self.high, float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("invalid output box")
        object.__setattr__(self, "low", tuple(lo.tolist()))
        object.__setattr__(self, "high", tuple(hi.tolist()))

    @property
    def out_dim(self) -> int:
        return len(self.low)

    @property
    def n_features(self) -> int:
        d = self.transform.out_dim
        return {"none": 0, "constant": 1, "linear": d + 1,
                "quadratic": d + d * (d + 1) // 2 + 1,
                "radial": self.radial_per_dim ** d + 1}[self.feature_map]

    @property
    def dim(self) -> int:
        """Number of free parameters."""
        return self.out_dim * self.n_features

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.low) + np.asarray(self.high))

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.high) - np.asarray(self.low))

    def features(self, X) -> np.ndarray:
        E = self.transform(X)
        n = E.shape[0]
        fm = self.feature_map
        if fm == "none":
            return np.zeros((n, 0))
        if fm == "constant":
            return np.ones((n, 1))
        if fm == "linear":
            return np.hstack([E, np.ones((n, 1))])
        if fm == "quadratic":
            return _kernels.quadratic_features(np.ascontiguousarray(E))
        C = _radial_centers(E.shape[1], self.radial_per_dim)
        width = 2.0 / max(self.radial_per_dim - 1, 1)
        d2 = ((E[:, None, :] - C[None, :, :]) ** 2).sum(-1)
        return np.hstack([np.exp(-0.5 * d2 / width ** 2), np.ones((n, 1))])

    def act(self, theta, X) -> np.ndarray:
        """Batched outputs; ``theta`` is (N, dim) or (dim,), ``X`` is (N, input_dim)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim == 1:
            theta = np.broadcast_to(theta, (n, theta.size))
        if theta.shape != (n, self.dim):
            raise ValueError(f"expected parameters of shape ({n}, {self.dim}), got {theta.shape}")
        lo, hi = np.asarray(self.low), np.asarray(self.high)
        if self.dim == 0:
            return np.tile(self.center, (n, 1))
        W = np.ascontiguousarray(theta.reshape(n, self.out_dim, self.n_features))
        Phi = np.ascontiguousarray(self.features(X))
        if self.saturation == "tanh":
            out = _kernels.tanh_head(W, Phi, self.center, self.half_width)
        else:
            out = self.center + self.half_width * np.einsum("nof,nf->no", W, Phi)
        return np.clip(out, lo, hi)

    def zeros(self) -> "PolicyParams":
        return PolicyParams(self, np.zeros(self.dim))

    def vertex_params(self, max_outputs: int = 3) -> list:
        """Parameter vectors of the constant policies at the corners of the
        output box (bias weights only), in binary order starting at ``low``.

        Empty for the parameter-free family or more than ``max_outputs``
        outputs.  With tanh saturation the corners are reached to within
        0.5% of the half-width.
        """
        if self.feature_map == "none" or self.out_dim > max_outputs:
            return []
        gain = 3.0 if self.saturation == "tanh" else 1.0
        out = []
        for k in range(2 ** self.out_dim):
            signs = np.array([1.0 if (k >> i) & 1 else -1.0 for i in range(self.out_dim)])
            W = np.zeros((self.out_dim, self.n_features))
            W[:, -1] = gain * signs
            out.append(W.ravel())
        return out

    def lipschitz_bound(self, theta) -> float:
        """Lipschitz constant in the raw input (2-norm), for linear or constant
        maps over inputs without angle coordinates."""
        if self.feature_map in ("none", "constant"):
            return 0.0
        if self.feature_map != "linear" or self.transform.angle_dims:
            raise ValueError("analytic Lipschitz bound only for linear maps without angles")
        W = np.asarray(theta, float).reshape(self.out_dim, self.n_features)[:, :-1]
        J = self.half_width[:, None] * W / np.asarray(self.transform.scale)[None, :]
        return float(np.linalg.norm(J, 2))

    def to_json(self):
        return {"transform": self.transform.to_json(), "feature_map": self.feature_map,
                "low": list(self.low), "high": list(self.high),
                "saturation": self.saturation, "radial_per_dim": self.radial_per_dim}

    @classmethod
    def from_json(cls, d) -> "PolicyFamily":
        t = d["transform"]
        return cls(InputTransform(t["dim"], tuple(t["angle_dims"]), tuple(t["shift"]),
                                  tuple(t["scale"])),
                   d["feature_map"], tuple(d["low"]), tuple(d["high"]), d["saturation"],
                   d["radial_per_dim"])


@dataclass(frozen=True)
class PolicyParams:
    """One member of a :class:`PolicyFamily`; callable on a single state."""

    family: PolicyFamily
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64).reshape(-1)
        if th.size != self.family.dim:
            raise ValueError(f"family expects {self.family.dim} parameters, got {th.size}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def __call__(self, x) -> np.ndarray:
        return self.family.act(self.theta[None, :], np.asarray(x, float)[None, :])[0]

    def to_json(self) -> dict:
        return {"family": self.family.to_json(), "shape": [self.family.out_dim, self.family.n_features],
                "params": self.theta.tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d) -> "PolicyParams":
        fam = PolicyFamily.from_json(d["family"])
        if list(d["shape"]) != [fam.out_dim, fam.n_features]:
            raise ValueError("parameter shape does not match the family")
        return cls(fam, np.array(d["params"], dtype=np.float64))

    @classmethod
    def loads(cls, s: str) -> "PolicyParams":
        return cls.from_json(json.loads(s))


def state_transform(env) -> InputTransform:
    """Embedding of the environment state used by agent and adversary policies."""
    sp = env.spec
    return InputTransform(sp.state_dim, env.angle_dims, np.zeros(sp.state_dim), env.state_scale)


def joint_transform(env) -> InputTransform:
    """Embedding of z = (s, u, ubar): state as above, actions scaled to [-1, 1]."""
    sp = env.spec
    shift = np.concatenate([np.zeros(sp.state_dim), sp.action_box.center, sp.adversary_box.center])
    scale = np.concatenate([env.state_scale, sp.action_box.half_width, sp.adversary_box.half_width])
    return InputTransform(sp.state_dim + sp.action_dim + sp.adversary_dim, env.angle_dims, shift, scale)


def agent_family(env, feature_map="linear", saturation="tanh") -> PolicyFamily:
    b = env.spec.action_box
    return PolicyFamily(state_transform(env), feature_map, tuple(b.low), tuple(b.high), saturation)


def adversary_family(env, feature_map="constant", saturation="tanh") -> PolicyFamily:
    """``feature_map="constant"`` is the per-episode-constant (stateless) adversary;
    ``"none"`` is the singleton family fixed at the box centre."""
    b = env.spec.adversary_box
    return PolicyFamily(state_transform(env), feature_map, tuple(b.low), tuple(b.high), saturation)


def hallucination_family(env, feature_map="linear") -> PolicyFamily:
    """Hallucination policy eta: z -> [-1, 1]^p."""
    p = env.spec.state_dim
    return PolicyFamily(joint_transform(env), feature_map, (-1.0,) * p, (1.0,) * p, "tanh")
