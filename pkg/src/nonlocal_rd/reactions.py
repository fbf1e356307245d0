"""Reaction vector fields and sampling checks of their structural hypotheses.

Every checker here is a certifying sampler: a pass is numerical evidence on
the sampled set, not a proof, and every failure carries a witness point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

SAMPLER_NOTE = "sampling-based check: a pass is evidence on the sampled set, not a proof"


@dataclass(frozen=True)
class PeriodicDamping:
    """Parameters of the periodic intermediate-sum bound.

    ``b(t)`` is ``T``-periodic, zero on ``[0, tau]`` and ``alpha`` on ``(tau, T)``.
    """

    K: float
    alpha: float
    tau: float
    T: float

    def __post_init__(self):
        if not (self.K >= 0 and self.alpha >= 0 and self.T > 0 and 0 < self.tau < self.T):
            raise ValueError(f"invalid periodic damping parameters {self}")

    def b(self, t):
        s = np.mod(np.asarray(t, dtype=float), self.T)
        return np.where(s <= self.tau, 0.0, self.alpha)


@dataclass(frozen=True)
class ReactionSystem:
    """An ``m``-component field ``f(t, u)`` with declared structure.

    ``func(t, u)`` takes ``u`` of shape ``(m, ...)`` and returns the same shape.

    Metadata (all optional): ``qbal_weights`` positive weights ``a`` with
    ``balanced`` marking exact balance (``L = 0``); ``intsum_matrix`` lower
    triangular with unit diagonal and ``intsum_bound`` its linear bound ``L``;
    ``periodic_damping``; ``poly_degree``.
    """

    name: str
    m: int
    func: Callable[[float, np.ndarray], np.ndarray] = field(repr=False, compare=False)
    qbal_weights: Optional[tuple[float, ...]] = None
    balanced: bool = False
    intsum_matrix: Optional[tuple[tuple[float, ...], ...]] = None
    intsum_bound: Optional[float] = None
    periodic_damping: Optional[PeriodicDamping] = None
    poly_degree: Optional[int] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("reaction needs at least one component")
        if self.qbal_weights is not None:
            a = np.asarray(self.qbal_weights, dtype=float)
            if a.shape != (self.m,) or np.any(a <= 0):
                raise ValueError(f"qbal weights must be {self.m} positive numbers, got {self.qbal_weights}")
        if self.intsum_matrix is not None:
            A = np.asarray(self.intsum_matrix, dtype=float)
            if A.shape != (self.m, self.m):
                raise ValueError(f"intsum matrix must be {self.m}x{self.m}")
            if np.any(np.triu(A, 1) != 0):
                raise ValueError("intsum matrix must be lower triangular")
            if np.any(np.diag(A) != 1.0):
                raise ValueError("intsum matrix must have unit diagonal")
            if np.any(A < 0):
                raise ValueError("intsum matrix entries must be nonnegative")
        if self.intsum_bound is not None and self.intsum_bound < 0:
            raise ValueError("intsum bound must be nonnegative")

    def __call__(self, t, u):
        return self.eval(t, u)

    def eval(self, t, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.m:
            raise ValueError(f"{self.name} expects {self.m} components, got {u.shape[0]}")
        return np.asarray(self.func(t, u), dtype=float)

    @property
    def A(self) -> Optional[np.ndarray]:
        return None if self.intsum_matrix is None else np.asarray(self.intsum_matrix, dtype=float)


def _stack(*rows):
    return np.stack(np.broadcast_arrays(*rows))


def gray_scott(a: float = 0.25, b: float = 0.080) -> ReactionSystem:
    def f(t, u):
        u1, u2 = u
        r = u1 * u2 * u2
        return _stack(-r + a * (1.0 - u1), r - (a + b) * u2)

    return ReactionSystem(
        "gray_scott", 2, f,
        qbal_weights=(1.0, 1.0),
        intsum_matrix=((1.0, 0.0), (1.0, 1.0)),
        intsum_bound=a,
        periodic_damping=PeriodicDamping(K=a, alpha=min(a, a + b), tau=1e-6, T=1.0),
        poly_degree=3,
        params={"a": a, "b": b},
    )


def reversible_chem(k1: float = 1.0, k2: float = 1.0) -> ReactionSystem:
    def f(t, v):
        v1, v2, v3 = v
        s1 = v1 * v1
        s2 = v2 * v2
        return _stack(
            2.0 * k2 * (v2 - s1),
            -2.0 * k1 * (s2 - v3) + k2 * (s1 - v2),
            k1 * (s2 - v3),
        )

    # third row (1, 2, 4) rescaled to unit diagonal
    return ReactionSystem(
        "reversible_chem", 3, f,
        qbal_weights=(1.0, 2.0, 4.0),
        balanced=True,
        intsum_matrix=((1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.25, 0.5, 1.0)),
        intsum_bound=2.0 * max(k1, k2),
        poly_degree=2,
        params={"k1": k1, "k2": k2},
    )


RUMOR_DEFAULTS = dict(kbar=1.0, gamma=0.5, alpha=0.8, lam=0.6, mu=0.5,
                      theta=0.4, phi=0.3, eta1=0.2, eta2=0.1)


def rumor(kbar=1.0, gamma=0.5, alpha=0.8, lam=0.6, mu=0.5, theta=0.4, phi=0.3,
          eta1=0.2, eta2=0.1) -> ReactionSystem:
    """Five-population rumour spreading model (ignorant x2, exposed, spreader, stifler)."""
    if not (0 <= gamma <= 1 and 0 < alpha <= 1 and 0 < mu <= 1
            and all(0 <= x <= 1 for x in (lam, theta, phi, eta1, eta2))):
        raise ValueError("rumor parameters outside their admissible ranges")
    gal = gamma * alpha * lam

    def f(t, v):
        v1, v2, v3, v4, v5 = v
        spread = kbar * v4 * (v5 + v4 + v3) * eta1 + v4 * eta2
        return _stack(
            -kbar * v1 * v4 * (gal * mu + gamma * (1 - gamma) * alpha * lam),
            -kbar * v2 * v4 * gal,
            kbar * v1 * v4 * gamma * (1 - gamma) * alpha * lam - kbar * v4 * v3 * theta - kbar * v5 * v3 * phi,
            kbar * v4 * (mu * v1 + v2) * gal + kbar * v4 * v3 * theta - spread,
            spread + kbar * v5 * v3 * phi,
        )

    ones = tuple(tuple(1.0 if j <= i else 0.0 for j in range(5)) for i in range(5))
    return ReactionSystem(
        "rumor", 5, f,
        qbal_weights=(1.0,) * 5,
        balanced=True,
        intsum_matrix=ones,
        intsum_bound=0.0,
        poly_degree=2,
        params=dict(kbar=kbar, gamma=gamma, alpha=alpha, lam=lam, mu=mu, theta=theta,
                    phi=phi, eta1=eta1, eta2=eta2),
    )


def mol_demo() -> ReactionSystem:
    def f(t, w):
        u, v = w
        r = u * v * v
        return _stack(u + v - r, r)

    return ReactionSystem(
        "mol_demo", 2, f,
        qbal_weights=(1.0, 1.0),
        intsum_matrix=((1.0, 0.0), (1.0, 1.0)),
        intsum_bound=1.0,
        poly_degree=3,
    )


def zero_reaction(m: int) -> ReactionSystem:
    return ReactionSystem(
        "zero", m, lambda t, u: np.zeros_like(u),
        qbal_weights=(1.0,) * m, balanced=True, poly_degree=0,
    )


def linear_decay(lam, m: Optional[int] = None) -> ReactionSystem:
    """``f_i = -lam_i u_i``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if m is not None and lam.size == 1:
        lam = np.full(m, lam[0])
    k = lam.reshape((-1,))

    def f(t, u):
        return -k.reshape((-1,) + (1,) * (u.ndim - 1)) * u

    return ReactionSystem("linear_decay", k.size, f, poly_degree=1, params={"lam": k.tolist()})


def damped_source(K: float, alpha: float, m: int, tau: float = 0.5, T: float = 1.0) -> ReactionSystem:
    """``f_i = K/m - alpha u_i``, the reference field for the periodic bound."""

    def f(t, u):
        return K / m - alpha * u

    return ReactionSystem(
        "damped_source", m, f,
        intsum_matrix=tuple(tuple(1.0 if j <= i else 0.0 for j in range(m)) for i in range(m)),
        periodic_damping=PeriodicDamping(K=K, alpha=alpha, tau=tau, T=T),
        poly_degree=1,
    )


def polynomial(m: int, terms: Sequence[tuple[int, float, Sequence[int]]], name: str = "custom",
               **metadata) -> ReactionSystem:
    """Field built from ``(component, coefficient, exponents)`` monomials."""
    parsed = []
    for comp, coef, expo in terms:
        expo = tuple(int(e) for e in expo)
        if not 0 <= int(comp) < m:
            raise ValueError(f"monomial component {comp} out of range for m={m}")
        if len(expo) != m or any(e < 0 for e in expo):
            raise ValueError(f"exponent vector {expo} must have {m} nonnegative entries")
        parsed.append((int(comp), float(coef), expo))

    def f(t, u):
        out = np.zeros_like(u)
        for comp, coef, expo in parsed:
            mono = np.full(u.shape[1:], coef)
            for i, e in enumerate(expo):
                if e:
                    mono = mono * u[i] ** e
            out[comp] += mono
        return out

    degree = max((sum(e) for _, c, e in parsed if c != 0.0), default=0)
    metadata.setdefault("poly_degree", degree)
    return ReactionSystem(name, m, f, params={"terms": parsed}, **metadata)


BUILTINS = {
    "gray_scott": gray_scott,
    "reversible_chem": reversible_chem,
    "rumor": rumor,
    "mol_demo": mol_demo,
}


# ---------------------------------------------------------------- checkers


@dataclass
class CheckReport:
    hypothesis: str
    system: str
    passed: bool
    estimate: float
    witness_t: Optional[float] = None
    witness_u: Optional[tuple[float, ...]] = None
    details: dict = field(default_factory=dict)
    note: str = SAMPLER_NOTE

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"[{status}] {self.hypothesis} on {self.system}: estimate={self.estimate:.6g}"
        if not self.passed and self.witness_u is not None:
            line += f" witness t={self.witness_t!r} u={list(self.witness_u)!r}"
        return line


def sample_box(m: int, samples: int, box_max: float, rng: np.random.Generator,
               decades: float = 8.0, zero_prob: float = 0.1) -> np.ndarray:
    """Points of ``[0, box_max]^m``: log-uniform coordinates, random zero faces, box corners.

    Returns shape ``(m, n_points)``.
    """
    expo = rng.uniform(-decades, 0.0, size=(m, samples))
    pts = box_max * 10.0**expo
    pts[rng.random((m, samples)) < zero_prob] = 0.0
    corners = np.array(np.meshgrid(*[[0.0, box_max]] * m, indexing="ij")).reshape(m, -1)
    return np.concatenate([corners, pts], axis=1)


def check_quasi_positivity(system: ReactionSystem, samples: int = 2000, box_max: float = 1e3,
                           seed: int = 0, tol: float = 1e-12) -> CheckReport:
    """``f_i >= 0`` on each face ``u_i = 0`` of the nonnegative cone."""
    rng = np.random.default_rng(seed)
    worst, witness, per_comp = math.inf, None, []
    for i in range(system.m):
        u = sample_box(system.m, samples, box_max, rng)
        u[i] = 0.0
        t = rng.uniform(0.0, box_max, size=u.shape[1])
        if not _time_dependent(system):
            t = np.zeros_like(t)
        fi = _eval_samples(system, t, u)[i]
        k = int(np.argmin(fi))
        per_comp.append(float(fi[k]))
        if fi[k] < worst:
            worst = float(fi[k])
            witness = (float(t[k]), tuple(float(x) for x in u[:, k]), i)
    passed = worst >= -tol
    return CheckReport("QP", system.name, passed, worst, witness[0], witness[1],
                       details={"component": witness[2], "worst_per_component": per_comp})


def _time_dependent(system: ReactionSystem) -> bool:
    return bool(system.params.get("time_dependent", False))


def _eval_samples(system: ReactionSystem, t: np.ndarray, u: np.ndarray) -> np.ndarray:
    if _time_dependent(system):
        return np.stack([system.eval(tk, u[:, k]) for k, tk in enumerate(t)], axis=1)
    return system.eval(0.0, u)


def check_qbal(system: ReactionSystem, samples: int = 2000, box_max: float = 1e3, seed: int = 0,
               balance_tol: float = 1e-12) -> CheckReport:
    """Estimate ``L = max sum_i a_i f_i / (sum_i u_i + 1)`` over sampled points."""
    if system.qbal_weights is None:
        raise ValueError(f"{system.name} declares no quasi-balancing weights")
    rng = np.random.default_rng(seed)
    u = sample_box(system.m, samples, box_max, rng)
    t = rng.uniform(0.0, box_max, size=u.shape[1])
    a = np.asarray(system.qbal_weights)
    ratio = (a @ _eval_samples(system, t, u)) / (u.sum(axis=0) + 1.0)
    k = int(np.argmax(ratio))
    L_hat = float(ratio[k])
    passed = math.isfinite(L_hat) and (not system.balanced or L_hat <= balance_tol)
    return CheckReport("QBAL", system.name, passed, L_hat, float(t[k]), tuple(float(x) for x in u[:, k]),
                       details={"weights": tuple(a), "balanced": system.balanced})


def check_intsum(system: ReactionSystem, samples: int = 2000, box_max: float = 1e3, seed: int = 0,
                 abs_tol: float = 1e-12) -> CheckReport:
    """Estimate each partial-sum bound ``L_k`` of the intermediate-sum condition.

    The right-hand side is ``L (sum of all u_i + 1)``.
    """
    A = system.A
    if A is None:
        raise ValueError(f"{system.name} declares no intermediate-sum matrix")
    rng = np.random.default_rng(seed)
    u = sample_box(system.m, samples, box_max, rng)
    t = rng.uniform(0.0, box_max, size=u.shape[1])
    ratios = (A @ _eval_samples(system, t, u)) / (u.sum(axis=0) + 1.0)
    L_k = ratios.max(axis=1)
    kk = int(np.argmax(L_k))
    col = int(np.argmax(ratios[kk]))
    L_hat = float(L_k[kk])
    if system.intsum_bound is None:
        passed = math.isfinite(L_hat)
    else:
        passed = L_hat <= system.intsum_bound * (1 + 1e-9) + abs_tol
    return CheckReport("INT-SUM", system.name, passed, L_hat, float(t[col]),
                       tuple(float(x) for x in u[:, col]),
                       details={"L_k": L_k.tolist(), "declared_L": system.intsum_bound, "row": kk})


def check_intsum_periodic(system: ReactionSystem, t_samples: int = 64, u_samples: int = 500,
                          box_max: float = 1e3, seed: int = 0, rtol: float = 1e-12) -> CheckReport:
    """``sum_j a_kj f_j(t, u) <= K - b(t) sum_{j<=k} u_j`` over a ``(t, u)`` product grid.

    The time grid spans two periods and brackets each jump of ``b``.
    """
    pd = system.periodic_damping
    if pd is None:
        raise ValueError(f"{system.name} declares no periodic damping")
    A = system.A if system.A is not None else np.eye(system.m)
    rng = np.random.default_rng(seed)
    u = sample_box(system.m, u_samples, box_max, rng)
    delta = 1e-9 * pd.T
    ts = np.concatenate([
        np.linspace(0.0, 2 * pd.T, t_samples),
        [pd.tau - delta, pd.tau, pd.tau + delta, pd.T - delta, pd.T + pd.tau + delta],
    ])
    ts = np.unique(np.clip(ts, 0.0, None))
    partial_u = np.cumsum(u, axis=0)
    worst, witness = -math.inf, None
    for t in ts:
        lhs = A @ system.eval(t, u)
        rhs = pd.K - pd.b(t) * partial_u
        scale = 1.0 + np.abs(rhs) + np.abs(A) @ np.abs(system.eval(t, u))
        resid = (lhs - rhs) / scale
        k, col = np.unravel_index(int(np.argmax(resid)), resid.shape)
        if resid[k, col] > worst:
            worst = float(resid[k, col])
            witness = (float(t), tuple(float(x) for x in u[:, col]), int(k))
    passed = worst <= rtol
    return CheckReport("INT-SUM-p", system.name, passed, worst, witness[0], witness[1],
                       details={"row": witness[2], "K": pd.K, "alpha": pd.alpha, "tau": pd.tau, "T": pd.T})


class PolynomialFitError(ValueError):
    pass


def estimate_poly_degree(system: ReactionSystem, box_max: float = 1e3, n_rays: int = 16,
                         n_points: int = 25, seed: int = 0, slack: float = 0.1,
                         max_slope: float = 40.0) -> int:
    """Smallest integer ``r`` with ``|f| <~ (sum u + 1)**r`` along sampled rays.

    Along each ray ``u = s e`` the growth exponent is the median of
    extrapolated local slopes of ``log|f_i|`` against ``log(sum u + 1)`` over
    the upper half of ``s``; the median keeps sign changes of ``f_i`` from
    inflating it.
    """
    rng = np.random.default_rng(seed)
    m = system.m
    dirs = [np.eye(m)[i] for i in range(m)] + [np.ones(m)]
    dirs += [d / d.max() for d in rng.uniform(0.05, 1.0, size=(n_rays, m))]
    s = np.geomspace(1.0, box_max, n_points)
    rho = s[1] / s[0]
    upper = slice(n_points // 2, None)
    slope_max = 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for e in dirs:
            u = e[:, None] * s[None, :]
            f = np.abs(system.eval(0.0, u))
            if not np.all(np.isfinite(f)):
                raise PolynomialFitError(f"{system.name}: non-finite values along a ray; growth is not polynomial")
            x = np.log(u.sum(axis=0) + 1.0)[upper]
            for fi in f:
                y = fi[upper]
                if np.all(y == 0):
                    continue
                local = np.diff(np.log(y)) / np.diff(x)
                # local slope ~ r + c/s; eliminate c between neighbouring points
                extrap = (rho * local[1:] - local[:-1]) / (rho - 1.0)
                extrap = extrap[np.isfinite(extrap)]
                if extrap.size == 0:
                    continue
                slope = float(np.median(extrap))
                if slope > max_slope:
                    raise PolynomialFitError(f"{system.name}: growth exponent {slope:.3g} is not polynomial")
                slope_max = max(slope_max, slope)
    return max(0, int(math.ceil(slope_max - slack)))


class AuditFailure(RuntimeError):
    def __init__(self, reports: Sequence[CheckReport]):
        self.reports = list(reports)
        super().__init__("assumption audit failed: " + "; ".join(r.summary() for r in self.reports))


def audit(system: ReactionSystem, samples: int = 2000, box_max: float = 1e3, seed: int = 0) -> list[CheckReport]:
    """Run every checker that applies to ``system``'s declared structure.

    Quasi-positivity is always checked; the others only when declared.
    """
    reports = [check_quasi_positivity(system, samples, box_max, seed)]
    if system.qbal_weights is not None:
        reports.append(check_qbal(system, samples, box_max, seed))
    if system.intsum_matrix is not None and system.periodic_damping is None:
        reports.append(check_intsum(system, samples, box_max, seed))
    if system.periodic_damping is not None:
        reports.append(check_intsum_periodic(system, box_max=box_max, seed=seed))
    return reports
