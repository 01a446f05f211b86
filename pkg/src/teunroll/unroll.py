"""Unrolled reconstruction engines.

Four families over a shared CG data-fidelity core:

  vsqp    x = (E^H E + mu I)^{-1}(E^H y + mu z);        z = prox(x)
  admm    x = (E^H E + mu I)^{-1}(E^H y + mu (z - u));  z = prox(x + u);
          u = u + lam (x - z)
  alg1    x = (E^H E + mu_t I)^{-1}(E^H y + mu_t r);    u = x + rho_t (x - r);
          r = prox(u, t)

vsqp_te / admm_te are the same recursions with per-unroll mu_t and a
t-aware prox; they run through the identical code path, so constant
schedules reduce to the static baselines bit for bit.  Initialization is
x0 = r0 = z0 = E^H y and u0 = 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .linops import cg_solve, normal_map_of, shifted
from .signal_model import ComplexImage, EncodingOperator, KSpaceData

ALGORITHMS = ("vsqp", "admm", "alg1", "vsqp_te", "admm_te")
SHARING_MODES = ("shared", "unshared", "time_embedded")


@dataclass
class UnrollConfig:
    algorithm: str
    T: int
    cg_iters: int = 15
    sharing: str = "shared"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.sharing not in SHARING_MODES:
            raise ValueError(f"unknown sharing mode {self.sharing!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.cg_iters < 1:
            raise ValueError("cg_iters must be >= 1")

    @property
    def family(self):
        if self.algorithm in ("vsqp", "vsqp_te"):
            return "vsqp"
        if self.algorithm in ("admm", "admm_te"):
            return "admm"
        return "alg1"


@dataclass
class ScalarSchedule:
    """One scalar per unroll.  mu schedules carry a positivity floor that
    training projects onto; rho and lambda are unconstrained."""

    values: np.ndarray
    learnable: bool = False
    floor: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("schedule values must be 1-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("schedule contains non-finite values")

    @classmethod
    def constant(cls, value, T, learnable=False, floor=0.0):
        return cls(np.full(T, float(value)), learnable=learnable, floor=floor)

    def project(self):
        if self.floor > 0.0:
            np.maximum(self.values, self.floor, out=self.values)
        return self


@dataclass
class UnrollState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    r: np.ndarray
    t: int = 0


def _wrap_prox(p):
    """Uniform (flat complex vector, t) -> vector view of a proximal map."""
    if hasattr(p, "apply_complex"):
        return lambda v, t, shape: p.apply_complex(v.reshape(shape), t).ravel()
    if hasattr(p, "apply"):
        return lambda v, t, shape: p.apply(v, 1.0)
    if callable(p):
        return lambda v, t, shape: np.asarray(p(v.reshape(shape), t)).ravel()
    raise TypeError(f"cannot use {type(p).__name__} as a proximal operator")


def _fidelity_solve(gram, rhs0, mu, v, cg_iters):
    b = rhs0 + mu * v
    return cg_solve(shifted(gram, mu), b, max_iters=cg_iters, tol=1e-12)


def vsqp_iteration(E, y, z_t, mu, prox, cg_iters=15, t=0):
    """One VSQP step; returns (x_t, z_next) as images."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    gram = normal_map_of(E)
    rhs0 = E.adjoint(y).data.ravel()
    shape = E.shape
    z = np.asarray(z_t.data if isinstance(z_t, ComplexImage) else z_t).ravel()
    x, _ = _fidelity_solve(gram, rhs0, mu, z, cg_iters)
    z_next = _wrap_prox(prox)(x, t, shape)
    return ComplexImage(x.reshape(shape)), ComplexImage(z_next.reshape(shape))


def admm_iteration(E, y, state: UnrollState, mu, lam, prox, cg_iters=15, t=0):
    """One ADMM step with the scaled dual update."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    gram = normal_map_of(E)
    rhs0 = E.adjoint(y).data.ravel()
    shape = E.shape
    z, u = state.z.ravel(), state.u.ravel()
    x, _ = _fidelity_solve(gram, rhs0, mu, z - u, cg_iters)
    z_new = _wrap_prox(prox)(x + u, t, shape)
    u_new = u + lam * (x - z_new)
    return UnrollState(
        x=x.reshape(shape),
        z=z_new.reshape(shape),
        u=u_new.reshape(shape),
        r=state.r,
        t=state.t + 1,
    )


def alg1_iteration(E, y, state: UnrollState, mu_t, rho_t, prox_te, t, cg_iters=15):
    """One time-embedded step: CG fidelity, Onsager extrapolation, t-aware prox."""
    if mu_t <= 0:
        raise ValueError("mu_t must be positive")
    gram = normal_map_of(E)
    rhs0 = E.adjoint(y).data.ravel()
    shape = E.shape
    r = state.r.ravel()
    x, _ = _fidelity_solve(gram, rhs0, mu_t, r, cg_iters)
    u = x + rho_t * (x - r)
    r_new = _wrap_prox(prox_te)(u, t, shape)
    return UnrollState(
        x=x.reshape(shape),
        z=state.z,
        u=u.reshape(shape),
        r=r_new.reshape(shape),
        t=state.t + 1,
    )


@dataclass
class UnrollDiagnostics:
    rows: list = field(default_factory=list)

    def record(self, t, mu_t, rho_t, cg_residual, x_u_nmse, nmse_vs_ref):
        self.rows.append(
            {
                "unroll_index": t,
                "mu_t": mu_t,
                "rho_t": rho_t,
                "cg_residual": cg_residual,
                "x_u_nmse": x_u_nmse,
                "nmse_vs_ref": nmse_vs_ref,
            }
        )

    def to_csv(self):
        buf = io.StringIO()
        cols = ["unroll_index", "mu_t", "rho_t", "cg_residual", "x_u_nmse", "nmse_vs_ref"]
        buf.write(",".join(cols) + "\n")
        for row in self.rows:
            buf.write(
                ",".join(
                    ""
                    if row[c] is None
                    else repr(float(row[c])) if isinstance(row[c], float) else str(row[c])
                    for c in cols
                )
                + "\n"
            )
        return buf.getvalue()


def run_unrolled(
    config: UnrollConfig,
    E: EncodingOperator,
    y: KSpaceData,
    schedules,
    prox_bank,
    reference=None,
):
    """Run T unrolls of the configured algorithm.

    schedules: dict with a 'mu' ScalarSchedule (length T) plus 'rho' for
    alg1 and 'lam' for the ADMM family.  prox_bank holds one prox for
    shared/time_embedded sharing or T proxes for unshared.

    Returns (ComplexImage, UnrollDiagnostics).  The diagnostics carry the
    per-unroll CG residual, the normalized gap ||x - u||^2 / ||x||^2 of the
    Onsager-corrected estimate (alg1 only) and NMSE against an optional
    reference.
    """
    mu_sched = schedules["mu"]
    if len(mu_sched.values) != config.T:
        raise ValueError("mu schedule length must equal T")
    if config.sharing == "unshared":
        if len(prox_bank) != config.T:
            raise ValueError("unshared mode needs T proximal operators")
    elif len(prox_bank) != 1:
        raise ValueError("shared/time-embedded modes use a single proximal operator")
    proxes = [_wrap_prox(p) for p in prox_bank]

    shape = E.shape
    gram = normal_map_of(E)
    rhs0 = E.adjoint(y).data.ravel()
    ref = None
    if reference is not None:
        ref = np.asarray(
            reference.data if isinstance(reference, ComplexImage) else reference
        ).ravel()

    x = rhs0.copy()
    z = rhs0.copy()
    r = rhs0.copy()
    u = np.zeros_like(rhs0)
    diags = UnrollDiagnostics()
    family = config.family

    for t in range(config.T):
        prox = proxes[t] if config.sharing == "unshared" else proxes[0]
        mu_t = float(mu_sched.values[t])
        rho_t = None
        x_u_nmse = None
        if family == "vsqp":
            x, rep = _fidelity_solve(gram, rhs0, mu_t, z, config.cg_iters)
            z = prox(x, t, shape)
        elif family == "admm":
            lam_t = float(schedules["lam"].values[t])
            rho_t = lam_t
            x, rep = _fidelity_solve(gram, rhs0, mu_t, z - u, config.cg_iters)
            z = prox(x + u, t, shape)
            u = u + lam_t * (x - z)
        else:
            rho_t = float(schedules["rho"].values[t])
            x, rep = _fidelity_solve(gram, rhs0, mu_t, r, config.cg_iters)
            u = x + rho_t * (x - r)
            r = prox(u, t, shape)
            x_u_nmse = float(
                np.linalg.norm(x - u) ** 2 / max(np.linalg.norm(x) ** 2, 1e-300)
            )
        nmse_vs_ref = None
        if ref is not None:
            nmse_vs_ref = float(
                np.linalg.norm(x - ref) ** 2 / np.linalg.norm(ref) ** 2
            )
        diags.record(t, mu_t, rho_t, rep.final_residual_norm, x_u_nmse, nmse_vs_ref)

    return ComplexImage(x.reshape(shape)), diags
