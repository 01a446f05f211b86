"""End-to-end training of unrolled reconstruction networks.

The unrolled forward pass is rebuilt here on tape tensors: complex images
travel as (2, H, W) real tensors, the encoding physics enters through a
self-adjoint linear-op hook, and the CG data-fidelity solve is unrolled
onto the tape for its fixed iteration budget so gradients reach both the
proximal networks and the per-unroll scalars.
"""

from __future__ import annotations

import numpy as np

from ..signal_model import EncodingOperator, KSpaceData, ComplexImage
from ..unroll import ScalarSchedule, UnrollConfig
from . import engine as en
from .engine import Tape, Tensor
from .networks import build_network, complex_to_channels, channels_to_complex

MU_FLOOR = 1e-6
_DENOM_GUARD = 1e-30


class TrainingError(RuntimeError):
    pass


def normal_fn(E: EncodingOperator):
    """E^H E as a function on 2-channel real arrays."""

    def fn(arr):
        return complex_to_channels(E.normal_array(channels_to_complex(arr)))

    return fn


def cg_tape(apply_A, b, iters):
    """Differentiable CG with a fixed iteration budget and zero start.

    apply_A maps Tensor -> Tensor and must be self-adjoint PSD.  The tiny
    denominator guard only matters once the residual is at round-off.
    """
    x = Tensor(np.zeros_like(b.data))
    r = b
    p = r
    rs = en.sum_all(en.mul(r, r))
    for _ in range(iters):
        Ap = apply_A(p)
        alpha = en.div(rs, en.add(en.sum_all(en.mul(p, Ap)), Tensor(_DENOM_GUARD)))
        x = en.add(x, en.mul(alpha, p))
        r = en.sub(r, en.mul(alpha, Ap))
        rs_new = en.sum_all(en.mul(r, r))
        beta = en.div(rs_new, en.add(rs, Tensor(_DENOM_GUARD)))
        p = en.add(r, en.mul(beta, p))
        rs = rs_new
    return x


class TrainableEngine:
    """An unrolled reconstruction network with trainable proximal operators
    and scalar schedules.

    algorithm in {vsqp, admm, alg1, vsqp_te, admm_te}; sharing selects one
    static network (shared), T independent networks (unshared) or one
    time-embedded network (time_embedded).  Static algorithms train a
    single data-fidelity weight; the time-embedded ones train one per
    unroll, plus per-unroll Onsager weights for alg1 and a dual step size
    for the ADMM family.
    """

    def __init__(self, algorithm, T, cg_iters=15, sharing="shared", arch="resnet",
                 seed=0, mu_init=None, rho_init=0.1, lam_init=0.1, **arch_kwargs):
        self.config = UnrollConfig(algorithm=algorithm, T=T, cg_iters=cg_iters,
                                   sharing=sharing)
        self.arch = arch
        self.arch_kwargs = dict(arch_kwargs)
        self.seed = seed
        time_embedded = sharing == "time_embedded"
        n_nets = T if sharing == "unshared" else 1
        self.networks = [
            build_network(arch, time_embedded=time_embedded, seed=seed + i, **arch_kwargs)
            for i in range(n_nets)
        ]
        if mu_init is None:
            mu_init = 5e-2 if algorithm == "vsqp" else 1.5e-2
        per_unroll_mu = self.config.algorithm in ("alg1", "vsqp_te", "admm_te")
        n_mu = T if per_unroll_mu else 1
        self.mu = [Tensor(np.float64(mu_init), requires_grad=True) for _ in range(n_mu)]
        self.rho = []
        if self.config.family == "alg1":
            self.rho = [Tensor(np.float64(rho_init), requires_grad=True) for _ in range(T)]
        self.lam = []
        if self.config.family == "admm":
            self.lam = [Tensor(np.float64(lam_init), requires_grad=True)]

    # -- parameter plumbing --------------------------------------------------
    def parameters(self):
        params = {}
        for i, net in enumerate(self.networks):
            prefix = f"net{i}" if len(self.networks) > 1 else "net"
            for name, t in net.parameters().items():
                params[f"{prefix}.{name}"] = t
        for i, t in enumerate(self.mu):
            params[f"mu.{i:04d}"] = t
        for i, t in enumerate(self.rho):
            params[f"rho.{i:04d}"] = t
        for i, t in enumerate(self.lam):
            params[f"lam.{i:04d}"] = t
        return params

    def count_parameters(self):
        return sum(int(t.data.size) for t in self.parameters().values())

    def load_state(self, state):
        """Install a checkpoint's arrays; shapes are checked against the
        engine's architecture."""
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:4]}...")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r} shape {arr.shape} != expected {t.data.shape}"
                )
            t.data = arr.copy()

    def project(self):
        for t in self.mu:
            if t.data < MU_FLOOR:
                t.data = np.float64(MU_FLOOR)

    def _mu_at(self, t):
        return self.mu[t] if len(self.mu) > 1 else self.mu[0]

    def _net_at(self, t):
        return self.networks[t] if len(self.networks) > 1 else self.networks[0]

    def _prox(self, x, t):
        net = self._net_at(t)
        return net.forward(x, t if self.config.sharing == "time_embedded" else None)

    # -- forward -------------------------------------------------------------
    def forward(self, E: EncodingOperator, y: KSpaceData, record=None):
        """Unrolled reconstruction as a (2, H, W) tape tensor.

        The returned estimate is the final CG output, so the last unroll's
        prox (and Onsager extrapolation) cannot influence it; that dead
        tail is skipped rather than taped.  ``record``, when a list,
        receives one diagnostics dict per unroll.
        """
        fn = normal_fn(E)
        rhs0 = Tensor(complex_to_channels(E.adjoint(y).data))
        family = self.config.family
        x = rhs0
        z = rhs0
        r = rhs0
        u = Tensor(np.zeros_like(rhs0.data))
        for t in range(self.config.T):
            mu = self._mu_at(t)
            last = t == self.config.T - 1

            def apply_A(v, mu=mu):
                return en.add(en.linear_selfadjoint(v, fn), en.mul(mu, v))

            gap = None
            if family == "vsqp":
                b = en.add(rhs0, en.mul(mu, z))
                x = cg_tape(apply_A, b, self.config.cg_iters)
                if not last:
                    z = self._prox(x, t)
            elif family == "admm":
                b = en.add(rhs0, en.mul(mu, en.sub(z, u)))
                x = cg_tape(apply_A, b, self.config.cg_iters)
                if not last:
                    z = self._prox(en.add(x, u), t)
                    u = en.add(u, en.mul(self.lam[0], en.sub(x, z)))
            else:
                b = en.add(rhs0, en.mul(mu, r))
                x = cg_tape(apply_A, b, self.config.cg_iters)
                rho = float(self.rho[t].data)
                u_np = x.data + rho * (x.data - r.data)
                gap = float(np.sum((x.data - u_np) ** 2) / max(np.sum(x.data**2), 1e-300))
                if not last:
                    u = en.add(x, en.mul(self.rho[t], en.sub(x, r)))
                    r = self._prox(u, t)
            if record is not None:
                record.append({
                    "unroll_index": t,
                    "mu_t": float(mu.data),
                    "rho_t": float(self.rho[t].data) if self.rho else None,
                    "x_u_nmse": gap,
                })
        return x

    def reconstruct(self, E, y):
        """Inference pass (no tape) returning a ComplexImage."""
        out = self.forward(E, y)
        return ComplexImage(channels_to_complex(out.data))

    def schedules(self):
        """Trained scalars as inference-side schedules."""
        T = self.config.T
        mu = np.array([float(self._mu_at(t).data) for t in range(T)])
        out = {"mu": ScalarSchedule(mu, learnable=True, floor=MU_FLOOR)}
        if self.rho:
            out["rho"] = ScalarSchedule(np.array([float(r.data) for r in self.rho]),
                                        learnable=True)
        if self.lam:
            out["lam"] = ScalarSchedule(np.full(T, float(self.lam[0].data)),
                                        learnable=True)
        return out


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(engine: TrainableEngine, dataset, epochs, lr, seed=0, shuffle=True):
    """Minimize the MSE between reconstructions and references.

    dataset: sequence of (EncodingOperator, KSpaceData, ComplexImage).
    Returns the per-epoch mean training loss; epochs=0 leaves the engine
    untouched.  Aborts with the offending sample index if a loss goes
    non-finite.
    """
    optimizer = Adam(engine.parameters(), lr)
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset)) if shuffle else np.arange(len(dataset))
        total = 0.0
        for idx in order:
            E, y, reference = dataset[idx]
            target = Tensor(complex_to_channels(reference.data))
            optimizer.zero_grad()
            with Tape() as tape:
                recon = engine.forward(E, y)
                loss = en.mse(recon, target)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at sample {int(idx)} (epoch {epoch})")
            tape.backward(loss)
            optimizer.step()
            engine.project()
            total += value
        curve.append(total / len(dataset))
    return curve
