"""State-space layers: LTI recurrence and kernel form, selective (Mamba) block.

Discretisation uses zero-order hold for the diagonal state matrix and an Euler
step for the input map::

    A_bar = exp(delta * A)        B_bar = delta * B
    h_t = A_bar h_{t-1} + B_bar x_t
    y_t = C h_t + D * x_t
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import Linear, Module


@dataclass
class SSMParams:
    """Time-invariant SSM with a diagonal state matrix.

    Shapes: ``A_diag`` (m,), ``B`` (m, d_in), ``C`` (d_out, m), ``D`` (d_in,).
    ``delta`` is a positive scalar step.
    """

    A_diag: Tensor
    B: Tensor
    C: Tensor
    D: Tensor
    delta: float

    @property
    def m(self) -> int:
        return self.A_diag.shape[0]


def discretize(A_diag, B, delta):
    A_diag, B = as_tensor(A_diag), as_tensor(B)
    if np.any(np.asarray(as_tensor(delta).data) <= 0):
        raise ContractError("step size delta must be positive")
    return ad.exp(A_diag * delta), B * delta


def ssm_scan_recurrent(p: SSMParams, x_seq, method: str = "sequential") -> Tensor:
    """Evaluate the recurrence step by step from ``h_0 = 0``; returns (L, d_out)."""
    x = as_tensor(x_seq)
    m = p.m
    if x.ndim != 2 or p.B.shape != (m, x.shape[1]) or p.C.shape[1] != m:
        raise DimensionError(
            f"ssm extents: x {x.shape}, A {p.A_diag.shape}, B {p.B.shape}, C {p.C.shape}"
        )
    if p.D.shape != (x.shape[1],) or p.C.shape[0] != x.shape[1]:
        raise DimensionError(f"skip term needs d_in == d_out; D {p.D.shape}, C {p.C.shape}")
    A_bar, B_bar = discretize(p.A_diag, p.B, p.delta)
    drive = ad.matmul(x, B_bar.T)
    decay = A_bar * np.ones((x.shape[0], 1))
    h = ad.linear_recurrence(decay, drive, axis=0, method=method)
    return ad.matmul(h, as_tensor(p.C).T) + x * p.D


def ssm_conv_kernel(A_bar, B_bar, C, L: int) -> np.ndarray:
    """Taps ``K[k] = C diag(A_bar**k) B_bar`` for k < L, shape (L, d_out, d_in)."""
    A_bar = np.asarray(as_tensor(A_bar).data)
    B_bar = np.asarray(as_tensor(B_bar).data)
    C = np.asarray(as_tensor(C).data)
    if A_bar.ndim != 1:
        raise ContractError("kernel form needs time-invariant parameters (A_bar must be 1-D)")
    K = np.empty((L, C.shape[0], B_bar.shape[1]))
    power = np.ones_like(A_bar)
    for k in range(L):
        K[k] = (C * power) @ B_bar
        power = power * A_bar
    return K


def ssm_conv_apply(K: np.ndarray, x_seq, D) -> np.ndarray:
    """Causal convolution ``y_t = sum_k K[k] x_{t-k} + D * x_t``."""
    x = np.asarray(as_tensor(x_seq).data)
    L = x.shape[0]
    y = np.zeros((L, K.shape[1]))
    for t in range(L):
        for k in range(t + 1):
            y[t] += K[k] @ x[t - k]
    return y + x * np.asarray(as_tensor(D).data)


def selective_scan(u, delta, A, B, C, D, method: str = "sequential") -> Tensor:
    """Input-dependent scan over the time axis (-2).

    ``u``, ``delta``: (..., L, d); ``A``: (d, m); ``B``, ``C``: (..., L, m);
    ``D``: (d,).  Each channel ``c`` carries its own m-dimensional state::

        h_t = exp(delta_t[c] A[c]) h_{t-1} + delta_t[c] u_t[c] B_t
        y_t[c] = <C_t, h_t> + D[c] u_t[c]
    """
    u, delta, B, C = as_tensor(u), as_tensor(delta), as_tensor(B), as_tensor(C)
    lead = u.shape
    m = A.shape[-1]
    d4 = lead + (1,)
    dA = ad.exp(delta.reshape(d4) * A)
    dBu = (delta * u).reshape(d4) * B.reshape(B.shape[:-1] + (1, m))
    h = ad.linear_recurrence(dA, dBu, axis=-3, method=method)
    y = (h * C.reshape(C.shape[:-1] + (1, m))).sum(axis=-1)
    return y + u * D


class MambaBlock(Module):
    """Selective SSM block mapping (..., L, d_model) to the same shape.

    Pipeline: input projection to two ``expand * d_model`` branches; the main
    branch runs a causal depthwise convolution and SiLU, then the selective
    scan; the other branch gates the result through SiLU; a linear map
    returns to ``d_model``.
    """

    def __init__(
        self,
        d_model: int,
        d_state: int = 16,
        d_conv: int = 4,
        rng: np.random.Generator | None = None,
        expand: int = 2,
        scan_method: str = "sequential",
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        if d_conv < 1:
            raise ConfigurationError(f"d_conv must be >= 1, got {d_conv}")
        if d_state < 1 or d_model < 1:
            raise ConfigurationError("d_model and d_state must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model = d_model
        self.d_state = d_state
        self.d_conv = d_conv
        self.d_inner = d_inner = expand * d_model
        self.scan_method = scan_method

        self.in_proj = Linear(d_model, 2 * d_inner, rng, bias=False, name="in_proj")
        bound = 1.0 / np.sqrt(d_conv)
        self.conv_weight = Parameter(rng.uniform(-bound, bound, (d_conv, d_inner)), "conv.weight")
        self.conv_bias = Parameter(rng.uniform(-bound, bound, d_inner), "conv.bias")
        self.proj_B = Linear(d_inner, d_state, rng, bias=False, name="proj_B")
        self.proj_C = Linear(d_inner, d_state, rng, bias=False, name="proj_C")
        self.proj_delta = Linear(d_inner, d_inner, rng, name="proj_delta")
        # softplus(bias) starts log-uniform in [dt_min, dt_max]
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), d_inner))
        self.proj_delta.bias.data[...] = dt + np.log(-np.expm1(-dt))
        self.proj_delta.weight.data *= 0.1
        # A_n = -(n + 1) per channel, stored as log(-A) to stay negative
        self.A_log = Parameter(np.tile(np.log(np.arange(1, d_state + 1, dtype=float)), (d_inner, 1)), "A_log")
        self.D = Parameter(np.ones(d_inner), "D")
        self.out_proj = Linear(d_inner, d_model, rng, name="out_proj")

    def A(self) -> Tensor:
        return -ad.exp(self.A_log)

    def causal_conv(self, x: Tensor) -> Tensor:
        L = x.shape[-2]
        K = self.d_conv
        if K > 1:
            pad = np.zeros(x.shape[:-2] + (K - 1, x.shape[-1]))
            x = ad.concat([Tensor(pad), x], axis=-2)
        out = None
        for k in range(K):
            term = x[..., k : k + L, :] * self.conv_weight[k]
            out = term if out is None else out + term
        return out + self.conv_bias

    def selective_inputs(self, x):
        """Intermediates of the main branch: (x_hat, delta, B, C, gate_input)."""
        x = as_tensor(x)
        if x.shape[-1] != self.d_model:
            raise DimensionError(f"expected last extent {self.d_model}, got {x.shape}")
        xz = self.in_proj(x)
        xs = xz[..., : self.d_inner]
        z = xz[..., self.d_inner :]
        x_hat = ad.silu(self.causal_conv(xs))
        delta = ad.softplus(self.proj_delta(x_hat))
        return x_hat, delta, self.proj_B(x_hat), self.proj_C(x_hat), z

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim < 2 or x.shape[-2] < 1:
            raise DimensionError(f"expected (..., L, d_model) with L >= 1, got {x.shape}")
        x_hat, delta, B, C, z = self.selective_inputs(x)
        y = selective_scan(x_hat, delta, self.A(), B, C, self.D, self.scan_method)
        return self.out_proj(y * ad.silu(z))


def mamba_block_forward(block: MambaBlock, x_seq) -> Tensor:
    return block(x_seq)


def hidden_attention(block: MambaBlock, x_seq, per_channel: bool = False) -> np.ndarray:
    """Implicit attention of the selective scan, shape (L, L).

    ``alpha[c, i, j] = sum_n C_i[n] exp(A[c, n] sum_{k=j+1..i} delta_k[c]) delta_j[c] B_j[n]``
    for ``j <= i`` and zero above the diagonal.  The result is the mean of
    ``|alpha|`` over channels ``c``; extra leading axes of ``x_seq`` (e.g.
    nodes) are averaged too.
    """
    x = as_tensor(x_seq)
    with ad.no_grad():
        x_hat, delta, B, C, _ = block.selective_inputs(x)
    A = -np.exp(block.A_log.data)
    dl, Bd, Cd = delta.data, B.data, C.data
    L = x.shape[-2]
    lead = dl.shape[:-2]
    dl = dl.reshape((-1, L, dl.shape[-1]))
    Bd = Bd.reshape((-1, L, Bd.shape[-1]))
    Cd = Cd.reshape((-1, L, Cd.shape[-1]))
    causal = np.tril(np.ones((L, L), dtype=bool))
    mats = []
    for dseq, bseq, cseq in zip(dl, Bd, Cd):
        cum = np.cumsum(dseq, axis=0)  # (L, D)
        span = cum[:, None, :] - cum[None, :, :]  # sum_{k=j+1..i} delta_k, (i, j, D)
        span = np.where(causal[:, :, None], span, 0.0)
        decay = np.exp(span[..., None] * A)  # (i, j, D, m)
        key = dseq[:, :, None] * bseq[:, None, :]  # (j, D, m)
        alpha = np.einsum("in,ijdn,jdn->dij", cseq, decay, key)
        alpha = np.where(causal[None], alpha, 0.0)
        mats.append(alpha)
    stacked = np.stack(mats).reshape(lead + mats[0].shape)
    if per_channel:
        return stacked
    agg = np.abs(stacked).mean(axis=-3)
    return agg.reshape((-1, L, L)).mean(axis=0)
