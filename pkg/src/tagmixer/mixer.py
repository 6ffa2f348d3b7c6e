"""The user-preference sequence model: an all-MLP mixer stack.

Each layer applies three residual sublayers to the paired document and
tag history streams (both u x d_h):

  * sequence mix  - one shared MLP over the u-length column of every
    feature dimension (captures order along the history),
  * channel mix   - one shared MLP over the d_h-length row at every
    sequence position (captures intra-embedding correlations),
  * fusion mix    - one shared MLP over the 2-vector pairing the two
    streams' values at each (position, feature) cell.

All sublayers are ``x + W2 g(W1 LayerNorm(x))`` with the normalization
taken over the axis the MLP acts on.  Forward and backward passes are
written by hand in numpy; internal helpers carry a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError
from .validation import check_choice, check_positive, check_shape

LN_EPS = 1e-5
STREAMS = ("doc", "tag")

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(x.dtype)


ACTIVATIONS = {"gelu": (gelu, gelu_grad), "relu": (relu, relu_grad)}


def _act_forward(name: str, x: np.ndarray):
    """Activation value plus the context its gradient can reuse.

    For GELU the erf-based CDF is the expensive part, so the forward
    pass caches it instead of recomputing it in the backward pass.
    """
    if name == "gelu":
        cdf = 0.5 * (1.0 + erf(x / _SQRT2))
        return x * cdf, cdf
    return np.maximum(x, 0.0), None


def _act_grad(name: str, x: np.ndarray, ctx) -> np.ndarray:
    if name == "gelu":
        return ctx + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return (x > 0).astype(x.dtype)


@dataclass(frozen=True)
class MixerConfig:
    """Shapes and knobs of the mixer stack.

    ``r_u`` / ``r_c`` default to twice the axis they expand (set to None
    to use the default); ``r_f`` is small because the fused axis has
    length 2.
    """

    u: int = 5
    d_h: int = 512
    n_layers: int = 2
    r_u: int | None = None
    r_c: int | None = None
    r_f: int = 8
    activation: str = "gelu"
    dropout_p: float = 0.1

    @property
    def seq_hidden(self) -> int:
        return self.r_u if self.r_u is not None else 2 * self.u

    @property
    def chan_hidden(self) -> int:
        return self.r_c if self.r_c is not None else 2 * self.d_h

    def validate(self) -> None:
        for name in ("u", "d_h", "n_layers", "seq_hidden", "chan_hidden", "r_f"):
            check_positive(name, getattr(self, name))
        check_choice("activation", self.activation, ACTIVATIONS)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                  dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_mixer_params(config: MixerConfig, rng: np.random.Generator,
                      dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh mixer parameters keyed ``mixer.<layer>.<sublayer>[.<stream>].<tensor>``."""
    config.validate()
    u, d, ru, rc, rf = config.u, config.d_h, config.seq_hidden, config.chan_hidden, config.r_f
    params: dict[str, np.ndarray] = {}
    for i in range(config.n_layers):
        for s in STREAMS:
            base = f"mixer.{i}.seq.{s}"
            params[f"{base}.w1"] = _uniform_init(rng, (ru, u), u, dtype)
            params[f"{base}.w2"] = _uniform_init(rng, (u, ru), ru, dtype)
            params[f"{base}.ln_gain"] = np.ones(u, dtype=dtype)
            params[f"{base}.ln_bias"] = np.zeros(u, dtype=dtype)
        for s in STREAMS:
            base = f"mixer.{i}.chan.{s}"
            params[f"{base}.w1"] = _uniform_init(rng, (rc, d), d, dtype)
            params[f"{base}.w2"] = _uniform_init(rng, (d, rc), rc, dtype)
            params[f"{base}.ln_gain"] = np.ones(d, dtype=dtype)
            params[f"{base}.ln_bias"] = np.zeros(d, dtype=dtype)
        base = f"mixer.{i}.fuse"
        params[f"{base}.w1"] = _uniform_init(rng, (rf, 2), 2, dtype)
        params[f"{base}.w2"] = _uniform_init(rng, (2, rf), rf, dtype)
        params[f"{base}.ln_gain"] = np.ones(2, dtype=dtype)
        params[f"{base}.ln_bias"] = np.zeros(2, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# Layer normalization
# ---------------------------------------------------------------------------

def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Normalize a vector to zero mean / unit population variance, then scale."""
    x = np.asarray(x)
    if x.shape != np.shape(gain) or x.shape != np.shape(bias):
        raise ConfigError("layer_norm: x, gain, bias must share one shape")
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def _ln_forward(x, gain_b, bias_b, axis):
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain_b + bias_b, (xhat, inv)


def _ln_backward(dout, cache, gain_b, axis, param_axes):
    xhat, inv = cache
    dgain = (dout * xhat).sum(axis=param_axes)
    dbias = dout.sum(axis=param_axes)
    dxhat = dout * gain_b
    m1 = dxhat.mean(axis=axis, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=axis, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def _dropout(x, p, rng, train_mode):
    if not train_mode or p <= 0.0:
        return x, None
    keep = 1.0 - p
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    mask = (rng.random(size=x.shape, dtype=draw_dtype) < keep).astype(x.dtype)
    mask /= np.asarray(keep, dtype=x.dtype)
    return x * mask, mask


# ---------------------------------------------------------------------------
# Sublayers (batched internals; leading axis B)
# ---------------------------------------------------------------------------

def _sublayer_params(params, prefix):
    return (params[f"{prefix}.w1"], params[f"{prefix}.w2"],
            params[f"{prefix}.ln_gain"], params[f"{prefix}.ln_bias"])


def _seq_forward(H, params, prefix, act, p=0.0, rng=None, train_mode=False):
    """Column MLP over the sequence axis: H is (B, u, d_h)."""
    w1, w2, gain, bias = _sublayer_params(params, prefix)
    xn, ln_cache = _ln_forward(H, gain[None, :, None], bias[None, :, None], axis=1)
    y = np.einsum("ru,bud->brd", w1, xn)
    a, actx = _act_forward(act, y)
    z = np.einsum("ur,brd->bud", w2, a)
    z, mask = _dropout(z, p, rng, train_mode)
    return H + z, (xn, ln_cache, y, a, actx, mask)


def _seq_backward(dout, cache, params, prefix, act):
    w1, w2, gain, _ = _sublayer_params(params, prefix)
    xn, ln_cache, y, a, actx, mask = cache
    dz = dout if mask is None else dout * mask
    da = np.einsum("ur,bud->brd", w2, dz)
    dw2 = np.einsum("bud,brd->ur", dz, a)
    dy = da * _act_grad(act, y, actx)
    dxn = np.einsum("ru,brd->bud", w1, dy)
    dw1 = np.einsum("brd,bud->ru", dy, xn)
    dx_ln, dgain, dbias = _ln_backward(dxn, ln_cache, gain[None, :, None],
                                       axis=1, param_axes=(0, 2))
    grads = {f"{prefix}.w1": dw1, f"{prefix}.w2": dw2,
             f"{prefix}.ln_gain": dgain, f"{prefix}.ln_bias": dbias}
    return dout + dx_ln, grads


def _chan_forward(H, params, prefix, act, p=0.0, rng=None, train_mode=False):
    """Row MLP over the feature axis: H is (B, u, d_h).

    The feature axis is the wide one, so the matmuls run on flattened
    (B*u, d) views to stay on the BLAS fast path.
    """
    w1, w2, gain, bias = _sublayer_params(params, prefix)
    xn, ln_cache = _ln_forward(H, gain[None, None, :], bias[None, None, :], axis=2)
    flat = xn.reshape(-1, xn.shape[2])
    y = (flat @ w1.T).reshape(xn.shape[0], xn.shape[1], -1)
    a, actx = _act_forward(act, y)
    z = (a.reshape(-1, a.shape[2]) @ w2.T).reshape(H.shape)
    z, mask = _dropout(z, p, rng, train_mode)
    return H + z, (xn, ln_cache, y, a, actx, mask)


def _chan_backward(dout, cache, params, prefix, act):
    w1, w2, gain, _ = _sublayer_params(params, prefix)
    xn, ln_cache, y, a, actx, mask = cache
    dz = dout if mask is None else dout * mask
    dz_flat = dz.reshape(-1, dz.shape[2])
    a_flat = a.reshape(-1, a.shape[2])
    da = (dz_flat @ w2).reshape(y.shape)
    dw2 = dz_flat.T @ a_flat
    dy = da * _act_grad(act, y, actx)
    dy_flat = dy.reshape(-1, dy.shape[2])
    dxn = (dy_flat @ w1).reshape(xn.shape)
    dw1 = dy_flat.T @ xn.reshape(-1, xn.shape[2])
    dx_ln, dgain, dbias = _ln_backward(dxn, ln_cache, gain[None, None, :],
                                       axis=2, param_axes=(0, 1))
    grads = {f"{prefix}.w1": dw1, f"{prefix}.w2": dw2,
             f"{prefix}.ln_gain": dgain, f"{prefix}.ln_bias": dbias}
    return dout + dx_ln, grads


def _fuse_forward(Hd, Ht, params, prefix, act, p=0.0, rng=None, train_mode=False):
    """Pairwise MLP over the cross-stream 2-vector at each (c, t) cell."""
    w1, w2, gain, bias = _sublayer_params(params, prefix)
    v = np.stack([Hd, Ht], axis=-1)  # (B, u, d_h, 2)
    vn, ln_cache = _ln_forward(v, gain[None, None, None, :], bias[None, None, None, :], axis=3)
    y = (vn.reshape(-1, 2) @ w1.T).reshape(v.shape[:3] + (w1.shape[0],))
    a, actx = _act_forward(act, y)
    z = (a.reshape(-1, a.shape[3]) @ w2.T).reshape(v.shape)
    z, mask = _dropout(z, p, rng, train_mode)
    out = v + z
    return out[..., 0], out[..., 1], (vn, ln_cache, y, a, actx, mask)


def _fuse_backward(d_doc, d_tag, cache, params, prefix, act):
    w1, w2, gain, _ = _sublayer_params(params, prefix)
    vn, ln_cache, y, a, actx, mask = cache
    dv = np.stack([d_doc, d_tag], axis=-1)
    dz = dv if mask is None else dv * mask
    dz_flat = dz.reshape(-1, 2)
    a_flat = a.reshape(-1, a.shape[3])
    da = (dz_flat @ w2).reshape(y.shape)
    dw2 = dz_flat.T @ a_flat
    dy = da * _act_grad(act, y, actx)
    dy_flat = dy.reshape(-1, dy.shape[3])
    dvn = (dy_flat @ w1).reshape(vn.shape)
    dw1 = dy_flat.T @ vn.reshape(-1, 2)
    dv_ln, dgain, dbias = _ln_backward(dvn, ln_cache, gain[None, None, None, :],
                                       axis=3, param_axes=(0, 1, 2))
    total = dv + dv_ln
    grads = {f"{prefix}.w1": dw1, f"{prefix}.w2": dw2,
             f"{prefix}.ln_gain": dgain, f"{prefix}.ln_bias": dbias}
    return total[..., 0], total[..., 1], grads


# ---------------------------------------------------------------------------
# Public single-matrix ops
# ---------------------------------------------------------------------------

def _single_params(w1, w2, gain, bias, prefix="op"):
    return {f"{prefix}.w1": w1, f"{prefix}.w2": w2,
            f"{prefix}.ln_gain": gain, f"{prefix}.ln_bias": bias}


def sequence_mix(H: np.ndarray, w1: np.ndarray, w2: np.ndarray, gain: np.ndarray,
                 bias: np.ndarray, activation: str = "gelu") -> np.ndarray:
    """Apply the shared column MLP to every feature dimension of a u x d_h matrix."""
    H = np.asarray(H)
    u = H.shape[0]
    check_shape("sequence_mix w1", w1, (w1.shape[0], u))
    check_shape("sequence_mix w2", w2, (u, w1.shape[0]))
    check_shape("sequence_mix gain", np.asarray(gain), (u,))
    check_choice("activation", activation, ACTIVATIONS)
    out, _ = _seq_forward(H[None], _single_params(w1, w2, gain, bias), "op", activation)
    return out[0]


def channel_mix(H: np.ndarray, w1: np.ndarray, w2: np.ndarray, gain: np.ndarray,
                bias: np.ndarray, activation: str = "gelu") -> np.ndarray:
    """Apply the shared row MLP to every sequence position of a u x d_h matrix."""
    H = np.asarray(H)
    d = H.shape[1]
    check_shape("channel_mix w1", w1, (w1.shape[0], d))
    check_shape("channel_mix w2", w2, (d, w1.shape[0]))
    check_shape("channel_mix gain", np.asarray(gain), (d,))
    check_choice("activation", activation, ACTIVATIONS)
    out, _ = _chan_forward(H[None], _single_params(w1, w2, gain, bias), "op", activation)
    return out[0]


def fusion_mix(H_doc: np.ndarray, H_tag: np.ndarray, w1: np.ndarray, w2: np.ndarray,
               gain: np.ndarray, bias: np.ndarray,
               activation: str = "gelu") -> tuple[np.ndarray, np.ndarray]:
    """Mix the two streams cell-by-cell through the shared 2-vector MLP."""
    H_doc = np.asarray(H_doc)
    H_tag = np.asarray(H_tag)
    if H_doc.shape != H_tag.shape:
        raise ConfigError(f"fusion_mix: stream shapes differ: {H_doc.shape} vs {H_tag.shape}")
    check_shape("fusion_mix w1", w1, (w1.shape[0], 2))
    check_shape("fusion_mix w2", w2, (2, w1.shape[0]))
    check_shape("fusion_mix gain", np.asarray(gain), (2,))
    check_choice("activation", activation, ACTIVATIONS)
    d, t, _ = _fuse_forward(H_doc[None], H_tag[None], _single_params(w1, w2, gain, bias),
                            "op", activation)
    return d[0], t[0]


# ---------------------------------------------------------------------------
# Full stack
# ---------------------------------------------------------------------------

def stack_forward(H_doc: np.ndarray, H_tag: np.ndarray, params: dict,
                  config: MixerConfig, train_mode: bool = False,
                  rng: np.random.Generator | None = None):
    """Run the n-layer stack on batched (B, u, d_h) stream pairs.

    Returns the two output streams plus the caches needed by
    :func:`stack_backward`.  In train mode, dropout masks are drawn from
    ``rng`` in a fixed sublayer order so a given seed reproduces a run.
    """
    if H_doc.shape != H_tag.shape:
        raise ConfigError(f"stack_forward: stream shapes differ: {H_doc.shape} vs {H_tag.shape}")
    if H_doc.shape[-2:] != (config.u, config.d_h):
        raise ConfigError(
            f"stack_forward: expected (..., {config.u}, {config.d_h}), got {H_doc.shape}"
        )
    if train_mode and config.dropout_p > 0.0 and rng is None:
        raise ConfigError("train-mode dropout requires an rng")
    act = config.activation
    p = config.dropout_p
    caches = []
    for i in range(config.n_layers):
        layer_cache = {}
        H_doc, layer_cache["seq.doc"] = _seq_forward(
            H_doc, params, f"mixer.{i}.seq.doc", act, p, rng, train_mode)
        H_tag, layer_cache["seq.tag"] = _seq_forward(
            H_tag, params, f"mixer.{i}.seq.tag", act, p, rng, train_mode)
        H_doc, layer_cache["chan.doc"] = _chan_forward(
            H_doc, params, f"mixer.{i}.chan.doc", act, p, rng, train_mode)
        H_tag, layer_cache["chan.tag"] = _chan_forward(
            H_tag, params, f"mixer.{i}.chan.tag", act, p, rng, train_mode)
        H_doc, H_tag, layer_cache["fuse"] = _fuse_forward(
            H_doc, H_tag, params, f"mixer.{i}.fuse", act, p, rng, train_mode)
        caches.append(layer_cache)
    return H_doc, H_tag, caches


def stack_backward(d_doc: np.ndarray, d_tag: np.ndarray, caches, params: dict,
                   config: MixerConfig):
    """Backpropagate through the stack; returns input grads and parameter grads."""
    act = config.activation
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(config.n_layers)):
        layer_cache = caches[i]
        d_doc, d_tag, g = _fuse_backward(
            d_doc, d_tag, layer_cache["fuse"], params, f"mixer.{i}.fuse", act)
        grads.update(g)
        d_tag, g = _chan_backward(d_tag, layer_cache["chan.tag"], params,
                                  f"mixer.{i}.chan.tag", act)
        grads.update(g)
        d_doc, g = _chan_backward(d_doc, layer_cache["chan.doc"], params,
                                  f"mixer.{i}.chan.doc", act)
        grads.update(g)
        d_tag, g = _seq_backward(d_tag, layer_cache["seq.tag"], params,
                                 f"mixer.{i}.seq.tag", act)
        grads.update(g)
        d_doc, g = _seq_backward(d_doc, layer_cache["seq.doc"], params,
                                 f"mixer.{i}.seq.doc", act)
        grads.update(g)
    return d_doc, d_tag, grads


def forward_stack(H_doc: np.ndarray, H_tag: np.ndarray, params: dict,
                  config: MixerConfig, train_mode: bool = False,
                  rng: np.random.Generator | None = None):
    """Stack forward for a single (u, d_h) pair or a batched (B, u, d_h) pair."""
    H_doc = np.asarray(H_doc)
    H_tag = np.asarray(H_tag)
    single = H_doc.ndim == 2
    if single:
        H_doc, H_tag = H_doc[None], H_tag[None]
    out_doc, out_tag, _ = stack_forward(H_doc, H_tag, params, config, train_mode, rng)
    if single:
        return out_doc[0], out_tag[0]
    return out_doc, out_tag


def zero_mixer_weights(params: dict) -> dict:
    """Copy of ``params`` with all non-residual mixer branch weights zeroed."""
    out = {}
    for name, value in params.items():
        if name.startswith("mixer.") and (name.endswith(".w1") or name.endswith(".w2")):
            out[name] = np.zeros_like(value)
        else:
            out[name] = value.copy()
    return out
