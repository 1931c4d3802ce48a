"""Minimal differentiable network substrate with exact analytic gradients.

The network is an affine+rectifier trunk over feature vectors with an
optional freezable per-feature standardization layer at the input, inverted
dropout before the heads, and one or two affine+softmax heads (event head
first, imitation/auxiliary head second).  All parameters live in a single
flat float64 vector with a deterministic layout, so checkpoints, SGD updates,
and finite-difference checks all speak the same representation.

Losses: cross-entropy on hard labels, a soft-target imitation loss in two
directions, their weighted "knowledge" combination, and a two-dataset
"data" combination over a shared trunk.  Every loss returns gradients with
respect to head pre-activations (already weighted and batch-scaled) which
``backward`` maps to parameter space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DROPOUT = 0.7
DEFAULT_LR = 0.01
DEFAULT_MOMENTUM = 0.9
NORM_EPS = 1e-5

SOFT_TARGET_AS_DISTRIBUTION = "target_as_distribution"
SOFT_TARGET_IN_LOG = "target_in_log"

_INIT_STREAM = 0


@dataclass(frozen=True)
class NormSpec:
    """Per-feature standardization; frozen uses stored stats, else batch stats."""

    freeze: bool = True
    eps: float = NORM_EPS


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    trunk: tuple[int, ...] = ()
    heads: tuple[int, ...] = (2,)
    dropout_rate: float = DEFAULT_DROPOUT
    norm: NormSpec | None = None

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        object.__setattr__(self, "trunk", tuple(int(w) for w in self.trunk))
        object.__setattr__(self, "heads", tuple(int(d) for d in self.heads))
        if any(w < 1 for w in self.trunk):
            raise ValueError("trunk widths must be >= 1")
        if not 1 <= len(self.heads) <= 2 or any(d < 1 for d in self.heads):
            raise ValueError("need 1 or 2 heads with dims >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def trunk_output_dim(self) -> int:
        return self.trunk[-1] if self.trunk else self.input_dim

    def layer_dims(self) -> list[tuple[str, int, int]]:
        """Deterministic (name, fan_in, fan_out) list defining the flat layout."""
        dims = []
        fan_in = self.input_dim
        for i, width in enumerate(self.trunk):
            dims.append((f"trunk{i}", fan_in, width))
            fan_in = width
        for h, out in enumerate(self.heads):
            dims.append((f"head{h}", self.trunk_output_dim, out))
        return dims


@dataclass
class ParamStore:
    """All learnable weights in one flat vector plus non-learnable norm stats.

    ``layout`` maps each weight/bias to its (offset, shape) slice of
    ``values``.  ``rng_seed`` records the seed used at initialization.
    """

    values: np.ndarray
    layout: list[tuple[str, int, tuple[int, ...]]]
    rng_seed: int
    norm_mean: np.ndarray | None = None
    norm_var: np.ndarray | None = None

    def view(self, name: str) -> np.ndarray:
        for entry_name, offset, shape in self.layout:
            if entry_name == name:
                size = int(np.prod(shape))
                return self.values[offset : offset + size].reshape(shape)
        raise KeyError(name)

    def slice_of(self, name: str) -> slice:
        for entry_name, offset, shape in self.layout:
            if entry_name == name:
                return slice(offset, offset + int(np.prod(shape)))
        raise KeyError(name)

    def copy(self) -> "ParamStore":
        return ParamStore(
            values=self.values.copy(),
            layout=list(self.layout),
            rng_seed=self.rng_seed,
            norm_mean=None if self.norm_mean is None else self.norm_mean.copy(),
            norm_var=None if self.norm_var is None else self.norm_var.copy(),
        )


@dataclass
class Checkpoint:
    """A network config with its trained (or initial) parameter store."""

    config: NetworkConfig
    params: ParamStore


def build_layout(config: NetworkConfig) -> list[tuple[str, int, tuple[int, ...]]]:
    layout = []
    offset = 0
    for name, fan_in, fan_out in config.layer_dims():
        layout.append((f"{name}.W", offset, (fan_in, fan_out)))
        offset += fan_in * fan_out
        layout.append((f"{name}.b", offset, (fan_out,)))
        offset += fan_out
    return layout


def param_count(config: NetworkConfig) -> int:
    layout = build_layout(config)
    name, offset, shape = layout[-1]
    return offset + int(np.prod(shape))


def init_params(config: NetworkConfig, seed: int) -> ParamStore:
    """Seeded uniform init: weights in +-1/sqrt(fan_in), biases zero.

    Draws follow layout order (trunk first, then heads in order), so the
    event head's initial values do not depend on whether a second head
    exists.
    """
    layout = build_layout(config)
    values = np.zeros(param_count(config))
    store = ParamStore(values=values, layout=layout, rng_seed=seed)
    rng = np.random.default_rng([seed, _INIT_STREAM])
    for name, fan_in, fan_out in config.layer_dims():
        limit = 1.0 / np.sqrt(fan_in)
        store.view(f"{name}.W")[:] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    if config.norm is not None:
        store.norm_mean = np.zeros(config.input_dim)
        store.norm_var = np.ones(config.input_dim)
    return store


def init_from_source(
    config: NetworkConfig, source: ParamStore, seed: int
) -> ParamStore:
    """Copy trunk weights (and norm stats) from a source store; re-init heads.

    The source must have a trunk of the same shape; its heads are ignored.
    """
    params = init_params(config, seed)
    rng = np.random.default_rng([seed, _INIT_STREAM])
    for name, fan_in, fan_out in config.layer_dims():
        if name.startswith("trunk"):
            src = source.view(f"{name}.W")
            if src.shape != (fan_in, fan_out):
                raise ValueError(
                    f"source {name}.W has shape {src.shape}, config wants "
                    f"{(fan_in, fan_out)}"
                )
            params.view(f"{name}.W")[:] = src
            params.view(f"{name}.b")[:] = source.view(f"{name}.b")
        else:
            limit = 1.0 / np.sqrt(fan_in)
            params.view(f"{name}.W")[:] = rng.uniform(
                -limit, limit, size=(fan_in, fan_out)
            )
            params.view(f"{name}.b")[:] = 0.0
    if config.norm is not None:
        if source.norm_mean is not None:
            params.norm_mean = source.norm_mean.copy()
            params.norm_var = source.norm_var.copy()
    return params


@dataclass
class ForwardCache:
    """Everything backward needs: activations, masks, and head outputs."""

    config: NetworkConfig
    params: ParamStore
    x: np.ndarray
    mode: str
    norm_out: np.ndarray | None
    norm_invstd: np.ndarray | None
    norm_xhat: np.ndarray | None
    norm_frozen: bool
    trunk_pre: list[np.ndarray]
    trunk_out: list[np.ndarray]
    dropout_mask: np.ndarray | None
    head_input: np.ndarray
    head_pre: list[np.ndarray]
    head_prob: list[np.ndarray]
    head_logprob: list[np.ndarray]

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]


def _softmax_with_log(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    return np.exp(logp), logp


def forward(
    config: NetworkConfig,
    params: ParamStore,
    x,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardCache:
    """Run the network on a batch; in train mode dropout needs an rng.

    Dropout uses inverted scaling so eval outputs need no rescale.  A frozen
    norm layer standardizes with the stored statistics; an unfrozen one uses
    the batch mean and (biased) variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match input_dim {config.input_dim}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    h = x
    norm_out = norm_invstd = norm_xhat = None
    norm_frozen = False
    if config.norm is not None:
        if config.norm.freeze:
            if params.norm_mean is None or params.norm_var is None:
                raise ValueError("frozen norm layer needs stored statistics")
            mean, var = params.norm_mean, params.norm_var
            norm_frozen = True
        else:
            mean = h.mean(axis=0)
            var = h.var(axis=0)
        norm_invstd = 1.0 / np.sqrt(var + config.norm.eps)
        norm_xhat = (h - mean) * norm_invstd
        norm_out = norm_xhat
        h = norm_out

    trunk_pre, trunk_out = [], []
    for i in range(len(config.trunk)):
        pre = h @ params.view(f"trunk{i}.W") + params.view(f"trunk{i}.b")
        h = np.maximum(pre, 0.0)
        trunk_pre.append(pre)
        trunk_out.append(h)

    dropout_mask = None
    if mode == "train" and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - config.dropout_rate
        dropout_mask = (rng.random(h.shape) >= config.dropout_rate) / keep
        h = h * dropout_mask

    head_pre, head_prob, head_logprob = [], [], []
    for hd in range(len(config.heads)):
        z = h @ params.view(f"head{hd}.W") + params.view(f"head{hd}.b")
        p, logp = _softmax_with_log(z)
        head_pre.append(z)
        head_prob.append(p)
        head_logprob.append(logp)

    return ForwardCache(
        config=config,
        params=params,
        x=x,
        mode=mode,
        norm_out=norm_out,
        norm_invstd=norm_invstd,
        norm_xhat=norm_xhat,
        norm_frozen=norm_frozen,
        trunk_pre=trunk_pre,
        trunk_out=trunk_out,
        dropout_mask=dropout_mask,
        head_input=h,
        head_pre=head_pre,
        head_prob=head_prob,
        head_logprob=head_logprob,
    )


def backward(
    config: NetworkConfig,
    params: ParamStore,
    cache: ForwardCache,
    head_grads: dict[int, np.ndarray],
) -> np.ndarray:
    """Map head pre-activation gradients to a flat parameter gradient.

    Heads absent from ``head_grads`` contribute nothing (their parameter
    gradients are zero).  The cache must come from the same params.
    """
    grad = np.zeros_like(params.values)
    d_head_in = np.zeros_like(cache.head_input)
    for hd, g in head_grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != cache.head_pre[hd].shape:
            raise ValueError(f"head {hd} gradient shape mismatch")
        grad[params.slice_of(f"head{hd}.W")] = (cache.head_input.T @ g).ravel()
        grad[params.slice_of(f"head{hd}.b")] = g.sum(axis=0)
        d_head_in += g @ params.view(f"head{hd}.W").T

    d_h = d_head_in
    if cache.dropout_mask is not None:
        d_h = d_h * cache.dropout_mask

    for i in reversed(range(len(config.trunk))):
        d_pre = d_h * (cache.trunk_pre[i] > 0.0)
        layer_in = cache.trunk_out[i - 1] if i > 0 else (
            cache.norm_out if cache.norm_out is not None else cache.x
        )
        grad[params.slice_of(f"trunk{i}.W")] = (layer_in.T @ d_pre).ravel()
        grad[params.slice_of(f"trunk{i}.b")] = d_pre.sum(axis=0)
        d_h = d_pre @ params.view(f"trunk{i}.W").T

    if config.norm is not None and not cache.norm_frozen:
        # standardization with batch statistics: full backward through
        # the batch mean/variance (no learnable scale/shift)
        b = cache.batch_size
        dxhat = d_h
        xhat = cache.norm_xhat
        d_h = (cache.norm_invstd / b) * (
            b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
    return grad


def _one_hot(labels: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((labels.size, dim))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy_loss(
    cache: ForwardCache, labels, head: int = 0
) -> tuple[float, np.ndarray]:
    """Batch-mean negative log-likelihood of the labels under a softmax head.

    Returns the loss and its gradient w.r.t. the head pre-activations,
    ``(p - onehot) / batch``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    dim = cache.config.heads[head]
    if labels.min() < 0 or labels.max() >= dim:
        raise ValueError(f"label out of range for head {head} with {dim} classes")
    b = cache.batch_size
    if labels.size != b:
        raise ValueError("one label per batch row required")
    logp = cache.head_logprob[head]
    loss = -float(logp[np.arange(b), labels].mean())
    grad = (cache.head_prob[head] - _one_hot(labels, dim)) / b
    return loss, grad


def soft_target_loss(
    cache: ForwardCache,
    targets,
    direction: str = SOFT_TARGET_AS_DISTRIBUTION,
    head: int = 1,
) -> tuple[float, np.ndarray]:
    """Imitation loss between a softmax head q and frozen teacher rows f.

    Default direction treats f as the target distribution, -sum f log q,
    which reduces to cross-entropy when f is one-hot.  ``target_in_log``
    evaluates -sum q log f (f clamped below at 1e-12); gradients flow
    through q only in both directions.
    """
    f = np.asarray(targets, dtype=np.float64)
    q = cache.head_prob[head]
    if f.shape != q.shape:
        raise ValueError(f"target shape {f.shape} vs head output {q.shape}")
    if np.any(f < 0) or np.any(np.abs(f.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("target row off simplex")
    b = cache.batch_size
    if direction == SOFT_TARGET_AS_DISTRIBUTION:
        logq = cache.head_logprob[head]
        loss = -float((f * logq).sum(axis=1).mean())
        grad = (q - f) / b
    elif direction == SOFT_TARGET_IN_LOG:
        logf = np.log(np.maximum(f, 1e-12))
        loss = -float((q * logf).sum(axis=1).mean())
        grad = q * ((q * logf).sum(axis=1, keepdims=True) - logf) / b
    else:
        raise ValueError(f"unknown soft loss direction {direction!r}")
    return loss, grad


def knowledge_loss(
    cache: ForwardCache,
    labels,
    targets,
    alpha: float,
    direction: str = SOFT_TARGET_AS_DISTRIBUTION,
) -> tuple[float, dict[int, np.ndarray]]:
    """Event cross-entropy plus alpha times the imitation loss on head 1.

    With alpha == 0 the soft term is skipped entirely so the result is
    bitwise the pure event loss.  The alpha weight is folded into the
    returned head-1 gradient.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    ce, g_event = cross_entropy_loss(cache, labels, head=0)
    if alpha == 0.0:
        return ce, {0: g_event}
    if len(cache.config.heads) < 2:
        raise ValueError("knowledge loss needs an imitation head")
    soft, g_soft = soft_target_loss(cache, targets, direction=direction, head=1)
    return ce + alpha * soft, {0: g_event, 1: alpha * g_soft}


def data_loss(
    event_cache: ForwardCache,
    event_labels,
    aux_cache: ForwardCache | None,
    aux_labels,
    beta: float,
) -> tuple[float, dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Event cross-entropy plus beta times auxiliary cross-entropy on head 1.

    The two caches must share trunk parameters (weight sharing); each branch
    returns gradients for its own head only, with beta folded into the
    auxiliary gradient.  With beta == 0 the auxiliary branch is skipped and
    ``aux_cache`` may be None.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    ce_event, g_event = cross_entropy_loss(event_cache, event_labels, head=0)
    if beta == 0.0 or aux_cache is None:
        if beta != 0.0:
            raise ValueError("beta > 0 requires an auxiliary cache")
        return ce_event, {0: g_event}, {}
    if len(event_cache.config.heads) < 2:
        raise ValueError("data loss needs an auxiliary head")
    for name, _, _ in event_cache.params.layout:
        if name.startswith("trunk") and not np.array_equal(
            event_cache.params.view(name), aux_cache.params.view(name)
        ):
            raise ValueError("heads not sharing trunk")
    ce_aux, g_aux = cross_entropy_loss(aux_cache, aux_labels, head=1)
    return ce_event + beta * ce_aux, {0: g_event}, {1: beta * g_aux}


def sgd_momentum_step(
    params: ParamStore,
    gradient: np.ndarray,
    velocity: np.ndarray,
    lr: float = DEFAULT_LR,
    momentum: float = DEFAULT_MOMENTUM,
) -> tuple[ParamStore, np.ndarray]:
    """Classic momentum update in place: v <- m*v - lr*g; params <- params + v."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.values.shape or velocity.shape != params.values.shape:
        raise ValueError("gradient/velocity shape mismatch")
    if not np.all(np.isfinite(gradient)):
        raise ValueError("divergence: non-finite gradient")
    velocity *= momentum
    velocity -= lr * gradient
    params.values += velocity
    return params, velocity


def grad_check(
    config: NetworkConfig,
    params: ParamStore,
    loss_fn,
    epsilon: float = 1e-5,
    sample_size: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    ``loss_fn(params) -> (loss, flat_grad)`` must be deterministic (run
    dropout-free or with a fixed mask).  Checks every parameter, or a random
    subset of ``sample_size`` for larger nets.
    """
    loss0, analytic = loss_fn(params)
    n = params.values.size
    if n <= sample_size:
        indices = np.arange(n)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        indices = rng.choice(n, size=sample_size, replace=False)
    worst = 0.0
    for i in indices:
        orig = params.values[i]
        params.values[i] = orig + epsilon
        loss_plus, _ = loss_fn(params)
        params.values[i] = orig - epsilon
        loss_minus, _ = loss_fn(params)
        params.values[i] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        denom = max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
