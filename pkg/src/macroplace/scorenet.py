"""Noise-prediction network over netlists, with its training loop.

The network predicts the forward-process noise for every module given the
noisy coordinates, the timestep, the netlist structure, and a relative-energy
conditioning value. Structure enters through message passing over the
star-expanded hypergraph (modules <-> nets through pins, pin offsets as edge
features); coordinates, time, and energy embeddings fuse into per-module
tokens refined by self-attention blocks. Everything runs on the package's own
reverse-mode autodiff, so parameter gradients are checkable against finite
differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat, zero_grads
from .diffusion import make_schedule, training_target
from .errors import NumericError, ValidationError
from .netlist import ModuleKind, Netlist

MODULE_FEATURES = 7  # width, height, kind one-hot (3), mean pin offset (2)
NET_FEATURES = 3  # log1p(degree), mean |dx|, mean |dy|
CHECKPOINT_MAGIC = b"MPCK\x01"


@dataclass(frozen=True)
class ScoreNetConfig:
    width: int = 64
    gnn_layers: int = 3
    attn_layers: int = 2
    heads: int = 4
    time_freqs: int = 16

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValidationError("width must be divisible by head count")


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults follow the training recipe
    (Adam, cosine-annealed learning rate, clipped gradients, EMA shadow)."""

    steps: int = 1000
    batch_size: int = 32
    lr: float = 3e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    ema_decay: float = 0.9999
    p_uncond: float = 0.1
    T: int = 1000
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        for name in ("steps", "batch_size", "lr", "lr_min", "T"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"TrainConfig.{name} must be positive")


class ScoreNetParams:
    """Live weights, their EMA shadow, and the architecture config.

    ``train_T`` and ``train_schedule`` record the noise schedule the weights
    were trained against so samplers can rebuild it from a checkpoint.
    """

    def __init__(
        self,
        config: ScoreNetConfig,
        tensors: dict[str, Tensor],
        step: int = 0,
        train_T: int = 1000,
        train_schedule: str = "cosine",
    ):
        self.config = config
        self.tensors = tensors
        self.ema = {k: t.value.copy() for k, t in tensors.items()}
        self.step = step
        self.train_T = train_T
        self.train_schedule = train_schedule

    def copy(self) -> "ScoreNetParams":
        dup = ScoreNetParams(
            self.config,
            {k: Tensor(t.value.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()},
            step=self.step,
            train_T=self.train_T,
            train_schedule=self.train_schedule,
        )
        dup.ema = {k: v.copy() for k, v in self.ema.items()}
        return dup

    def all_zero(self) -> bool:
        return all(not np.any(t.value) for t in self.tensors.values())

    def with_ema_weights(self) -> "ScoreNetParams":
        dup = self.copy()
        for k, t in dup.tensors.items():
            t.value = self.ema[k].copy()
        return dup


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ScoreNetConfig = ScoreNetConfig(), seed: int = 0) -> ScoreNetParams:
    rng = np.random.default_rng(seed)
    d = config.width
    dh = d // config.heads
    t: dict[str, np.ndarray] = {}
    t["node_in.w"] = _glorot(rng, MODULE_FEATURES, d)
    t["node_in.b"] = np.zeros(d)
    t["net_in.w"] = _glorot(rng, NET_FEATURES, d)
    t["net_in.b"] = np.zeros(d)
    for l in range(config.gnn_layers):
        t[f"gnn{l}.msg_ve.w"] = _glorot(rng, d + 2, d)
        t[f"gnn{l}.msg_ve.b"] = np.zeros(d)
        t[f"gnn{l}.upd_e.w"] = _glorot(rng, 2 * d, d)
        t[f"gnn{l}.upd_e.b"] = np.zeros(d)
        t[f"gnn{l}.msg_ev.w"] = _glorot(rng, d + 2, d)
        t[f"gnn{l}.msg_ev.b"] = np.zeros(d)
        t[f"gnn{l}.upd_v.w"] = _glorot(rng, 2 * d, d)
        t[f"gnn{l}.upd_v.b"] = np.zeros(d)
    t["time.w"] = _glorot(rng, 2 * config.time_freqs, d)
    t["time.b"] = np.zeros(d)
    t["energy.w"] = _glorot(rng, 2, d)
    t["energy.b"] = np.zeros(d)
    t["energy.null"] = rng.normal(0.0, 0.1, size=d)
    t["x_in.w"] = _glorot(rng, 2, d)
    t["x_in.b"] = np.zeros(d)
    for a in range(config.attn_layers):
        for h in range(config.heads):
            t[f"attn{a}.q{h}.w"] = _glorot(rng, d, dh)
            t[f"attn{a}.k{h}.w"] = _glorot(rng, d, dh)
            t[f"attn{a}.v{h}.w"] = _glorot(rng, d, dh)
        t[f"attn{a}.out.w"] = _glorot(rng, d, d)
        t[f"attn{a}.out.b"] = np.zeros(d)
        t[f"attn{a}.ln1.g"] = np.ones(d)
        t[f"attn{a}.ln1.b"] = np.zeros(d)
        t[f"attn{a}.ln2.g"] = np.ones(d)
        t[f"attn{a}.ln2.b"] = np.zeros(d)
        t[f"attn{a}.mlp.w1"] = _glorot(rng, d, 4 * d)
        t[f"attn{a}.mlp.b1"] = np.zeros(4 * d)
        t[f"attn{a}.mlp.w2"] = _glorot(rng, 4 * d, d)
        t[f"attn{a}.mlp.b2"] = np.zeros(d)
    t["final.ln.g"] = np.ones(d)
    t["final.ln.b"] = np.zeros(d)
    t["head.w"] = _glorot(rng, d, 2)
    t["head.b"] = np.zeros(2)
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in t.items()}
    return ScoreNetParams(config, tensors)


# ---------------------------------------------------------------------------
# Netlist graph cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphCache:
    """Constant matrices for one netlist's star-expanded message passing."""

    n_modules: int
    n_nets: int
    mod_features: np.ndarray  # (N, MODULE_FEATURES)
    net_features: np.ndarray  # (M, NET_FEATURES)
    pin_from_mod: np.ndarray  # (P, N) 0/1 gather
    net_from_pin: np.ndarray  # (M, P) mean-aggregate
    pin_from_net: np.ndarray  # (P, M) 0/1 gather
    mod_from_pin: np.ndarray  # (N, P) mean-aggregate
    pin_off: np.ndarray  # (P, 2)


_KIND_SLOT = {ModuleKind.MACRO: 0, ModuleKind.STANDARD_CELL: 1, ModuleKind.IO_PAD: 2}


def build_graph(netlist: Netlist) -> GraphCache:
    n, m = netlist.n_modules, netlist.n_nets
    feats = np.zeros((n, MODULE_FEATURES))
    for i, mod in enumerate(netlist.modules):
        feats[i, 0] = mod.width
        feats[i, 1] = mod.height
        feats[i, 2 + _KIND_SLOT[mod.kind]] = 1.0
        if mod.pins:
            feats[i, 5] = float(np.mean([p.dx for p in mod.pins]))
            feats[i, 6] = float(np.mean([p.dy for p in mod.pins]))
    pin_mod = netlist.pin_module
    pin_off = netlist.pin_offset
    p = pin_mod.size
    pin_net = np.repeat(np.arange(m), np.diff(netlist.net_start))
    nfeats = np.zeros((m, NET_FEATURES))
    pin_from_mod = np.zeros((p, n))
    net_from_pin = np.zeros((m, p))
    pin_from_net = np.zeros((p, m))
    mod_from_pin = np.zeros((n, p))
    if p:
        rows = np.arange(p)
        pin_from_mod[rows, pin_mod] = 1.0
        pin_from_net[rows, pin_net] = 1.0
        deg = np.bincount(pin_net, minlength=m).astype(np.float64)
        net_from_pin[pin_net, rows] = 1.0 / deg[pin_net]
        fan = np.bincount(pin_mod, minlength=n).astype(np.float64)
        mod_from_pin[pin_mod, rows] = 1.0 / fan[pin_mod]
        nfeats[:, 0] = np.log1p(deg)
        nfeats[:, 1] = net_from_pin @ np.abs(pin_off[:, 0])
        nfeats[:, 2] = net_from_pin @ np.abs(pin_off[:, 1])
    return GraphCache(
        n_modules=n,
        n_nets=m,
        mod_features=feats,
        net_features=nfeats,
        pin_from_mod=pin_from_mod,
        net_from_pin=net_from_pin,
        pin_from_net=pin_from_net,
        mod_from_pin=mod_from_pin,
        pin_off=pin_off,
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _layer_norm(z: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    mu = z.mean(axis=-1, keepdims=True)
    centered = z - mu
    var = centered.pow(2.0).mean(axis=-1, keepdims=True)
    return centered / (var + 1e-5).sqrt() * gamma + beta


def encode_netlist(params: ScoreNetParams, graph: GraphCache | Netlist) -> Tensor:
    """Per-module structure embeddings after the message-passing rounds.

    With zero rounds the embedding is a pure projection of local features;
    each round lets net neighborhoods reshape the embedding, so a module's
    vector responds to its neighbors' geometry.
    """
    if isinstance(graph, Netlist):
        graph = build_graph(graph)
    t = params.tensors
    h_v = Tensor(graph.mod_features) @ t["node_in.w"] + t["node_in.b"]
    h_e = Tensor(graph.net_features) @ t["net_in.w"] + t["net_in.b"]
    off = Tensor(graph.pin_off)
    for l in range(params.config.gnn_layers):
        pin_h = Tensor(graph.pin_from_mod) @ h_v
        msg = (concat([pin_h, off], axis=1) @ t[f"gnn{l}.msg_ve.w"] + t[f"gnn{l}.msg_ve.b"]).silu()
        m_e = Tensor(graph.net_from_pin) @ msg
        h_e = h_e + (concat([h_e, m_e], axis=1) @ t[f"gnn{l}.upd_e.w"] + t[f"gnn{l}.upd_e.b"]).silu()
        pin_e = Tensor(graph.pin_from_net) @ h_e
        msg2 = (concat([pin_e, off], axis=1) @ t[f"gnn{l}.msg_ev.w"] + t[f"gnn{l}.msg_ev.b"]).silu()
        m_v = Tensor(graph.mod_from_pin) @ msg2
        h_v = h_v + (concat([h_v, m_v], axis=1) @ t[f"gnn{l}.upd_v.w"] + t[f"gnn{l}.upd_v.b"]).silu()
    return h_v


def time_embed(params: ScoreNetParams, t_step: int, T: int) -> Tensor:
    """Sinusoidal features of t/T through a learned projection."""
    if not (0 <= t_step <= T):
        raise ValidationError(f"timestep {t_step} outside [0, {T}]")
    k = params.config.time_freqs
    # The fastest frequency scales with the schedule length but stays well
    # below it: adjacent timesteps keep a small phase step, so neighboring
    # embeddings stay strongly correlated while distant ones separate.
    freqs = np.exp(np.linspace(0.0, math.log(max(4.0, T / 4.0)), k))
    phase = (t_step / T) * freqs
    feats = np.concatenate([np.sin(phase), np.cos(phase)]).reshape(1, -1)
    return Tensor(feats) @ params.tensors["time.w"] + params.tensors["time.b"]


def energy_embed(params: ScoreNetParams, e_rel: float | None) -> Tensor:
    """Project [e_rel, log e_rel]; None selects the learned null token used
    for unconditional passes in classifier-free guidance."""
    if e_rel is None:
        return params.tensors["energy.null"]
    if not (0.0 < e_rel <= 1.0):
        raise ValidationError(f"e_rel must lie in (0, 1], got {e_rel}")
    feats = np.array([[e_rel, math.log(e_rel)]])
    return Tensor(feats) @ params.tensors["energy.w"] + params.tensors["energy.b"]


def score_forward(
    params: ScoreNetParams,
    x_t: np.ndarray,
    t_step: int,
    netlist_embedding: Tensor,
    e_rel: float | None,
    T: int,
) -> Tensor:
    """Predict per-module noise, shape (N, 2).

    ``netlist_embedding`` is the output of :func:`encode_netlist`; callers
    sampling many steps should encode once and reuse it.
    """
    t = params.tensors
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 2 or x_t.shape[1] != 2:
        raise ValidationError(f"x_t must be (N, 2), got {x_t.shape}")
    if x_t.shape[0] != netlist_embedding.shape[0]:
        raise ValidationError("x_t and netlist embedding disagree on module count")
    tok = (
        Tensor(x_t) @ t["x_in.w"]
        + t["x_in.b"]
        + netlist_embedding
        + time_embed(params, t_step, T)
        + energy_embed(params, e_rel)
    )
    dh = params.config.width // params.config.heads
    scale = 1.0 / math.sqrt(dh)
    for a in range(params.config.attn_layers):
        z = _layer_norm(tok, t[f"attn{a}.ln1.g"], t[f"attn{a}.ln1.b"])
        outs = []
        for h in range(params.config.heads):
            q = z @ t[f"attn{a}.q{h}.w"]
            k = z @ t[f"attn{a}.k{h}.w"]
            v = z @ t[f"attn{a}.v{h}.w"]
            att = ((q @ k.T) * scale).softmax(axis=-1)
            outs.append(att @ v)
        tok = tok + (concat(outs, axis=1) @ t[f"attn{a}.out.w"] + t[f"attn{a}.out.b"])
        z2 = _layer_norm(tok, t[f"attn{a}.ln2.g"], t[f"attn{a}.ln2.b"])
        hidden = (z2 @ t[f"attn{a}.mlp.w1"] + t[f"attn{a}.mlp.b1"]).silu()
        tok = tok + (hidden @ t[f"attn{a}.mlp.w2"] + t[f"attn{a}.mlp.b2"])
    tok = _layer_norm(tok, t["final.ln.g"], t["final.ln.b"])
    return tok @ t["head.w"] + t["head.b"]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def cosine_lr(step: int, config: TrainConfig) -> float:
    """Cosine-annealed learning rate; exactly config.lr at step 0."""
    if config.steps <= 1:
        return config.lr
    frac = min(step / (config.steps - 1), 1.0)
    return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + math.cos(math.pi * frac))


def ema_update(params: ScoreNetParams, decay: float) -> ScoreNetParams:
    """shadow <- decay * shadow + (1 - decay) * live."""
    if not (0.0 <= decay <= 1.0):
        raise ValidationError(f"EMA decay must lie in [0, 1], got {decay}")
    for k, t in params.tensors.items():
        params.ema[k] = decay * params.ema[k] + (1.0 - decay) * t.value
    return params


def grad_global_norm(params: ScoreNetParams) -> float:
    total = 0.0
    for t in params.tensors.values():
        if t.grad is not None:
            total += float(np.sum(t.grad**2))
    return math.sqrt(total)


def train(
    params: ScoreNetParams,
    dataset: list[tuple[Netlist, "object", float]],
    config: TrainConfig,
) -> tuple[ScoreNetParams, list[tuple[int, float]]]:
    """Denoising-loss training with Adam, cosine annealing, clipping, and EMA.

    Dataset entries are (netlist, placement, e_rel). Conditioning is dropped
    (null token) for a whole batch with probability ``p_uncond`` so the model
    also learns the unconditional noise field needed for guidance. Returns the
    trained params and the per-step loss curve.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    schedule = make_schedule(config.schedule, config.T)
    params.train_T = config.T
    params.train_schedule = config.schedule
    graphs: dict[int, GraphCache] = {}
    adam_m = {k: np.zeros_like(t.value) for k, t in params.tensors.items()}
    adam_v = {k: np.zeros_like(t.value) for k, t in params.tensors.items()}
    curve: list[tuple[int, float]] = []
    for local_step in range(config.steps):
        step = params.step
        lr = cosine_lr(local_step, config)
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        drop_cond = rng.random() < config.p_uncond
        zero_grads(params.tensors.values())
        batch_loss = 0.0
        for i in idx:
            netlist, placement, e_rel = dataset[i]
            key = id(netlist)
            if key not in graphs:
                graphs[key] = build_graph(netlist)
            x_t, eps, t_step = training_target(placement.coords, None, schedule, rng)
            enc = encode_netlist(params, graphs[key])
            eps_hat = score_forward(
                params, x_t, t_step, enc, None if drop_cond else e_rel, config.T
            )
            loss = (eps_hat - Tensor(eps)).pow(2.0).mean()
            loss.backward()
            batch_loss += float(loss.value)
        batch_loss /= config.batch_size
        if not math.isfinite(batch_loss):
            raise NumericError(
                f"NaN/inf training loss at step {step}",
                report={"step": step, "lr": lr, "curve_tail": curve[-10:]},
            )
        norm = grad_global_norm(params) / config.batch_size
        clip_scale = 1.0 if norm <= config.grad_clip else config.grad_clip / norm
        for k, t in params.tensors.items():
            g = (t.grad / config.batch_size if t.grad is not None else np.zeros_like(t.value))
            g = g * clip_scale
            adam_m[k] = config.beta1 * adam_m[k] + (1.0 - config.beta1) * g
            adam_v[k] = config.beta2 * adam_v[k] + (1.0 - config.beta2) * g**2
            m_hat = adam_m[k] / (1.0 - config.beta1 ** (local_step + 1))
            v_hat = adam_v[k] / (1.0 - config.beta2 ** (local_step + 1))
            t.value = t.value - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        ema_update(params, config.ema_decay)
        params.step = step + 1
        curve.append((params.step, batch_loss))
    return params, curve


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ScoreNetParams, path: str) -> None:
    """Deterministic binary dump: magic, JSON manifest, raw float64 blocks."""
    names = sorted(params.tensors)
    manifest = {
        "version": 1,
        "config": asdict(params.config),
        "step": params.step,
        "train_T": params.train_T,
        "train_schedule": params.train_schedule,
        "arrays": [
            {"name": k, "shape": list(params.tensors[k].value.shape)} for k in names
        ],
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for k in names:
            fh.write(np.ascontiguousarray(params.tensors[k].value).tobytes())
        for k in names:
            fh.write(np.ascontiguousarray(params.ema[k]).tobytes())


def load_checkpoint(path: str) -> ScoreNetParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(size).decode())
        config = ScoreNetConfig(**manifest["config"])
        tensors: dict[str, Tensor] = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype=np.float64).reshape(shape)
            tensors[entry["name"]] = Tensor(data.copy(), requires_grad=True, name=entry["name"])
        params = ScoreNetParams(
            config,
            tensors,
            step=manifest["step"],
            train_T=manifest.get("train_T", 1000),
            train_schedule=manifest.get("train_schedule", "cosine"),
        )
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            params.ema[entry["name"]] = np.frombuffer(
                fh.read(8 * count), dtype=np.float64
            ).reshape(shape).copy()
    return params
