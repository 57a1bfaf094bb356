"""A small kernel-attention neural operator on mesh graphs.

Attention logits are ``theta1 * <phi_i, phi_j> + theta2`` and nothing else,
so predictions depend on the spectral embedding only through its inner
products. Gradients are derived by hand (reverse mode) and checked against
finite differences in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .errors import DivergenceError, ParameterError, ShapeError
from .meshgraph import build_graph, random_walk_matrix
from .spectral import DEFAULT_FILTER, FilterSpec, spectral_embed

CHECKPOINT_VERSION = "gist-mini-1"
N_FEATURES = 11  # position 3, normal 3, map point 5
N_OUTPUTS = 4  # p, taux, tauy, tauz
DENSE_ATTENTION_CAP = 2000


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    blocks: int = 3
    k: int = 16
    seed: int = 0
    in_dim: int = N_FEATURES
    out_dim: int = N_OUTPUTS
    filter: tuple = DEFAULT_FILTER
    r: int = 256
    embed_seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.k < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ParameterError("hidden width, k and layer dimensions must be >= 1")
        if self.blocks < 0:
            raise ParameterError("block count must be non-negative")
        if self.r < 1:
            raise ParameterError("embedding dimension must be >= 1")
        object.__setattr__(self, "filter", FilterSpec(tuple(self.filter)).coefficients)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-scoring statistics from the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def identity(cls, in_dim=N_FEATURES, out_dim=N_OUTPUTS):
        return cls(np.zeros(in_dim), np.ones(in_dim), np.zeros(out_dim), np.ones(out_dim))

    @classmethod
    def fit(cls, samples):
        X = np.vstack([s.features for s in samples])
        Y = np.vstack([s.targets for s in samples])

        def std(a):
            sd = a.std(axis=0)
            return np.where(sd > 1e-12 * (np.abs(a).max(axis=0) + 1e-300), sd, 1.0)

        return cls(X.mean(0), std(X), Y.mean(0), std(Y))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=float) for k in ("x_mean", "x_std", "y_mean", "y_std")))


@dataclass(eq=False)
class GistModel:
    config: ModelConfig
    params: dict
    norm: Normalizer = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.norm is None:
            self.norm = Normalizer.identity(self.config.in_dim, self.config.out_dim)

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def flat(self):
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def copy(self):
        return GistModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.norm, dict(self.meta))

    def with_params(self, params):
        return GistModel(self.config, params, self.norm, dict(self.meta))


def param_count(in_dim, hidden, blocks, out_dim=N_OUTPUTS):
    return in_dim * hidden + hidden + blocks * (hidden * hidden + hidden + 2) + hidden * out_dim + out_dim


def init_model(config=None, **kw):
    """Fan-in scaled Gaussian weights, zero biases, ``theta1 = 1``, ``theta2 = 0``."""
    if config is None:
        config = ModelConfig(**kw)
    elif kw:
        config = replace(config, **kw)
    rng = np.random.default_rng(config.seed)
    h = config.hidden

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)

    p = {"enc_w": dense(config.in_dim, h), "enc_b": np.zeros(h)}
    for b in range(config.blocks):
        p[f"blk{b}_w"] = dense(h, h)
        p[f"blk{b}_b"] = np.zeros(h)
        p[f"blk{b}_theta1"] = np.array(1.0)
        p[f"blk{b}_theta2"] = np.array(0.0)
    p["dec_w"] = dense(h, config.out_dim)
    p["dec_b"] = np.zeros(config.out_dim)
    return GistModel(config, p)


# ---------------------------------------------------------------------------
# samples and attention graphs


@dataclass(frozen=True, eq=False)
class FieldSample:
    mesh: object
    features: np.ndarray
    targets: np.ndarray = None
    map_vector: np.ndarray = None

    def __post_init__(self):
        n = self.mesh.n_vertices
        if self.features.shape[0] != n:
            raise ShapeError(f"features have {self.features.shape[0]} rows for {n} vertices")
        if self.targets is not None:
            if self.targets.shape[0] != n:
                raise ShapeError(f"targets have {self.targets.shape[0]} rows for {n} vertices")
            if not np.all(np.isfinite(self.targets)):
                raise ParameterError("targets must be finite")


def vertex_features(mesh, map_vector):
    mv = np.broadcast_to(np.asarray(map_vector, dtype=float), (mesh.n_vertices, 5))
    return np.hstack([mesh.vertices, mesh.vertex_normals(), mv])


def make_sample(mesh, map_vector, targets=None):
    mv = np.asarray(map_vector, dtype=float)
    t = None if targets is None else np.asarray(targets, dtype=float)
    return FieldSample(mesh, vertex_features(mesh, mv), t, mv)


@dataclass(frozen=True, eq=False)
class AttentionGraph:
    """Per-vertex neighbor lists (self first) and their kernel estimates."""

    neighbors: np.ndarray  # (N, m)
    kernel: np.ndarray  # (N, m)

    @property
    def n(self):
        return self.neighbors.shape[0]


def _candidates(graph, radius):
    a = graph.adjacency + sparse.identity(graph.n, format="csr")
    reach = sparse.identity(graph.n, format="csr")
    for _ in range(radius):
        reach = (reach @ a).tocsr()
        reach.data[:] = 1.0
    return reach


def build_attention_graph(emb, graph, k, dense=False):
    """Keep each vertex plus its ``k`` largest kernel estimates.

    Candidates are the vertices within ``2 * filter degree`` hops (the support
    of the exact kernel), widened until every vertex has ``k`` of them.
    ``dense`` considers all vertices and is limited to small meshes.
    """
    n = emb.n
    if graph.n != n:
        raise ShapeError(f"embedding has {n} rows, graph {graph.n} vertices")
    if k < 1:
        raise ParameterError("k must be >= 1")
    m = min(k + 1, n)
    if dense:
        if n > DENSE_ATTENTION_CAP:
            raise ParameterError(f"dense attention limited to N <= {DENSE_ATTENTION_CAP}")
        cand = sparse.csr_matrix(np.ones((n, n)))
    else:
        radius = max(2 * emb.filter.degree, 1)
        cand = _candidates(graph, radius)
        while np.diff(cand.indptr).min() < m:
            radius += 1
            cand = _candidates(graph, radius)
    cand.sort_indices()
    rows = np.repeat(np.arange(n), np.diff(cand.indptr))
    cols = cand.indices
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    vals = np.einsum("ij,ij->i", emb.phi[rows], emb.phi[cols])
    # rank on rounded values so roundoff-level differences (e.g. after an
    # orthogonal change of embedding basis) cannot reorder tied candidates
    scale = np.abs(vals).max() if len(vals) else 1.0
    ranked = np.round(vals / (scale or 1.0), 10)
    order = np.lexsort((cols, -ranked, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    start = np.searchsorted(rows, np.arange(n))
    rank = np.arange(len(rows)) - start[rows]
    sel = rank < m - 1
    nbr = np.empty((n, m), dtype=np.int64)
    ker = np.empty((n, m))
    nbr[:, 0] = np.arange(n)
    ker[:, 0] = np.einsum("ij,ij->i", emb.phi, emb.phi)
    nbr[:, 1:] = cols[sel].reshape(n, m - 1)
    ker[:, 1:] = vals[sel].reshape(n, m - 1)
    return AttentionGraph(nbr, ker)


def prepare(model, mesh, dense=False):
    """Embedding and attention graph for one mesh, per the model's config."""
    cfg = model.config
    graph = build_graph(mesh)
    emb = spectral_embed(random_walk_matrix(graph), cfg.filter, cfg.r, cfg.embed_seed)
    return emb, build_attention_graph(emb, graph, cfg.k, dense=dense)


def attention_weights(attn, theta1, theta2=0.0):
    """Row-wise softmax of ``theta1 * kernel + theta2`` over each neighbor list."""
    z = theta1 * attn.kernel + theta2
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def _mixing_matrix(nbr, w):
    n, m = nbr.shape
    return sparse.csr_matrix((w.ravel(), nbr.ravel(), np.arange(0, n * m + 1, m)), shape=(n, n))


# ---------------------------------------------------------------------------
# forward / backward


def _forward(params, cfg, X, attn):
    cache = {"X": X}
    H = np.tanh(X @ params["enc_w"] + params["enc_b"])
    cache["H0"] = H
    blocks = []
    for b in range(cfg.blocks):
        W = attention_weights(attn, params[f"blk{b}_theta1"], params[f"blk{b}_theta2"])
        A = _mixing_matrix(attn.neighbors, W)
        V = H @ params[f"blk{b}_w"] + params[f"blk{b}_b"]
        T = np.tanh(A @ V)
        blocks.append((H, W, A, V, T))
        H = H + T
    cache["blocks"] = blocks
    cache["H"] = H
    return H @ params["dec_w"] + params["dec_b"], cache


def _backward(params, cfg, cache, attn, d_out):
    g = {}
    H = cache["H"]
    g["dec_w"] = H.T @ d_out
    g["dec_b"] = d_out.sum(0)
    dH = d_out @ params["dec_w"].T
    nbr, ker = attn.neighbors, attn.kernel
    for b in reversed(range(cfg.blocks)):
        Hin, W, A, V, T = cache["blocks"][b]
        dS = dH * (1.0 - T * T)
        dV = A.T @ dS
        dW = np.einsum("ih,imh->im", dS, V[nbr])
        dz = W * (dW - (W * dW).sum(1, keepdims=True))
        g[f"blk{b}_theta1"] = np.array((dz * ker).sum())
        g[f"blk{b}_theta2"] = np.array(dz.sum())
        g[f"blk{b}_w"] = Hin.T @ dV
        g[f"blk{b}_b"] = dV.sum(0)
        dH = dH + dV @ params[f"blk{b}_w"].T
    dZ = dH * (1.0 - cache["H0"] ** 2)
    g["enc_w"] = cache["X"].T @ dZ
    g["enc_b"] = dZ.sum(0)
    return g


def _check_inputs(model, sample, emb, attn):
    n = sample.mesh.n_vertices
    if emb is not None and emb.n != n:
        raise ShapeError(f"embedding has {emb.n} rows, mesh {n} vertices")
    if attn.n != n:
        raise ShapeError(f"attention graph has {attn.n} rows, mesh {n} vertices")
    if sample.features.shape[1] != model.config.in_dim:
        raise ShapeError(f"expected {model.config.in_dim} features, got {sample.features.shape[1]}")


def forward(model, sample, emb, attn):
    """Predicted ``(N, 4)`` fields in physical units."""
    _check_inputs(model, sample, emb, attn)
    nm = model.norm
    X = (sample.features - nm.x_mean) / nm.x_std
    out, _ = _forward(model.params, model.config, X, attn)
    return out * nm.y_std + nm.y_mean


def loss(pred, target, scale=None):
    """Mean squared error after dividing each channel by ``scale``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    if scale is not None:
        d = d / np.asarray(scale, dtype=float)
    return float(np.mean(d * d))


def _normalized(model, sample):
    nm = model.norm
    return (sample.features - nm.x_mean) / nm.x_std, (sample.targets - nm.y_mean) / nm.y_std


def objective(model, sample, emb, attn):
    """Training loss: mean squared error in normalized target units."""
    _check_inputs(model, sample, emb, attn)
    X, Y = _normalized(model, sample)
    diff = _forward(model.params, model.config, X, attn)[0] - Y
    return float(np.mean(diff * diff))


def loss_and_gradients(model, sample, emb, attn, loss_scale=1.0):
    _check_inputs(model, sample, emb, attn)
    X, Y = _normalized(model, sample)
    out, cache = _forward(model.params, model.config, X, attn)
    diff = out - Y
    value = loss_scale * float(np.mean(diff * diff))
    d_out = (2.0 * loss_scale / diff.size) * diff
    return value, _backward(model.params, model.config, cache, attn, d_out)


def gradients(model, sample, emb, attn, loss_scale=1.0):
    """Exact derivatives of the normalized loss with respect to every parameter."""
    return loss_and_gradients(model, sample, emb, attn, loss_scale)[1]


def sample_loss(model, sample, emb, attn):
    return loss(forward(model, sample, emb, attn), sample.targets, model.norm.y_std)


def gradient_check(model, sample, emb, attn, step=1e-5, floor=1e-5):
    """Largest relative gap between analytic and central-difference gradients.

    The relative error of each entry is ``|a - fd| / max(|a|, |fd|, floor)``;
    the floor keeps entries whose true gradient vanishes (e.g. ``theta2``, by
    softmax shift invariance) from reporting pure finite-difference roundoff.
    """
    g = gradients(model, sample, emb, attn)
    worst = 0.0
    for name, value in model.params.items():
        for idx in np.ndindex(value.shape):
            f = []
            for sgn in (1.0, -1.0):
                m = model.copy()
                m.params[name][idx] += sgn * step
                f.append(objective(m, sample, emb, attn))
            fd = (f[0] - f[1]) / (2 * step)
            a = float(g[name][idx])
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
    return worst


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 0.01
    epochs: int = 100
    seed: int = 0
    momentum: float = 0.9
    batch_size: int = 1
    lr_final: float = 1.0  # cosine decay to lr * lr_final
    clip: float = None


def _stack(batch):
    """Concatenate samples into one disconnected graph."""
    if len(batch) == 1:
        s, _, a = batch[0]
        return s.features, s.targets, a
    widths = {a.neighbors.shape[1] for _, _, a in batch}
    if len(widths) != 1:
        raise ShapeError("samples in a batch need equal neighbor-list widths")
    off, nbrs = 0, []
    for s, _, a in batch:
        nbrs.append(a.neighbors + off)
        off += a.n
    attn = AttentionGraph(np.vstack(nbrs), np.vstack([a.kernel for _, _, a in batch]))
    return (np.vstack([s.features for s, _, _ in batch]),
            np.vstack([s.targets for s, _, _ in batch]), attn)


def train(model, dataset, opts=None, context=None, callback=None):
    """Momentum gradient descent over shuffled samples.

    ``dataset`` is a list of :class:`FieldSample`; ``context`` maps
    ``id(mesh)`` to a precomputed ``(embedding, attention graph)`` pair and is
    filled on demand. Returns ``(model, history)`` with the mean loss of
    every epoch.
    """
    opts = opts or TrainOptions()
    if not dataset:
        raise ParameterError("empty dataset")
    if opts.epochs < 0 or opts.lr <= 0 or opts.batch_size < 1:
        raise ParameterError("invalid training options")
    context = {} if context is None else context
    items = []
    for s in dataset:
        key = id(s.mesh)
        if key not in context:
            context[key] = prepare(model, s.mesh)
        items.append((s, *context[key]))
    model = model.copy()
    if opts.epochs == 0:
        return model, []
    cfg, nm = model.config, model.norm
    rng = np.random.default_rng(opts.seed)
    vel = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    steps_per_epoch = math.ceil(len(items) / opts.batch_size)
    total = opts.epochs * steps_per_epoch
    step = 0
    for epoch in range(opts.epochs):
        order = rng.permutation(len(items))
        losses = []
        for b0 in range(0, len(items), opts.batch_size):
            batch = [items[i] for i in order[b0:b0 + opts.batch_size]]
            feats, targ, attn = _stack(batch)
            X = (feats - nm.x_mean) / nm.x_std
            Y = (targ - nm.y_mean) / nm.y_std
            out, cache = _forward(model.params, cfg, X, attn)
            diff = out - Y
            with np.errstate(over="ignore", invalid="ignore"):
                value = float(np.mean(diff * diff))
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            grads = _backward(model.params, cfg, cache, attn, (2.0 / diff.size) * diff)
            if opts.clip:
                gn = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gn > opts.clip:
                    grads = {k: g * (opts.clip / gn) for k, g in grads.items()}
            frac = step / max(total - 1, 1)
            lr = opts.lr * (opts.lr_final + (1 - opts.lr_final) * 0.5 * (1 + math.cos(math.pi * frac)))
            for k, g in grads.items():
                vel[k] = opts.momentum * vel[k] - lr * g
                model.params[k] = model.params[k] + vel[k]
            losses.append(value * len(batch))
            step += 1
        epoch_loss = sum(losses) / len(items)
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise DivergenceError(epoch)
        history.append(epoch_loss)
        if callback is not None:
            callback(epoch, epoch_loss, model)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_text(model):
    cfg = model.config
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": {"hidden": cfg.hidden, "blocks": cfg.blocks, "k": cfg.k, "seed": cfg.seed,
                   "in_dim": cfg.in_dim, "out_dim": cfg.out_dim, "filter": list(cfg.filter),
                   "r": cfg.r, "embed_seed": cfg.embed_seed},
        "normalization": model.norm.to_dict(),
        "meta": model.meta,
        "params": {k: {"shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
                   for k, v in sorted(model.params.items())},
    }
    return json.dumps(doc, indent=1) + "\n"


def load_checkpoint_text(text):
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {doc.get('version')!r}")
    c = doc["config"]
    cfg = ModelConfig(c["hidden"], c["blocks"], c["k"], c["seed"], c["in_dim"], c["out_dim"],
                      tuple(c["filter"]), c["r"], c["embed_seed"])
    params = {k: np.array(v["values"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    return GistModel(cfg, params, Normalizer.from_dict(doc["normalization"]), doc.get("meta", {}))


def save_checkpoint(model, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(checkpoint_text(model))


def load_checkpoint(path):
    with open(path) as fh:
        return load_checkpoint_text(fh.read())
