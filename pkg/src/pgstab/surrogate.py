"""Neural surrogates for per-block singular values and factors.

Offline, the optimal-test matrix W(mu) is sampled on a parameter grid and
every quadtree block down to a fixed depth gets its leading singular
values recorded (optionally the factors too). Small per-block MLPs are
then trained to map the normalized parameter to those values, so that the
online compression can decide split-vs-leaf without computing SVDs.

Two modes: "sigma" (D-only; leaves still run an exact truncated SVD for
their factors) and "factors" (full-UDV; leaf factors come from the
networks, zero online SVD flops).

Networks are trained full-batch with Adam; the recorded loss history is
the running best at each checkpoint and the returned parameters are the
best snapshot, so the trace is non-increasing by construction.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import hmat as _hmat
from . import opttest as _opttest
from .hmat import CompressionParams, HNode

__all__ = [
    "Block",
    "BlockSchedule",
    "build_schedule",
    "SurrogateDataset",
    "generate_dataset",
    "SurrogateModel",
    "SigmaPrediction",
    "train",
    "predict_singular_values",
    "predict_factors",
    "create_tree_nn",
    "ExactPredictor",
    "DenseParts",
    "TrainingDivergedError",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
]

MODE_SIGMA = "sigma"
MODE_FACTORS = "factors"

_TARGET_FLOOR = 1e-16
_MODEL_MAGIC = b"PGSURR01"
_DATASET_MAGIC = b"PGDSET01"


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


# -- block schedule -----------------------------------------------------------


class Block(NamedTuple):
    block_id: int
    level: int
    t0: int
    t1: int
    s0: int
    s1: int

    @property
    def shape(self):
        return (self.t1 - self.t0, self.s1 - self.s0)


@dataclass(frozen=True)
class BlockSchedule:
    """Every quadtree block of an (m x n) matrix down to ``depth``,
    breadth-first; block ids are a bijection onto 1..N_B. Splits follow
    create_tree's ceil midpoints exactly."""

    shape: tuple
    depth: int
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "_by_range",
                           {b[2:]: b for b in self.blocks})

    def find(self, t0, t1, s0, s1) -> Block | None:
        return self._by_range.get((t0, t1, s0, s1))

    def __len__(self) -> int:
        return len(self.blocks)

    def sha(self) -> str:
        text = f"{self.shape}|{self.depth}|" + ";".join(
            ",".join(map(str, b)) for b in self.blocks)
        return hashlib.sha256(text.encode()).hexdigest()


def build_schedule(m: int, n: int, depth: int) -> BlockSchedule:
    if m < 1 or n < 1 or depth < 0:
        raise ValueError("invalid schedule request")
    blocks = []
    frontier = [(0, m, 0, n)]
    next_id = 1
    for level in range(depth + 1):
        nxt = []
        for t0, t1, s0, s1 in frontier:
            blocks.append(Block(next_id, level, t0, t1, s0, s1))
            next_id += 1
            if level < depth and t1 - t0 >= 2 and s1 - s0 >= 2:
                tm = t0 + (t1 - t0 + 1) // 2
                sm = s0 + (s1 - s0 + 1) // 2
                nxt += [(t0, tm, s0, sm), (t0, tm, sm, s1),
                        (tm, t1, s0, sm), (tm, t1, sm, s1)]
        frontier = nxt
    return BlockSchedule((m, n), depth, tuple(blocks))


# -- dataset ------------------------------------------------------------------


@dataclass
class SurrogateDataset:
    """Per-sample, per-block singular values (and factors in full-UDV mode).

    ``sigma`` has shape (T, N_B, r+1), zero-padded past the block rank.
    Factor arrays exist only for blocks that appear as a leaf for some
    training parameter; they are sign-aligned (largest-magnitude entry of
    each left vector positive, the pair flipped together).
    """

    schedule: BlockSchedule
    mu_values: np.ndarray
    num_sigma: int
    sigma: np.ndarray
    mode: str = MODE_SIGMA
    params: CompressionParams = field(default_factory=CompressionParams)
    ranks: dict = field(default_factory=dict)       # block_id -> k_i
    factors_u: dict = field(default_factory=dict)   # block_id -> (T, rows, k_i)
    factors_v: dict = field(default_factory=dict)   # block_id -> (T, k_i, cols)
    zero_blocks: np.ndarray | None = None           # (T, N_B) bool


def _align_signs(u, vt, reference=None):
    """Fix the SVD sign ambiguity on (u_i, v_i) pairs.

    Without a reference, each left vector's largest-magnitude entry is made
    positive; with a reference (the previous grid sample), signs chain so
    the factor curves stay continuous along the parameter grid. The pair is
    always flipped together, preserving the reconstruction.
    """
    if reference is None:
        rows = np.argmax(np.abs(u), axis=0)
        signs = np.sign(u[rows, np.arange(u.shape[1])])
    else:
        k = min(u.shape[1], reference.shape[1])
        signs = np.ones(u.shape[1])
        signs[:k] = np.sign(np.sum(u[:, :k] * reference[:, :k], axis=0))
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def _leaf_plausible(dataset: SurrogateDataset) -> set:
    """Blocks that the recorded spectra would make a leaf for some mu."""
    params = dataset.params
    r, delta = params.max_rank, params.threshold
    sched = dataset.schedule
    out = set()
    for ti in range(len(dataset.mu_values)):
        stack = [sched.blocks[0]]
        while stack:
            blk = stack.pop()
            rows, cols = blk.shape
            if dataset.zero_blocks is not None and dataset.zero_blocks[ti, blk.block_id - 1]:
                continue
            if rows > params.max_leaf_size or cols > params.max_leaf_size:
                admissible = False
            elif min(rows, cols) <= params.min_block_size:
                admissible = True
            elif min(rows, cols) <= r:
                admissible = True
            else:
                admissible = dataset.sigma[ti, blk.block_id - 1, r] < delta
            if admissible:
                out.add(blk.block_id)
            elif blk.level < sched.depth:
                tm = blk.t0 + (blk.t1 - blk.t0 + 1) // 2
                sm = blk.s0 + (blk.s1 - blk.s0 + 1) // 2
                for rng in ((blk.t0, tm, blk.s0, sm), (blk.t0, tm, sm, blk.s1),
                            (tm, blk.t1, blk.s0, sm), (tm, blk.t1, sm, blk.s1)):
                    child = sched.find(*rng)
                    if child is not None:
                        stack.append(child)
    return out


def generate_dataset(forms, fac, schedule: BlockSchedule, mu_grid,
                     params: CompressionParams | None = None,
                     mode: str = MODE_SIGMA, parts=None,
                     memory_limit: float = 2e9,
                     counter=None) -> SurrogateDataset:
    """Materialize W(mu) for each grid point and record truncated-SVD data
    (k = r+1) for every scheduled block."""
    if mode not in (MODE_SIGMA, MODE_FACTORS):
        raise ValueError(f"unknown surrogate mode {mode!r}")
    params = params or CompressionParams()
    mu_grid = np.asarray(mu_grid, dtype=float)
    t = len(mu_grid)
    nb = len(schedule)
    r1 = params.max_rank + 1
    est = 8.0 * t * nb * r1
    if mode == MODE_FACTORS:
        est += 8.0 * t * params.max_rank * sum(
            b.shape[0] + b.shape[1] for b in schedule.blocks)
    if est > memory_limit:
        raise ValueError(
            f"dataset would need ~{est / 1e9:.2f} GB "
            f"({t} samples x {nb} blocks, mode={mode}); "
            f"limit is {memory_limit / 1e9:.2f} GB — reduce depth or grid")

    if parts is None:
        parts = _opttest.solve_parts(forms, fac)
    sigma = np.zeros((t, nb, r1))
    zero_blocks = np.zeros((t, nb), dtype=bool)
    fu = {b.block_id: [] for b in schedule.blocks}
    fv = {b.block_id: [] for b in schedule.blocks}
    order = np.argsort(mu_grid)  # chain sign alignment along increasing mu
    for ti in order:
        mu = mu_grid[ti]
        w = _opttest.combine_parts(parts, forms, mu, counter)
        for blk in schedule.blocks:
            sub = w[blk.t0:blk.t1, blk.s0:blk.s1]
            if not sub.any():
                zero_blocks[ti, blk.block_id - 1] = True
                if mode == MODE_FACTORS:
                    fu[blk.block_id].append((ti, np.zeros((sub.shape[0], 0))))
                    fv[blk.block_id].append((ti, np.zeros((0, sub.shape[1]))))
                continue
            k = min(r1, min(sub.shape))
            u, s, vt = _hmat.truncated_svd(sub, k, counter, "svd")
            sigma[ti, blk.block_id - 1, :k] = s
            if mode == MODE_FACTORS:
                kk = min(params.max_rank, k)
                prev = fu[blk.block_id][-1][1] if fu[blk.block_id] else None
                ref = prev if prev is not None and prev.size else None
                ua, va = _align_signs(u[:, :kk], vt[:kk], reference=ref)
                fu[blk.block_id].append((ti, ua))
                fv[blk.block_id].append((ti, va))
    if mode == MODE_FACTORS:
        # restore the caller's grid order
        for bid in fu:
            fu[bid] = [a for _, a in sorted(fu[bid])]
            fv[bid] = [a for _, a in sorted(fv[bid])]

    dataset = SurrogateDataset(schedule, mu_grid.copy(), r1, sigma, mode,
                               params, zero_blocks=zero_blocks)
    if mode == MODE_FACTORS:
        keep = _leaf_plausible(dataset)
        for blk in schedule.blocks:
            bid = blk.block_id
            if bid not in keep or zero_blocks[:, bid - 1].any():
                continue
            kept = [int(np.sum(sigma[ti, bid - 1] >= params.threshold))
                    for ti in range(t)]
            k_i = max(1, min(max(kept), params.max_rank, min(blk.shape)))
            dataset.ranks[bid] = k_i
            dataset.factors_u[bid] = np.stack([a[:, :k_i] for a in fu[bid]])
            dataset.factors_v[bid] = np.stack([a[:k_i, :] for a in fv[bid]])
    return dataset


# -- MLP training --------------------------------------------------------------


def _init_params(layers, rng):
    params = []
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        params.append((w, np.zeros(fan_out)))
    return params


def _stack_params(per_block):
    return [(np.stack([p[i][0] for p in per_block]),
             np.stack([p[i][1] for p in per_block]))
            for i in range(len(per_block[0]))]


def _forward(params, x):
    """Batched forward pass; params are (B, fan_in, fan_out) stacks and x is
    (T, 1). tanh hidden activations, linear output; returns (B, T, out)."""
    h = np.broadcast_to(x, (params[0][0].shape[0],) + x.shape)
    for i, (w, b) in enumerate(params):
        h = np.matmul(h, w) + b[:, None, :]
        if i < len(params) - 1:
            h = np.tanh(h)
    return h


def _train_stack(x, targets, hidden, epochs, lr, seed, checkpoint_every):
    """Adam full-batch training of B independent MLPs with shared shapes.

    x: (T, 1) normalized inputs; targets: (B, T, out) normalized targets.
    Parameters live in one flat buffer (per-layer views) so the Adam update
    is a handful of vectorized operations; the best-so-far snapshot is
    refreshed at checkpoint granularity, which keeps the recorded history
    non-increasing and the returned parameters matching it.
    Returns (best_params, best_loss (B,), history, raw_history).
    """
    b, t, out = targets.shape
    layers = (1,) + tuple(hidden) + (out,)
    rng = np.random.default_rng(seed)
    init = _stack_params([_init_params(layers, rng) for _ in range(b)])

    shapes, offsets, total = [], [], 0
    for w, bb in init:
        for arr in (w, bb):
            shapes.append(arr.shape)
            offsets.append(total)
            total += arr.size
    flat = np.empty(total)
    grad_flat = np.empty(total)

    def views(buffer):
        out_views = []
        for i in range(0, len(shapes), 2):
            w = buffer[offsets[i]: offsets[i] + np.prod(shapes[i])].reshape(shapes[i])
            bb = buffer[offsets[i + 1]: offsets[i + 1] + np.prod(shapes[i + 1])].reshape(shapes[i + 1])
            out_views.append((w, bb))
        return out_views

    params = views(flat)
    grads = views(grad_flat)
    for (w, bb), (wi, bi) in zip(params, init):
        w[:] = wi
        bb[:] = bi
    m_adam = np.zeros(total)
    v_adam = np.zeros(total)
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    best_flat = flat.copy()
    best_params = views(best_flat)
    best_loss = np.full(b, np.inf)
    history, raw_history = [], []
    xb = np.broadcast_to(x, (b,) + x.shape)
    nlayers = len(params)

    for epoch in range(1, epochs + 1):
        acts = [xb]
        h = xb
        for i, (w, bb) in enumerate(params):
            h = np.matmul(h, w) + bb[:, None, :]
            if i < nlayers - 1:
                h = np.tanh(h)
            acts.append(h)
        diff = acts[-1] - targets

        if epoch % checkpoint_every == 0 or epoch == epochs:
            # loss/snapshot refer to the current (pre-update) parameters
            loss = np.mean(diff * diff, axis=(1, 2))
            if not np.isfinite(loss).all():
                bad = int(np.flatnonzero(~np.isfinite(loss))[0])
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (stack index {bad}); "
                    f"reduce the learning rate")
            improved = loss < best_loss
            if improved.any():
                best_loss = np.where(improved, loss, best_loss)
                for (bw, bb2), (w, bb) in zip(best_params, params):
                    bw[improved] = w[improved]
                    bb2[improved] = bb[improved]
            history.append(float(np.mean(best_loss)))
            raw_history.append(float(np.mean(loss)))

        grad = (2.0 / (t * out)) * diff
        for i in range(nlayers - 1, -1, -1):
            w, _ = params[i]
            gw, gb = grads[i]
            np.matmul(acts[i].transpose(0, 2, 1), grad, out=gw)
            grad.sum(axis=1, out=gb)
            if i > 0:
                grad = np.matmul(grad, w.transpose(0, 2, 1))
                grad *= 1.0 - acts[i] * acts[i]
        m_adam += (1 - beta1) * (grad_flat - m_adam)
        v_adam += (1 - beta2) * (grad_flat * grad_flat - v_adam)
        corr1 = 1 - beta1 ** epoch
        corr2 = 1 - beta2 ** epoch
        flat -= (lr / corr1) * m_adam / (np.sqrt(v_adam / corr2) + eps_adam)
    return best_params, best_loss, history, raw_history


# -- model ---------------------------------------------------------------------


class SigmaPrediction(NamedTuple):
    values: np.ndarray
    extrapolated: bool


@dataclass
class SurrogateModel:
    """Per-block MLPs mapping a normalized PDE parameter to block singular
    values (mode "sigma") and optionally factor entries (mode "factors")."""

    mode: str
    schedule: BlockSchedule
    schedule_hash: str
    param_transform: str          # "log10" | "linear"
    mu_range: tuple               # raw training range (lo, hi)
    num_sigma: int
    hidden: tuple
    sigma_nets: dict              # block_id -> dict(params, mean, std)
    factor_nets: dict = field(default_factory=dict)  # block_id -> dict(...)
    ranks: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    raw_loss_history: list = field(default_factory=list)
    holdout: dict | None = None
    compression: CompressionParams = field(default_factory=CompressionParams)

    # -- inference -------------------------------------------------------

    def _normalize_mu(self, mu: float):
        lo, hi = self.mu_range
        extrapolated = not (lo <= mu <= hi)
        if self.param_transform == "log10":
            val, a, b = np.log10(mu), np.log10(lo), np.log10(hi)
        else:
            val, a, b = mu, lo, hi
        span = b - a if b > a else 1.0
        return 2.0 * (val - a) / span - 1.0, extrapolated

    def _net_forward(self, net, mu_norm, counter=None, phase="nn-inference"):
        x = np.array([[mu_norm]])
        stacked = [(w[None], b[None]) for w, b in net["params"]]
        out = _forward(stacked, x)[0, 0]
        if counter is not None:
            flops = 0
            for w, _ in net["params"]:
                flops += w.shape[0] * w.shape[1] * 2 + w.shape[1]
            counter.add(phase, flops)
        return out * net["std"] + net["mean"]

    def predict_sigma(self, mu: float, block_id: int, counter=None,
                      phase: str = "admissibility") -> SigmaPrediction:
        if block_id not in self.sigma_nets:
            raise KeyError(f"unknown block_id {block_id}")
        mu_norm, extrapolated = self._normalize_mu(mu)
        logs = self._net_forward(self.sigma_nets[block_id], mu_norm, counter, phase)
        vals = np.power(10.0, logs) - _TARGET_FLOOR
        vals = np.maximum(vals, 0.0)
        vals = np.sort(vals)[::-1]
        return SigmaPrediction(vals, extrapolated)

    def has_factors(self, block_id: int) -> bool:
        return block_id in self.factor_nets

    def predict_factor_parts(self, mu: float, block_id: int, counter=None):
        if self.mode != MODE_FACTORS:
            raise ValueError("factor prediction requires a full-UDV model")
        if block_id not in self.factor_nets:
            raise KeyError(f"no factor network for block_id {block_id}")
        net = self.factor_nets[block_id]
        mu_norm, _ = self._normalize_mu(mu)
        flat = self._net_forward(net, mu_norm, counter, "nn-inference")
        rows, cols, k = net["rows"], net["cols"], net["rank"]
        u = flat[: rows * k].reshape(rows, k)
        v = flat[rows * k:].reshape(k, cols)
        return u, v


def _median_rel_error(pred, truth, floor_ratio=1e-4):
    """Median relative error over singular values above floor_ratio*sigma1."""
    errs = []
    for p, t in zip(pred, truth):
        lead = t[0] if t[0] > 0 else 1.0
        mask = t >= floor_ratio * lead
        if mask.any():
            errs.extend(np.abs(p[mask] - t[mask]) / t[mask])
    return float(np.median(errs)) if errs else 0.0


def train(dataset: SurrogateDataset, hidden=(64, 64), epochs: int = 5000,
          learning_rate: float = 5e-3, seed: int = 0,
          holdout_indices=None, checkpoint_every: int = 50,
          factor_hidden=(64,), factor_epochs: int | None = None,
          param_transform: str | None = None) -> SurrogateModel:
    """Train per-block networks on normalized log singular values (and
    factor entries in full-UDV mode); returns the model with its loss
    history and, when holdout indices are given, a holdout report."""
    t = len(dataset.mu_values)
    if t < 8:
        raise ValueError(f"need at least 8 parameter samples, got {t}")
    if not hidden or any(h < 1 for h in hidden):
        raise ValueError(f"invalid architecture {hidden!r}")
    holdout_indices = sorted(set(holdout_indices or []))
    train_idx = np.array([i for i in range(t) if i not in holdout_indices])
    if len(train_idx) < 8:
        raise ValueError("holdout leaves fewer than 8 training samples")
    mu = dataset.mu_values
    if param_transform is None:
        spread = mu.max() / max(mu.min(), 1e-300)
        param_transform = "log10" if mu.min() > 0 and spread > 50 else "linear"
    lo, hi = float(mu.min()), float(mu.max())

    def norm_mu(vals):
        if param_transform == "log10":
            v, a, b = np.log10(vals), np.log10(lo), np.log10(hi)
        else:
            v, a, b = vals, lo, hi
        span = b - a if b > a else 1.0
        return 2.0 * (v - a) / span - 1.0

    x_train = norm_mu(mu[train_idx])[:, None]

    # sigma networks, one per scheduled block, trained as one batched stack
    log_sigma = np.log10(dataset.sigma + _TARGET_FLOOR)
    targets = log_sigma[train_idx].transpose(1, 0, 2)  # (NB, T, r+1)
    mean = targets.mean(axis=1, keepdims=True)
    std = np.maximum(targets.std(axis=1, keepdims=True), 1e-10)
    normalized = (targets - mean) / std
    params, best_loss, history, raw = _train_stack(
        x_train, normalized, hidden, epochs, learning_rate, seed,
        checkpoint_every)
    sigma_nets = {}
    for bi, blk in enumerate(dataset.schedule.blocks):
        sigma_nets[blk.block_id] = {
            "params": [(w[bi].copy(), b[bi].copy()) for w, b in params],
            "mean": mean[bi, 0], "std": std[bi, 0],
        }

    model = SurrogateModel(
        mode=dataset.mode, schedule=dataset.schedule,
        schedule_hash=dataset.schedule.sha(), param_transform=param_transform,
        mu_range=(lo, hi), num_sigma=dataset.num_sigma, hidden=tuple(hidden),
        sigma_nets=sigma_nets, ranks=dict(dataset.ranks),
        loss_history=history, raw_loss_history=raw,
        compression=dataset.params,
    )

    if dataset.mode == MODE_FACTORS:
        f_epochs = factor_epochs or epochs
        by_id = {b.block_id: b for b in dataset.schedule.blocks}
        groups: dict = {}
        for bid in sorted(dataset.factors_u):
            blk = by_id[bid]
            rows, cols = blk.shape
            k = dataset.ranks[bid]
            groups.setdefault((rows, cols, k), []).append(bid)
        for (rows, cols, k), bids in sorted(groups.items()):
            flats = [np.concatenate(
                [dataset.factors_u[bid].reshape(t, rows * k),
                 dataset.factors_v[bid].reshape(t, k * cols)], axis=1)
                for bid in bids]
            tgt = np.stack([f[train_idx] for f in flats])
            fmean = tgt.mean(axis=1, keepdims=True)
            fstd = np.maximum(tgt.std(axis=1, keepdims=True), 1e-10)
            fparams, _, _, _ = _train_stack(
                x_train, (tgt - fmean) / fstd, factor_hidden, f_epochs,
                learning_rate, seed + 7919 * rows + cols + k,
                checkpoint_every)
            for gi, bid in enumerate(bids):
                model.factor_nets[bid] = {
                    "params": [(w[gi].copy(), b[gi].copy()) for w, b in fparams],
                    "mean": fmean[gi, 0], "std": fstd[gi, 0],
                    "rows": rows, "cols": cols, "rank": k,
                }

    if holdout_indices:
        errs = []
        for idx in holdout_indices:
            for blk in dataset.schedule.blocks:
                pred = model.predict_sigma(mu[idx], blk.block_id).values
                truth = dataset.sigma[idx, blk.block_id - 1]
                errs.append((pred, truth))
        model.holdout = {
            "indices": holdout_indices,
            "mu": [float(mu[i]) for i in holdout_indices],
            "median_sigma_rel_error": _median_rel_error(
                [p for p, _ in errs], [tr for _, tr in errs]),
        }
    return model


def predict_singular_values(model: SurrogateModel, mu: float,
                            block_id: int) -> SigmaPrediction:
    """Clamped, non-increasing singular-value prediction; the flag marks
    extrapolation outside the training range."""
    return model.predict_sigma(mu, block_id, phase="nn-inference")


def predict_factors(model: SurrogateModel, mu: float, block_id: int):
    """(U, sigma, V) prediction for a leaf of the fixed tree structure."""
    u, v = model.predict_factor_parts(mu, block_id)
    sig = model.predict_sigma(mu, block_id, phase="nn-inference").values
    k = u.shape[1]
    return u, sig[:k], v


# -- NN-guided compression (Alg. 6) ---------------------------------------------


class DenseParts:
    """Affine dense parts of W(mu): blocks are materialized on demand
    (used by full-UDV compression, which never forms the whole matrix)."""

    def __init__(self, parts, theta_values):
        self.parts = list(parts)
        self.theta = [float(v) for v in theta_values]
        self.shape = self.parts[0].shape

    def block(self, t0, t1, s0, s1, counter=None):
        out = self.theta[0] * self.parts[0][t0:t1, s0:s1]
        for th, part in zip(self.theta[1:], self.parts[1:]):
            out = out + th * part[t0:t1, s0:s1]
        if counter is not None:
            counter.add("assembly", 2 * out.size * len(self.parts))
        return out


class ExactPredictor:
    """Oracle predictor wrapping the dense matrix: predictions are exact
    truncated SVDs, so NN-guided compression reproduces create_tree."""

    def __init__(self, matrix, params: CompressionParams):
        self.matrix = np.asarray(matrix, dtype=float)
        self.params = params
        self.mode = MODE_SIGMA
        self.schedule = None

    def predict_sigma(self, mu, block, counter=None, phase="admissibility"):
        t0, t1, s0, s1 = block
        sub = self.matrix[t0:t1, s0:s1]
        k = min(self.params.max_rank + 1, min(sub.shape))
        _, s, _ = _hmat.truncated_svd(sub, k, counter, phase)
        out = np.zeros(self.params.max_rank + 1)
        out[: len(s)] = s
        return SigmaPrediction(out, False)


def _query_sigma(model, mu, blk, ranges, counter):
    if isinstance(model, ExactPredictor):
        return model.predict_sigma(mu, ranges, counter)
    return model.predict_sigma(mu, blk.block_id, counter, "admissibility")


def create_tree_nn(source, params: CompressionParams, model, mu: float,
                   counter=None) -> HNode:
    """Hierarchical compression with NN-predicted admissibility.

    ``source`` is the dense W(mu) (sigma mode) or a :class:`DenseParts`
    (factors mode, blocks only materialized on fallback). Blocks deeper
    than the model's schedule fall back to the exact test and are tallied
    as ``nn-fallback`` events.
    """
    if isinstance(source, DenseParts):
        matrix = None
        parts = source
        shape = source.shape
    else:
        matrix = np.ascontiguousarray(source, dtype=float)
        parts = None
        shape = matrix.shape
    schedule = getattr(model, "schedule", None)
    if schedule is not None and schedule.shape != tuple(shape):
        raise ValueError(
            f"model schedule shape {schedule.shape} does not match {shape}")
    full_udv = getattr(model, "mode", MODE_SIGMA) == MODE_FACTORS
    if full_udv and matrix is None and parts is None:
        raise ValueError("factors mode needs DenseParts for fallbacks")
    r, delta = params.max_rank, params.threshold

    def get_block(t0, t1, s0, s1):
        if matrix is not None:
            return matrix[t0:t1, s0:s1]
        return parts.block(t0, t1, s0, s1, counter)

    def exact_sigma(t0, t1, s0, s1):
        sub = get_block(t0, t1, s0, s1)
        k = min(r + 1, min(sub.shape))
        _, s, _ = _hmat.truncated_svd(sub, k, counter, "admissibility")
        out = np.zeros(r + 1)
        out[: len(s)] = s
        return out

    def make_leaf(t0, t1, s0, s1, sigma_pred):
        if full_udv:
            blk = schedule.find(t0, t1, s0, s1) if schedule else None
            if blk is not None and model.has_factors(blk.block_id):
                u, v = model.predict_factor_parts(mu, blk.block_id, counter)
                k_i = u.shape[1]
                sig = sigma_pred[:k_i] if sigma_pred is not None else \
                    model.predict_sigma(mu, blk.block_id, counter).values[:k_i]
                rank = int(np.sum(sig >= delta))
                if rank == 0:
                    return HNode(t0, t1, s0, s1, _hmat.ZERO,
                                 tail=float(np.sqrt(np.sum(sig * sig))))
                tail_vals = sig[rank:]
                return HNode(t0, t1, s0, s1, _hmat.SVD, rank=rank,
                             U=np.ascontiguousarray(u[:, :rank]),
                             V=sig[:rank, None] * v[:rank],
                             sigma=np.ascontiguousarray(sig[:rank]),
                             tail=float(np.sqrt(np.sum(tail_vals ** 2))))
            if counter is not None:
                counter.tally("nn-fallback")
        sub = get_block(t0, t1, s0, s1)
        if not sub.any():
            return HNode(t0, t1, s0, s1, _hmat.ZERO)
        k = min(r, min(sub.shape))
        if sigma_pred is not None and not full_udv:
            # the predicted spectrum bounds the needed rank
            k = min(k, max(int(np.sum(sigma_pred >= delta)) + 1, 1))
        return _hmat.svd_leaf_from_block(sub, t0, t1, s0, s1, k, params, counter)

    def build(t0, t1, s0, s1):
        rows, cols = t1 - t0, s1 - s0
        if matrix is not None and not matrix[t0:t1, s0:s1].any():
            return HNode(t0, t1, s0, s1, _hmat.ZERO)
        if rows <= params.max_leaf_size and cols <= params.max_leaf_size:
            if min(rows, cols) <= params.min_block_size:
                return make_leaf(t0, t1, s0, s1, None)
            if min(rows, cols) <= r:
                return make_leaf(t0, t1, s0, s1, None)
            blk = schedule.find(t0, t1, s0, s1) if schedule is not None else None
            if blk is None and isinstance(model, ExactPredictor):
                sig = _query_sigma(model, mu, None, (t0, t1, s0, s1), counter).values
            elif blk is None:
                if counter is not None:
                    counter.tally("nn-fallback")
                sig = exact_sigma(t0, t1, s0, s1)
            else:
                sig = _query_sigma(model, mu, blk, (t0, t1, s0, s1), counter).values
            if sig[r] < delta:
                return make_leaf(t0, t1, s0, s1, sig)
        elif min(rows, cols) <= params.min_block_size:
            sub = get_block(t0, t1, s0, s1)
            if not sub.any():
                return HNode(t0, t1, s0, s1, _hmat.ZERO)
            return _hmat.svd_leaf_from_block(sub, t0, t1, s0, s1,
                                             min(sub.shape), params, counter,
                                             full_rank=True)
        tm = t0 + (rows + 1) // 2
        sm = s0 + (cols + 1) // 2
        children = [build(t0, tm, s0, sm), build(t0, tm, sm, s1),
                    build(tm, t1, s0, sm), build(tm, t1, sm, s1)]
        return HNode(t0, t1, s0, s1, _hmat.INTERNAL, children=children)

    return build(0, shape[0], 0, shape[1])


# -- serialization ---------------------------------------------------------------


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(arr.tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<q", fh.read(8))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    return data.reshape(shape).copy()


def _write_net(fh, net, extra=()):
    fh.write(struct.pack("<q", len(net["params"])))
    for w, b in net["params"]:
        _write_array(fh, w)
        _write_array(fh, b)
    _write_array(fh, net["mean"])
    _write_array(fh, net["std"])
    for val in extra:
        fh.write(struct.pack("<q", val))


def _read_net(fh, n_extra=0):
    (nlayers,) = struct.unpack("<q", fh.read(8))
    params = []
    for _ in range(nlayers):
        w = _read_array(fh)
        b = _read_array(fh)
        params.append((w, b))
    mean = _read_array(fh)
    std = _read_array(fh)
    extra = struct.unpack(f"<{n_extra}q", fh.read(8 * n_extra)) if n_extra else ()
    return {"params": params, "mean": mean, "std": std}, extra


def save_model(path, model: SurrogateModel):
    """Versioned binary: metadata JSON blob plus per-block network weights."""
    meta = {
        "version": 1,
        "mode": model.mode,
        "param_transform": model.param_transform,
        "mu_range": list(model.mu_range),
        "num_sigma": model.num_sigma,
        "hidden": list(model.hidden),
        "schedule": {"shape": list(model.schedule.shape),
                     "depth": model.schedule.depth},
        "schedule_hash": model.schedule_hash,
        "loss_history": model.loss_history,
        "raw_loss_history": model.raw_loss_history,
        "holdout": model.holdout,
        "compression": {
            "max_rank": model.compression.max_rank,
            "threshold": model.compression.threshold,
            "max_leaf_size": model.compression.max_leaf_size,
            "min_block_size": model.compression.min_block_size,
        },
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MODEL_MAGIC)
    buf.write(struct.pack("<q", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<q", len(model.sigma_nets)))
    for bid in sorted(model.sigma_nets):
        buf.write(struct.pack("<q", bid))
        _write_net(buf, model.sigma_nets[bid])
    buf.write(struct.pack("<q", len(model.factor_nets)))
    for bid in sorted(model.factor_nets):
        net = model.factor_nets[bid]
        buf.write(struct.pack("<q", bid))
        _write_net(buf, net, extra=(net["rows"], net["cols"], net["rank"]))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> SurrogateModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _MODEL_MAGIC:
            raise ValueError("not a surrogate model file")
        (blob_len,) = struct.unpack("<q", fh.read(8))
        meta = json.loads(fh.read(blob_len).decode())
        schedule = build_schedule(*meta["schedule"]["shape"],
                                  meta["schedule"]["depth"])
        (n_sigma_nets,) = struct.unpack("<q", fh.read(8))
        sigma_nets = {}
        for _ in range(n_sigma_nets):
            (bid,) = struct.unpack("<q", fh.read(8))
            sigma_nets[bid], _ = _read_net(fh)
        (n_factor_nets,) = struct.unpack("<q", fh.read(8))
        factor_nets = {}
        ranks = {}
        for _ in range(n_factor_nets):
            (bid,) = struct.unpack("<q", fh.read(8))
            net, (rows, cols, rank) = _read_net(fh, n_extra=3)
            net.update(rows=rows, cols=cols, rank=rank)
            factor_nets[bid] = net
            ranks[bid] = rank
    comp = meta["compression"]
    model = SurrogateModel(
        mode=meta["mode"], schedule=schedule,
        schedule_hash=meta["schedule_hash"],
        param_transform=meta["param_transform"],
        mu_range=tuple(meta["mu_range"]), num_sigma=meta["num_sigma"],
        hidden=tuple(meta["hidden"]), sigma_nets=sigma_nets,
        factor_nets=factor_nets, ranks=ranks,
        loss_history=meta["loss_history"],
        raw_loss_history=meta["raw_loss_history"], holdout=meta["holdout"],
        compression=CompressionParams(
            comp["max_rank"], comp["threshold"], comp["max_leaf_size"],
            comp["min_block_size"]),
    )
    if model.schedule_hash != schedule.sha():
        raise ValueError("schedule hash mismatch in model file")
    return model


def save_dataset(path, dataset: SurrogateDataset):
    """Columnar binary plus a JSON sidecar (same path + '.json')."""
    sidecar = {
        "version": 1,
        "mode": dataset.mode,
        "mu_values": [float(v) for v in dataset.mu_values],
        "num_sigma": dataset.num_sigma,
        "schedule": {"shape": list(dataset.schedule.shape),
                     "depth": dataset.schedule.depth,
                     "hash": dataset.schedule.sha()},
        "compression": {
            "max_rank": dataset.params.max_rank,
            "threshold": dataset.params.threshold,
            "max_leaf_size": dataset.params.max_leaf_size,
            "min_block_size": dataset.params.min_block_size,
        },
        "factor_blocks": sorted(dataset.factors_u),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    buf = io.BytesIO()
    buf.write(_DATASET_MAGIC)
    _write_array(buf, dataset.mu_values)
    _write_array(buf, dataset.sigma)
    _write_array(buf, dataset.zero_blocks.astype(float)
                 if dataset.zero_blocks is not None
                 else np.zeros((len(dataset.mu_values), len(dataset.schedule))))
    buf.write(struct.pack("<q", len(dataset.factors_u)))
    for bid in sorted(dataset.factors_u):
        buf.write(struct.pack("<qq", bid, dataset.ranks[bid]))
        _write_array(buf, dataset.factors_u[bid])
        _write_array(buf, dataset.factors_v[bid])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path) -> SurrogateDataset:
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    schedule = build_schedule(*sidecar["schedule"]["shape"],
                              sidecar["schedule"]["depth"])
    if schedule.sha() != sidecar["schedule"]["hash"]:
        raise ValueError("schedule hash mismatch in dataset sidecar")
    comp = sidecar["compression"]
    params = CompressionParams(comp["max_rank"], comp["threshold"],
                               comp["max_leaf_size"], comp["min_block_size"])
    with open(path, "rb") as fh:
        if fh.read(8) != _DATASET_MAGIC:
            raise ValueError("not a surrogate dataset file")
        mu_values = _read_array(fh)
        sigma = _read_array(fh)
        zero_blocks = _read_array(fh).astype(bool)
        (n_factor,) = struct.unpack("<q", fh.read(8))
        ranks, fu, fv = {}, {}, {}
        for _ in range(n_factor):
            bid, rank = struct.unpack("<qq", fh.read(16))
            ranks[bid] = rank
            fu[bid] = _read_array(fh)
            fv[bid] = _read_array(fh)
    return SurrogateDataset(schedule, mu_values, sidecar["num_sigma"], sigma,
                            sidecar["mode"], params, ranks, fu, fv, zero_blocks)
