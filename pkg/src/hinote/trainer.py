"""AdamW training on random-scale crops, checkpointing and evaluation sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint, ops
from .fields import (INTERP_METHODS, MIN_LR_EXTENT, GridField, interpolate, lr_extents, make_pair, mse,
                     psnr, round_half_up, ssim)
from .losses import compute_prior, focal_composite_loss, l1_loss, l2_loss, weight_map
from .model import HiNOTE, ModelConfig
from .spectral import spectral_resize, trig_interp_matrix
from .tensor import Tape

log = logging.getLogger(__name__)

LOSS_MODES = ("l1", "l2", "focal", "two-stage")
LOG_HEADER = ("step", "loss", "lr")
METRIC_HEADER = ("record", "scale", "mse", "psnr", "ssim")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float, norms: dict[str, float]):
        self.step = step
        self.norms = norms
        worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
        dump = ", ".join(f"{k}={v:.3g}" for k, v in worst)
        super().__init__(f"non-finite loss {loss} at step {step}; largest parameter norms: {dump}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    batch: int = 8
    crop: int = 16
    scale_lo: float = 1.0
    scale_hi: float = 2.0
    queries: int = 256
    loss: str = "l1"
    split_step: int | None = None  # two-stage boundary; default steps // 2
    alpha: float = 1.0
    beta: float = 0.1
    alpha_b: float = 1.0
    beta_b: float = 0.1
    prior_scale: float | None = None  # scale used to build stage-2 weight maps; default mid-range
    halve_every: int = 0  # learning rate halves every this many steps (0: constant)
    val_every: int = 500
    val_scale: float | None = None  # default scale_hi
    seed: int = 0

    def validate(self, hr_extent: int | None = None) -> None:
        if self.scale_lo < 1 or self.scale_hi < self.scale_lo:
            raise ValueError(f"invalid scale range [{self.scale_lo}, {self.scale_hi}]")
        if self.loss not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss!r}; expected one of {LOSS_MODES}")
        if self.batch < 1 or self.crop < 1 or self.queries < 1 or self.steps < 0:
            raise ValueError("batch, crop, queries must be positive and steps non-negative")
        if hr_extent is not None and self.crop * self.scale_hi > hr_extent:
            raise ValueError(
                f"crop {self.crop} x scale {self.scale_hi} exceeds HR extent {hr_extent}"
            )

    @property
    def boundary(self) -> int:
        return self.steps // 2 if self.split_step is None else self.split_step

    def lr_at(self, step: int) -> float:
        if self.halve_every:
            return self.lr * 0.5 ** (step // self.halve_every)
        return self.lr


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(named_params, state: AdamState, cfg: TrainConfig, lr: float | None = None) -> None:
    """Decoupled weight decay, then a bias-corrected Adam update."""
    lr = cfg.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in named_params:
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if cfg.weight_decay:
            p.data *= p.data.dtype.type(1 - lr * cfg.weight_decay)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)


# -- batches ------------------------------------------------------------------

@dataclass
class Batch:
    lr: np.ndarray       # (B, c, crop, crop)
    hr: np.ndarray       # (B, c, P, P)
    scale: float         # effective scale HR/LR of the full fields
    records: np.ndarray  # (B,) record indices
    origin: np.ndarray   # (B, 2) LR crop offset (y, x)
    queries: np.ndarray  # (B, q) flat pixel indices into the P x P patch
    hr_pos: tuple        # (y, x) positions of patch cell centres in full-HR index units

    @property
    def extents(self) -> tuple[int, int]:
        return self.hr.shape[-2], self.hr.shape[-1]


def draw_scales(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    return rng.uniform(lo, hi, size=n)


class PatchSource:
    """Full HR records plus cached LR degradations per LR extent."""

    def __init__(self, fields: Sequence[GridField]):
        if not fields:
            raise ValueError("empty dataset")
        self.hr = np.stack([np.asarray(f.values, dtype=np.float64) for f in fields])
        self._lr: dict[int, np.ndarray] = {}

    @property
    def extent(self) -> int:
        return min(self.hr.shape[-2:])

    def lr_full(self, n_lr: int) -> np.ndarray:
        if n_lr not in self._lr:
            ny, nx = self.hr.shape[-2:]
            self._lr[n_lr] = spectral_resize(self.hr, (n_lr, round_half_up(nx * n_lr / ny)))
        return self._lr[n_lr]


def make_batch(source: PatchSource, cfg: TrainConfig, rng: np.random.Generator,
               dtype=np.float32) -> Batch:
    """One scale per batch; LR crops from the spectrally degraded full field.

    The full HR field is degraded to ``round(N / s)`` and a ``crop`` window is
    cut from it (periodic wrap).  The HR target is the band-limited
    interpolant of the full HR field at the cell centres of a
    ``round(crop * s_eff)`` patch covering exactly the same region.
    """
    n = source.extent
    s = float(draw_scales(rng, cfg.scale_lo, cfg.scale_hi, 1)[0])
    n_lr = max(round_half_up(n / s), cfg.crop)
    s_eff = n / n_lr
    p_ext = round_half_up(cfg.crop * s_eff)
    lr_full = source.lr_full(n_lr)
    recs = rng.integers(0, len(source.hr), size=cfg.batch)
    origin = rng.integers(0, n_lr, size=(cfg.batch, 2))
    idx = np.arange(cfg.crop)
    lr = np.stack([
        lr_full[r][:, ((o[0] + idx) % n_lr)[:, None], ((o[1] + idx) % n_lr)[None, :]]
        for r, o in zip(recs, origin)
    ])
    frac = (np.arange(p_ext) + 0.5) * (cfg.crop * s_eff / p_ext) - 0.5
    hr, pos = [], []
    for r, o in zip(recs, origin):
        py = o[0] * s_eff + frac
        px = o[1] * s_eff + frac
        my = trig_interp_matrix(n, py)
        mx = trig_interp_matrix(n, px)
        hr.append(my @ source.hr[r] @ mx.T)
        pos.append((py, px))
    q = min(cfg.queries, p_ext * p_ext)
    queries = np.stack([rng.choice(p_ext * p_ext, size=q, replace=False) for _ in range(cfg.batch)])
    return Batch(lr.astype(dtype), np.stack(hr).astype(dtype), s_eff, recs, origin,
                 np.sort(queries, axis=1), tuple(pos))


def gather_queries(x, queries: np.ndarray):
    """(B, c, P, P) -> (B, q, c) at per-item flat pixel indices."""
    x = ops.constant(x)
    b, c = x.shape[:2]
    flat = ops.transpose(ops.reshape(x, (b, c, x.shape[2] * x.shape[3])), (0, 2, 1))
    return ops.slice_(flat, (np.arange(b)[:, None], queries))


def _gather_np(x: np.ndarray, queries: np.ndarray) -> np.ndarray:
    b, c = x.shape[:2]
    flat = x.reshape(b, c, -1).transpose(0, 2, 1)
    return flat[np.arange(b)[:, None], queries]


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    model: HiNOTE
    log: list = field(default_factory=list)  # (step, loss, lr)
    best_val: float = math.inf
    best_step: int = -1
    regenerations: int = 0
    seconds: float = 0.0
    weight_maps: np.ndarray | None = None


def _param_norms(model: HiNOTE) -> dict[str, float]:
    return {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}


def stage_two_weights(model: HiNOTE, source: PatchSource, cfg: TrainConfig) -> np.ndarray:
    """Frozen per-record weight maps W(p) over the full HR grid, p taken from
    the current model's predictions at a reference scale."""
    n = source.extent
    s_ref = cfg.prior_scale or 0.5 * (cfg.scale_lo + cfg.scale_hi)
    n_lr = round_half_up(n / s_ref)
    lr_full = source.lr_full(n_lr)
    maps = []
    for i in range(len(source.hr)):
        lr = lr_full[i]
        pred = model.predict(lr.astype(np.float32), source.hr.shape[-2:]).astype(np.float64)
        p = compute_prior(pred, lr)
        maps.append(weight_map(p, cfg.alpha, cfg.beta, source="prediction").weights)
    # stored as float32 so a resumed run sees exactly the maps the original used
    return np.stack(maps).astype(np.float32)


def _sample_weights(maps: np.ndarray, batch: Batch) -> np.ndarray:
    """Nearest full-grid weight at every patch pixel, (B, c, P, P)."""
    n = maps.shape[-1]
    out = []
    for r, (py, px) in zip(batch.records, batch.hr_pos):
        iy = np.floor(py + 0.5).astype(int) % n
        ix = np.floor(px + 0.5).astype(int) % n
        out.append(maps[r][:, iy[:, None], ix[None, :]])
    return np.stack(out)


def batch_loss(model: HiNOTE, batch: Batch, cfg: TrainConfig, stage: int = 1,
               maps: np.ndarray | None = None):
    ext = batch.extents
    base = None
    if model.cfg.residual or cfg.loss == "focal":
        base = spectral_resize(batch.lr.astype(np.float64), ext).astype(batch.lr.dtype)
    if cfg.loss == "focal" and not model.cfg.residual:
        raise ValueError("focal loss needs a residual-mode model")
    pred = model(batch.lr, ext, base=base)
    pq = gather_queries(pred, batch.queries)
    tq = _gather_np(batch.hr, batch.queries)
    if cfg.loss == "l1":
        return l1_loss(pq, tq)
    if cfg.loss == "l2" or (cfg.loss == "two-stage" and stage == 1):
        return l2_loss(pq, tq)
    if cfg.loss == "two-stage":
        w = _gather_np(_sample_weights(maps, batch), batch.queries)
        return l2_loss(pq, tq, w)
    # focal: the model output already includes the base; split it back out
    bq = _gather_np(base, batch.queries)
    prior = compute_prior(tq, None, resized=bq)
    resid = ops.sub(pq, ops.constant(bq))
    return focal_composite_loss(resid, bq, tq, prior, cfg.alpha, cfg.beta, cfg.alpha_b, cfg.beta_b)


def validate_model(model: HiNOTE, fields: Sequence[GridField], scale: float) -> float:
    errs = []
    for f in fields:
        pair = make_pair(GridField(np.asarray(f.values, dtype=np.float64), f.box), scale)
        pred = model.predict(pair.lr.values.astype(np.float32), pair.hr.extents)
        errs.append(mse(pred, pair.hr.values))
    return float(np.mean(errs))


def train(model: HiNOTE, data: Sequence[GridField], cfg: TrainConfig, out_dir=None,
          valid: Sequence[GridField] | None = None, resume: dict | None = None,
          stop_at: int | None = None, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run ``cfg.steps`` AdamW steps; batch ``k`` is drawn from ``rng([seed, k])``
    so a resumed run replays the same stream."""
    source = PatchSource(data)
    cfg.validate(source.extent)
    state = AdamState()
    res = TrainResult(model)
    start = 0
    maps = None
    if resume is not None:
        start = int(resume["step"])
        state = resume["adam"]
        maps = resume.get("weight_maps")
        res.best_val = resume.get("best_val", math.inf)
        res.best_step = resume.get("best_step", -1)
        res.regenerations = resume.get("regenerations", 0)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_fh = None
    if out is not None:
        log_path = out / "train_log.csv"
        log_fh = open(log_path, "a" if resume is not None else "w", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        if resume is None:
            writer.writerow(LOG_HEADER)
    params = list(model.named_parameters())
    val_scale = cfg.val_scale or cfg.scale_hi
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    t0 = time.perf_counter()
    try:
        for step in range(start, end):
            stage = 1
            if cfg.loss == "two-stage" and step >= cfg.boundary:
                stage = 2
                if maps is None:
                    maps = stage_two_weights(model, source, cfg)
                    res.regenerations += 1
            batch = make_batch(source, cfg, np.random.default_rng([cfg.seed, step]))
            model.zero_grad()
            with Tape() as tape:
                loss = batch_loss(model, batch, cfg, stage, maps)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(step, value, _param_norms(model))
                tape.backward(loss)
            lr = cfg.lr_at(step)
            adamw_step(params, state, cfg, lr)
            res.log.append((step, value, lr))
            if log_fh is not None:
                writer.writerow([step, f"{value:.9g}", f"{lr:.9g}"])
            if progress is not None:
                progress(step, value)
            last = step == cfg.steps - 1
            if valid and (last or (cfg.val_every and (step + 1) % cfg.val_every == 0)):
                val = validate_model(model, valid, val_scale)
                log.info("step %d val mse %.4g", step, val)
                if val < res.best_val:
                    res.best_val, res.best_step = val, step
                    if out is not None:
                        save_checkpoint(out / "best.ckpt", model, state, cfg, step + 1, res, maps)
    finally:
        if log_fh is not None:
            log_fh.close()
    res.seconds = time.perf_counter() - t0
    res.weight_maps = maps
    if out is not None:
        save_checkpoint(out / "final.ckpt", model, state, cfg, end, res, maps)
    return res


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: HiNOTE, state: AdamState | None = None, cfg: TrainConfig | None = None,
                    step: int = 0, res: TrainResult | None = None, maps: np.ndarray | None = None) -> None:
    """Parameters plus optimizer moments in FSRCKPT1; configs in ``<path>.json``."""
    arrays = dict(model.state_dict())
    if state is not None:
        for name in arrays.copy():
            if name in state.m:
                arrays[f"adam.m/{name}"] = state.m[name]
                arrays[f"adam.v/{name}"] = state.v[name]
    if maps is not None:
        arrays["stage2.weights"] = maps
    checkpoint.save(path, arrays)
    meta = {
        "model": model.cfg.to_dict(),
        "train": asdict(cfg) if cfg is not None else None,
        "step": step,
        "adam_step": state.step if state is not None else 0,
        "best_val": None if res is None or not math.isfinite(res.best_val) else res.best_val,
        "best_step": -1 if res is None else res.best_step,
        "regenerations": 0 if res is None else res.regenerations,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[HiNOTE, dict]:
    meta_path = Path(str(path) + ".json")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing checkpoint metadata {meta_path}")
    meta = json.loads(meta_path.read_text())
    arrays = checkpoint.load(path)
    model = HiNOTE(ModelConfig.from_dict(meta["model"]))
    own = {k: v for k, v in arrays.items() if not k.startswith(("adam.", "stage2."))}
    model.load_state_dict(own)
    state = AdamState(step=meta.get("adam_step", 0))
    for k, v in arrays.items():
        if k.startswith("adam.m/"):
            state.m[k[7:]] = v.copy()
        elif k.startswith("adam.v/"):
            state.v[k[7:]] = v.copy()
    resume = {
        "step": meta.get("step", 0),
        "adam": state,
        "weight_maps": arrays["stage2.weights"] if "stage2.weights" in arrays else None,
        "best_val": meta["best_val"] if meta.get("best_val") is not None else math.inf,
        "best_step": meta.get("best_step", -1),
        "regenerations": meta.get("regenerations", 0),
        "train": meta.get("train"),
    }
    return model, resume


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvalRow:
    method: str
    record: int
    scale: float
    mse: float
    psnr: float
    ssim: float


def evaluate(model, fields: Sequence[GridField], scales: Sequence[float],
             baselines: Sequence[str] = INTERP_METHODS, degrade: str = "spectral") -> list[EvalRow]:
    """Full-field metrics per record and scale for the model and interpolation
    baselines.  ``model`` is a HiNOTE or any callable ``(lr, extents) -> field``.

    Scales that would shrink the LR grid below the minimum extent are skipped
    with a warning; if none remain a ValueError is raised.
    """
    predict = model.predict if isinstance(model, HiNOTE) else model
    if not fields:
        raise ValueError("no records to evaluate")
    usable = [s for s in scales if min(lr_extents(fields[0].extents, s)) >= MIN_LR_EXTENT]
    for s in scales:
        if s not in usable:
            log.warning("skipping scale %g: LR extents %s below minimum %d",
                        s, lr_extents(fields[0].extents, s), MIN_LR_EXTENT)
    if not usable:
        raise ValueError(f"every requested scale leaves fewer than {MIN_LR_EXTENT} LR cells "
                         f"on the {fields[0].extents} grid")
    rows = []
    for s in usable:
        for i, f in enumerate(fields):
            pair = make_pair(GridField(np.asarray(f.values, dtype=np.float64), f.box), s, degrade)
            hr = pair.hr.values
            lr = pair.lr.values
            outs = {"hinote": np.asarray(predict(lr.astype(np.float32), hr.shape[-2:]), dtype=np.float64)}
            for m in baselines:
                outs[m] = interpolate(lr, hr.shape[-2:], m)
            for name, pred in outs.items():
                rows.append(EvalRow(name, i, float(s), mse(pred, hr), psnr(pred, hr), ssim(pred, hr)))
    return rows


def summarize(rows: Sequence[EvalRow]) -> list[tuple]:
    keys = sorted({(r.method, r.scale) for r in rows}, key=lambda k: (k[1], k[0]))
    out = []
    for method, scale in keys:
        sel = [r for r in rows if r.method == method and r.scale == scale]
        out.append((method, scale, float(np.mean([r.mse for r in sel])),
                    float(np.mean([r.psnr for r in sel])), float(np.mean([r.ssim for r in sel]))))
    return out


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.9g}"


def write_metrics(out_dir, rows: Sequence[EvalRow]) -> list[Path]:
    """``metrics_<method>.csv`` per method plus ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for method in dict.fromkeys(r.method for r in rows):
        path = out / f"metrics_{method}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_HEADER)
            for r in rows:
                if r.method == method:
                    w.writerow([r.record, f"{r.scale:g}", _fmt(r.mse), _fmt(r.psnr), _fmt(r.ssim)])
        paths.append(path)
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "scale", "mse", "psnr", "ssim"))
        for method, scale, m, p, s in summarize(rows):
            w.writerow([method, f"{scale:g}", _fmt(m), _fmt(p), _fmt(s)])
    paths.append(path)
    return paths
