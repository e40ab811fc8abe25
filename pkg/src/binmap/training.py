"""Loss assembly and the two-stage training schedule.

Stage 1 trains the two embedders f and g with the matching loss alone (no
compression in the loop). Stage 2 inserts the compression encoder/decoder
and optimizes end-to-end through the straight-through binarizer:

    total = matching NLL + lambda1 * code-length surrogate
                         + lambda2 * hard-binarization penalty

`mode="recon"` swaps the matching term for a reconstruction error between
the decoded and uncompressed map embeddings (the classic learning-to-
compress objective); the embedders stay frozen there, since nothing ties the
reconstruction target down if g itself can drift.

All three terms are nonnegative quantities to be minimized; entropies use
natural log internally, and bits (log2) only for reporting.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import embednet, matcher
from .autograd import AdamState, Tensor, adam_step
from .embednet import NetConfig, ParamStore
from .synthworld import SampleSet
from .rng import Rng


@dataclass
class LossConfig:
    lambda1: float = 0.1        # code-length weight
    lambda2: float = 0.01       # hard-binarization weight
    mode: str = "match"         # match | recon
    recon_anchor: float = 0.0   # match mode: extra fidelity term tethering the
                                # decoded embedding to the uncompressed one; a
                                # desk-scale regularizer against code overfit

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.recon_anchor < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.mode not in ("match", "recon"):
            raise ValueError("mode must be 'match' or 'recon'")


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 30
    lr: float = 1e-3
    seed: int = 0
    freeze_embedders: bool = False  # stage 2 fine-tunes f,g unless set
    warmup_epochs: int = 2          # stage 2: reconstruction-only compressor
    log_path: str | None = None


@dataclass
class TrainState:
    store: ParamStore
    net_cfg: NetConfig
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    history: list = field(default_factory=list)


@contextmanager
def inference_mode(store: ParamStore):
    """Temporarily drop gradient tracking for cheap evaluation passes."""
    flags = {n: p.requires_grad for n, p in store.items()}
    for _, p in store.items():
        p.requires_grad = False
    try:
        yield
    finally:
        for n, p in store.items():
            p.requires_grad = flags[n]


# ---------------------------------------------------------------------------
# loss terms


def loss_loc(probs, gt_index) -> Tensor:
    """Matching NLL: -log prob at the ground-truth volume index."""
    if isinstance(probs, matcher.ScoreVolume):
        probs = probs.probs
    return ag.cross_entropy(probs, gt_index)


def loss_codelen(probs: Tensor) -> Tensor:
    """Entropy of the mean channel probability (code-length surrogate).

    probs: (B, G*K, h, w) grouped-softmax output. The per-channel mean over
    batch and pixels is one distribution per group; summing -p ln p over all
    channels adds the per-group entropies.
    """
    pbar = ag.mean_over(probs, (0, 2, 3))
    return ag.entropy_sum(pbar)


def loss_hardbin(probs: Tensor) -> Tensor:
    """Mean per-pixel entropy; zero when every pixel is exactly one-hot."""
    b, _, h, w = probs.shape
    return ag.scale(ag.entropy_sum(probs), 1.0 / (b * h * w))


# ---------------------------------------------------------------------------
# forward passes


def _match_scores(map_emb: Tensor, f_emb: Tensor, angles, search_cells: int) -> Tensor:
    """Rotate + correlate, cropped to the centered search window."""
    S = f_emb.shape[-1]
    crop = map_emb.shape[-1]
    r0 = (crop - S + 1 - search_cells) // 2
    return matcher.score_windows(map_emb, f_emb, angles,
                                 rot_center=(S // 2, S // 2),
                                 window=(r0, r0, search_cells, search_cells))


def stage1_forward(store: ParamStore, cfg: NetConfig, crops, sweeps, angles,
                   search_cells: int = 21) -> Tensor:
    """Map/online embeddings -> per-sample score volumes (B, A, s, s)."""
    g_emb = embednet.embed(crops, store, "g", cfg)
    f_emb = embednet.embed(sweeps, store, "f", cfg)
    return _match_scores(g_emb, f_emb, angles, search_cells)


def stage2_forward(store: ParamStore, cfg: NetConfig, crops, sweeps, angles,
                   loss_cfg: LossConfig, gt_flat=None, search_cells: int = 21,
                   bypass_compression: bool = False):
    """Full compressed pipeline; returns (total, parts, scores, comp_probs).

    bypass_compression feeds the uncompressed map embedding to the matcher;
    with lambda1 = lambda2 = 0 that reduces the stage-2 objective to stage 1.
    """
    g_emb = embednet.embed(crops, store, "g", cfg)
    comp_probs, bits = embednet.compress_forward(g_emb, store, cfg)
    dec_emb = g_emb if bypass_compression else embednet.decode(bits, store, cfg)
    l_code = loss_codelen(comp_probs)
    l_hard = loss_hardbin(comp_probs)
    scores = None
    if loss_cfg.mode == "match":
        f_emb = embednet.embed(sweeps, store, "f", cfg)
        scores = _match_scores(dec_emb, f_emb, angles, search_cells)
        l_task = ag.score_nll(scores, gt_flat)  # log-space NLL; cannot underflow
        if loss_cfg.recon_anchor > 0 and not bypass_compression:
            l_task = ag.add(l_task, ag.scale(
                ag.power_normalized_mse(dec_emb, g_emb.detach()),
                loss_cfg.recon_anchor))
    else:
        l_task = ag.power_normalized_mse(dec_emb, g_emb.detach())
    total = ag.add(l_task, ag.add(ag.scale(l_code, loss_cfg.lambda1),
                                  ag.scale(l_hard, loss_cfg.lambda2)))
    parts = {"task": l_task.item(), "codelen": l_code.item(), "hardbin": l_hard.item()}
    return total, parts, scores, comp_probs


def topk_counts(scores: np.ndarray, gt_cell: np.ndarray) -> tuple[int, int]:
    """top-1: argmax lands on the GT pixel; top-9: within its 3x3 block."""
    B, A, s, _ = scores.shape
    flat = scores.reshape(B, -1)
    am = flat.argmax(axis=1)
    ay = (am % (s * s)) // s
    ax = am % s
    dy = np.abs(ay - gt_cell[:, 0])
    dx = np.abs(ax - gt_cell[:, 1])
    top1 = int(((dy == 0) & (dx == 0)).sum())
    top9 = int(((dy <= 1) & (dx <= 1)).sum())
    return top1, top9


def entropy_bits_per_code_px(channel_mean: np.ndarray) -> float:
    """Code-length surrogate in bits per code pixel from mean channel probs."""
    p = np.asarray(channel_mean, dtype=np.float64)
    pos = p > 0
    return float(-(p[pos] * np.log2(p[pos])).sum())


# ---------------------------------------------------------------------------
# the training loop


LOG_HEADER = "epoch,loss,task,codelen,hardbin,entropy_bits,top1,top9"


def train(stage: int, dataset: SampleSet, net_cfg: NetConfig,
          store: ParamStore | None = None,
          loss_cfg: LossConfig = LossConfig(),
          train_cfg: TrainConfig = TrainConfig()) -> TrainState:
    """Run one training stage; returns the trained state.

    stage 1 needs no prior store (fresh init); stage 2 requires the stage-1
    parameters. A NaN/Inf loss or gradient aborts the run and restores the
    last end-of-epoch snapshot.
    """
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    if stage == 2 and store is None:
        raise ValueError("stage 2 requires a stage-1 parameter store")
    if store is None:
        store = embednet.init_params(net_cfg, seed=train_cfg.seed)

    def apply_trainability():
        if stage == 1:
            store.set_trainable(("f.", "g.", "comp."), True)
            store.set_trainable(("comp.",), False)
        else:
            store.set_trainable(("f.", "g.", "comp."), True)
            if train_cfg.freeze_embedders or loss_cfg.mode == "recon":
                store.set_trainable(("f.", "g."), False)

    apply_trainability()
    state = TrainState(store, net_cfg)
    # stage-2 warmup: the fresh compressor first learns to pass the frozen
    # map embedding through its bits (reconstruction only) so the end-to-end
    # objective starts from a code that carries signal
    warmup = train_cfg.warmup_epochs if stage == 2 else 0
    shuffle_rng = Rng(train_cfg.seed).spawn(777)
    offsets = dataset.rotation_offsets
    n = len(dataset)
    bs = train_cfg.batch_size
    last_good = store.snapshot()
    log_rows = []

    for epoch in range(train_cfg.epochs + warmup):
        in_warmup = epoch < warmup
        if in_warmup:
            store.set_trainable(("f.", "g.", "comp."), True)
            store.set_trainable(("f.", "g."), False)
        elif epoch == warmup:
            apply_trainability()
        order = shuffle_rng.permutation(n)
        tot = {"loss": 0.0, "task": 0.0, "codelen": 0.0, "hardbin": 0.0}
        top1 = top9 = seen = 0
        chan_mean = None
        nb = 0
        diverged = False
        for b0 in range(0, n - bs + 1, bs):
            idx = order[b0:b0 + bs]
            crops = Tensor(dataset.crops[idx])
            sweeps = Tensor(dataset.sweeps[idx])
            angles = dataset.headings[idx][:, None] + offsets[None, :]
            gt = dataset.gt_flat[idx]
            store.zero_grads()
            if stage == 1:
                scores = stage1_forward(store, net_cfg, crops, sweeps, angles,
                                        dataset.cfg.search_cells)
                total = ag.score_nll(scores, gt)
                parts = {"task": total.item(), "codelen": 0.0, "hardbin": 0.0}
                comp_probs = None
            else:
                cfg_now = (LossConfig(0.0, 0.0, "recon") if in_warmup else loss_cfg)
                total, parts, scores, comp_probs = stage2_forward(
                    store, net_cfg, crops, sweeps, angles, cfg_now, gt,
                    dataset.cfg.search_cells)
            if not math.isfinite(total.item()):
                diverged = True
                break
            total.backward()
            bad = False
            for _, p in store.trainable().items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    bad = True
                    break
            if bad:
                diverged = True
                break
            adam_step(store.trainable(), state.adam, lr=train_cfg.lr)
            tot["loss"] += total.item()
            for k in ("task", "codelen", "hardbin"):
                tot[k] += parts[k]
            if scores is not None:
                t1, t9 = topk_counts(scores.data, dataset.gt_cell[idx])
                top1 += t1
                top9 += t9
                seen += len(idx)
            if comp_probs is not None:
                cm = comp_probs.data.mean(axis=(0, 2, 3), dtype=np.float64)
                chan_mean = cm if chan_mean is None else chan_mean + cm
            nb += 1
        if diverged:
            store.restore(last_good)
            break
        last_good = store.snapshot()
        state.epoch = epoch + 1
        row = {
            "epoch": epoch + 1,
            "loss": tot["loss"] / max(nb, 1),
            "task": tot["task"] / max(nb, 1),
            "codelen": tot["codelen"] / max(nb, 1),
            "hardbin": tot["hardbin"] / max(nb, 1),
            "entropy_bits": (entropy_bits_per_code_px(chan_mean / nb)
                             if chan_mean is not None else float("nan")),
            "top1": top1 / seen if seen else float("nan"),
            "top9": top9 / seen if seen else float("nan"),
        }
        state.history.append(row)
        log_rows.append(",".join(
            [str(row["epoch"])] + [f"{row[k]:.9g}" for k in
                                   ("loss", "task", "codelen", "hardbin",
                                    "entropy_bits", "top1", "top9")]))
    if train_cfg.log_path is not None:
        with open(train_cfg.log_path, "w") as fh:
            fh.write(LOG_HEADER + "\n")
            if log_rows:
                fh.write("\n".join(log_rows) + "\n")
    return state
