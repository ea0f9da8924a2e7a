"""The four training procedures (supervised, mixture-of-mixtures,
bootstrapped-remix teacher-student, zero-shot adaptation), the teacher-update
protocols, and the Adam optimizer with its halving learning-rate schedule.

One training run is single-threaded and fully determined by its TrainConfig:
model init, batch order, remix permutations and evaluation data all derive
from the config seed, so reruns produce byte-identical metrics CSVs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datagen
from .datagen import DatasetView, DomainSpec, gen_views
from .metrics import neg_si_sdr_loss_and_grad_rows, si_sdr
from .separator import (
    ModelConfig,
    ModelState,
    backward,
    blend_params,
    forward,
    init_model,
    save_checkpoint,
    separate,
)
from .signal_core import BatchPermutation, WaveBatch, sample_permutation

__all__ = [
    "TrainingDivergedError",
    "TeacherProtocol",
    "TrainConfig",
    "OptimizerState",
    "TrainResult",
    "lr_at_epoch",
    "init_optimizer",
    "optimizer_step",
    "slot_loss_and_grad",
    "supervised_step",
    "mixit_make_mom",
    "mixit_loss",
    "mixit_step",
    "bootstrap_remix",
    "remixit_epoch",
    "update_teacher",
    "zero_shot_adapt",
    "evaluate_separator",
    "model_separate_fn",
    "run_training",
    "parse_train_config",
    "load_train_config",
    "metrics_csv",
    "METRICS_HEADER",
]

METRICS_HEADER = "epoch,mode,si_sdr,si_sdri,loss,teacher_version,lr"

MODES = ("supervised", "mixit", "remixit", "zeroshot")

# Seed-derivation salts; every RNG in a run comes from (config.seed, salt).
_SALT_MODEL = 11
_SALT_ORDER = 13
_SALT_PERM = 14

# Index offsets keeping train/eval/probe items disjoint within one domain.
EVAL_INDEX_START = 1_000_000
PROBE_INDEX_START = 2_000_000


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries the location."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


def derive_seed(seed: int, salt: int) -> int:
    """Deterministic child seed from (seed, salt) via the Philox keying."""
    gen = np.random.Generator(np.random.Philox(key=[seed, salt]))
    return int(gen.integers(0, 2**32))


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, salt]))


@dataclass(frozen=True)
class TeacherProtocol:
    """How the teacher tracks the student across epochs.

    static: never updated. sequential: replaced by the student every k
    epochs. ema: blended toward the student with rate gamma once per epoch.
    """

    kind: str = "static"
    k: int = 20
    gamma: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in ("static", "sequential", "ema"):
            raise ValueError(f"unknown teacher protocol {self.kind!r}")
        if self.k < 1:
            raise ValueError(f"sequential period must be >= 1, got {self.k}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"ema gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TrainConfig:
    """Full description of one experiment."""

    mode: str
    data_spec: DomainSpec
    train_count: int
    epochs: int
    model: ModelConfig
    batch: int = 8
    lr0: float = 1e-3
    lr_halving_period: int = 6
    protocol: TeacherProtocol = TeacherProtocol()
    student_model: ModelConfig | None = None
    noise_fraction: float = 0.2
    eval_count: int = 64
    probe_count: int = 0
    remix_permute: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.train_count < 1 or self.epochs < 0 or self.batch < 1:
            raise ValueError("train_count >= 1, epochs >= 0, batch >= 1 required")
        if self.lr_halving_period < 1:
            raise ValueError("lr_halving_period must be >= 1")
        if self.mode == "mixit":
            if not 0.0 < self.noise_fraction < 1.0:
                raise ValueError("mixit needs a noise_only split: 0 < noise_fraction < 1")
            if self.model.num_slots != 3:
                raise ValueError("mixit requires a 3-slot model")
        if self.mode in ("supervised", "remixit", "zeroshot"):
            target = self.student_model if self.student_model else self.model
            if self.mode != "supervised" and target.num_slots != 2:
                raise ValueError("remixit/zeroshot students must have 2 slots")


# --------------------------------------------------------------------------
# Optimizer and schedule
# --------------------------------------------------------------------------


def lr_at_epoch(lr0: float, period: int, epoch: int) -> float:
    """Halving schedule: lr0 / 2**floor(epoch / period)."""
    if period < 1:
        raise ValueError("period must be >= 1")
    return lr0 / 2.0 ** (epoch // period)


@dataclass(frozen=True)
class OptimizerState:
    """Adam first/second moments, step counter and the current lr."""

    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(num_params: int, lr: float) -> OptimizerState:
    return OptimizerState(np.zeros(num_params), np.zeros(num_params), 0, lr)


def optimizer_step(
    opt: OptimizerState, params: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update; pure (returns new params and state)."""
    if params.shape != grads.shape or params.shape != opt.m.shape:
        raise ValueError("params/grads/moment lengths do not match")
    if not np.isfinite(grads).all():
        raise TrainingDivergedError("non-finite gradient passed to the optimizer")
    t = opt.t + 1
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grads
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grads**2
    m_hat = m / (1.0 - opt.beta1**t)
    v_hat = v / (1.0 - opt.beta2**t)
    new_params = params - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return new_params, replace(opt, m=m, v=v, t=t)


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def slot_loss_and_grad(
    est: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Negative SI-SDR per (slot, item), summed over slots and averaged over
    the batch; gradient matches that reduction."""
    losses, grads = neg_si_sdr_loss_and_grad_rows(est, targets)
    batch = est.shape[1]
    if not np.isfinite(losses).all():
        raise TrainingDivergedError("non-finite training loss")
    return float(losses.sum(axis=0).mean()), grads / batch


def supervised_step(
    model: ModelState,
    opt: OptimizerState,
    speech: WaveBatch,
    noise: WaveBatch,
    mixture: WaveBatch,
) -> tuple[ModelState, OptimizerState, float]:
    """One paired-data step: separate the mixture, match (speech, noise)."""
    est, cache = forward(model, mixture)
    targets = np.stack([speech.data, noise.data])
    loss, grad = slot_loss_and_grad(est.sources, targets)
    grad_params = backward(cache, grad)
    new_params, opt = optimizer_step(opt, model.params, grad_params)
    return ModelState(new_params, model.config, model.version + 1), opt, loss


def mixit_make_mom(m: WaveBatch, n2: WaveBatch) -> WaveBatch:
    """Mixture of mixtures: a noisy mixture plus an extra noise recording."""
    if m.data.shape != n2.data.shape:
        raise ValueError(f"shape mismatch: {m.data.shape} vs {n2.data.shape}")
    return WaveBatch(m.data + n2.data, m.sample_rate)


def mixit_loss(
    est: np.ndarray, m: WaveBatch, n2: WaveBatch
) -> tuple[float, np.ndarray]:
    """Permutation-invariant reassignment loss for 3-slot models.

    Per item, the two noise slots are assigned so that (speech + one noise)
    approximates the original mixture and the other noise approximates the
    extra noise; the cheaper assignment wins, ties go to the (2,3) order,
    and gradients flow only through the winner. Averaged over the batch.
    """
    if est.ndim != 3 or est.shape[0] != 3:
        raise ValueError(f"mixit_loss needs [3, B, T] estimates, got {est.shape}")
    s_hat, n_a, n_b = est[0], est[1], est[2]
    batch = est.shape[1]

    loss_a1, grad_a1 = neg_si_sdr_loss_and_grad_rows(s_hat + n_a, m.data)
    loss_a2, grad_a2 = neg_si_sdr_loss_and_grad_rows(n_b, n2.data)
    loss_b1, grad_b1 = neg_si_sdr_loss_and_grad_rows(s_hat + n_b, m.data)
    loss_b2, grad_b2 = neg_si_sdr_loss_and_grad_rows(n_a, n2.data)

    total_a = loss_a1 + loss_a2
    total_b = loss_b1 + loss_b2
    pick_a = total_a <= total_b  # tie -> first ordering
    per_item = np.where(pick_a, total_a, total_b)
    if not np.isfinite(per_item).all():
        raise TrainingDivergedError("non-finite training loss")

    sel = pick_a[:, None]
    grad = np.empty_like(est)
    grad[0] = np.where(sel, grad_a1, grad_b1)
    grad[1] = np.where(sel, grad_a1, grad_b2)
    grad[2] = np.where(sel, grad_a2, grad_b1)
    return float(per_item.mean()), grad / batch


def mixit_step(
    model: ModelState, opt: OptimizerState, m: WaveBatch, n2: WaveBatch
) -> tuple[ModelState, OptimizerState, float]:
    mom = mixit_make_mom(m, n2)
    est, cache = forward(model, mom)
    loss, grad = mixit_loss(est.sources, m, n2)
    grad_params = backward(cache, grad)
    new_params, opt = optimizer_step(opt, model.params, grad_params)
    return ModelState(new_params, model.config, model.version + 1), opt, loss


# --------------------------------------------------------------------------
# Bootstrapped remixing
# --------------------------------------------------------------------------


def bootstrap_remix(
    teacher_sources: np.ndarray, perm: BatchPermutation
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build remixed training targets from teacher estimates.

    Teacher noise slots are summed into a single noise estimate, that noise
    is permuted across the batch, and the new mixture is speech + permuted
    noise. Returns (speech_target, permuted_noise_target, new_mixture).
    """
    if teacher_sources.ndim != 3 or teacher_sources.shape[0] < 2:
        raise ValueError(f"need [M>=2, B, T] teacher sources, got {teacher_sources.shape}")
    if teacher_sources.shape[1] != perm.size:
        raise ValueError(
            f"batch {teacher_sources.shape[1]} does not match permutation {perm.size}"
        )
    s_tilde = teacher_sources[0]
    n_tilde = teacher_sources[1:].sum(axis=0)
    n_perm = n_tilde[perm.perm]
    return s_tilde, n_perm, s_tilde + n_perm


def remixit_epoch(
    teacher: ModelState,
    student: ModelState,
    data: DatasetView,
    opt: OptimizerState,
    *,
    batch: int,
    order_rng: np.random.Generator,
    perm_rng: np.random.Generator,
    permute: bool = True,
    epoch: int = 0,
) -> tuple[ModelState, OptimizerState, dict]:
    """One pass over a mixtures-only view with teacher-supervised remixing.

    The teacher is frozen for the whole epoch; a fresh batch permutation is
    drawn every step (or the identity when ``permute`` is off, the ablation
    used to study error correlation).
    """
    if data.role != "mixtures_only":
        raise ValueError(f"remixit needs a mixtures_only view, got role {data.role!r}")
    if student.config.num_slots != 2:
        raise ValueError("remixit student must have 2 output slots")

    order = order_rng.permutation(len(data))
    losses = []
    for step, lo in enumerate(range(0, len(order), batch)):
        positions = order[lo : lo + batch]
        (m,) = data.take(positions)
        t_est = separate(teacher, m)
        if permute:
            perm = sample_permutation(perm_rng, m.batch)
        else:
            perm = BatchPermutation.identity(m.batch)
        s_tilde, n_perm, m_tilde = bootstrap_remix(t_est.sources, perm)
        est, cache = forward(student, WaveBatch(m_tilde, m.sample_rate))
        targets = np.stack([s_tilde, n_perm])
        try:
            loss, grad = slot_loss_and_grad(est.sources, targets)
            grad_params = backward(cache, grad)
            new_params, opt = optimizer_step(opt, student.params, grad_params)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(str(err), epoch=epoch, step=step) from None
        student = ModelState(new_params, student.config, student.version + 1)
        losses.append(loss)
    return student, opt, {"mean_loss": float(np.mean(losses)) if losses else 0.0,
                          "steps": len(losses)}


def update_teacher(
    protocol: TeacherProtocol, teacher: ModelState, student: ModelState, epoch: int
) -> ModelState:
    """Apply the protocol at the end of completed epoch ``epoch`` (1-based).

    static: unchanged. sequential: teacher becomes a copy of the student at
    every k-th epoch. ema: one convex blend toward the student per epoch.
    """
    if protocol.kind == "static":
        return teacher
    if protocol.kind == "sequential":
        if epoch > 0 and epoch % protocol.k == 0:
            return ModelState(student.params, student.config, teacher.version + 1)
        return teacher
    return blend_params(student, teacher, protocol.gamma)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def evaluate_separator(separate_fn, eval_view: DatasetView, batch: int = 32) -> tuple[float, float]:
    """Mean clamped SI-SDR and SI-SDR improvement of the speech slot over a
    paired view. ``separate_fn`` maps a WaveBatch to an [M, B, T] array."""
    if eval_view.role != "paired":
        raise ValueError(f"evaluation requires a paired view, got {eval_view.role!r}")
    scores = []
    gains = []
    for lo in range(0, len(eval_view), batch):
        positions = np.arange(lo, min(lo + batch, len(eval_view)))
        s, _, m = eval_view.take(positions)
        est = separate_fn(m)
        for b in range(m.batch):
            val = si_sdr(est[0, b], s.data[b]).value_db
            base = si_sdr(m.data[b], s.data[b]).value_db
            scores.append(val)
            gains.append(val - base)
    return float(np.mean(scores)), float(np.mean(gains))


def model_separate_fn(state: ModelState):
    return lambda m: separate(state, m).sources


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------


@dataclass
class ProbeRecord:
    epoch: int
    student_speech: np.ndarray
    teacher_speech: np.ndarray
    clean_speech: np.ndarray


@dataclass
class TrainResult:
    student: ModelState
    teacher: ModelState | None
    rows: list[dict]
    csv_text: str
    audit: dict[str, int]
    probes: list[ProbeRecord] = field(default_factory=list)

    @property
    def final_si_sdri(self) -> float | None:
        return self.rows[-1]["si_sdri"] if self.rows else None


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def metrics_csv(rows: list[dict]) -> str:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r['epoch']},{r['mode']},{_fmt(r['si_sdr'])},{_fmt(r['si_sdri'])},"
            f"{_fmt(r['loss'])},{r['teacher_version']},{_fmt(r['lr'])}"
        )
    return "\n".join(lines) + "\n"


def _build_views(cfg: TrainConfig) -> dict[str, DatasetView]:
    if cfg.mode == "supervised":
        split = {"paired": 1.0}
    elif cfg.mode == "mixit":
        split = {"mixtures_only": 1.0 - cfg.noise_fraction,
                 "noise_only": cfg.noise_fraction}
    else:
        split = {"mixtures_only": 1.0}
    return gen_views(cfg.data_spec, cfg.train_count, split)


def run_training(
    cfg: TrainConfig,
    teacher: ModelState | None = None,
    out_dir: str | Path | None = None,
    views: dict[str, DatasetView] | None = None,
    eval_view: DatasetView | None = None,
) -> TrainResult:
    """Run one experiment end to end; deterministic given cfg (and teacher).

    Teacher checkpoints are required for remixit/zeroshot. Writes
    metrics.csv, model.ckpt and probe tensors under ``out_dir`` when given.
    """
    if cfg.mode in ("remixit", "zeroshot") and teacher is None:
        raise ValueError(f"mode {cfg.mode!r} requires a pretrained teacher")

    if views is None:
        views = _build_views(cfg)
    if eval_view is None:
        eval_view = gen_views(
            cfg.data_spec, cfg.eval_count, {"paired": 1.0},
            start_index=EVAL_INDEX_START,
        )["paired"]

    probe_view = None
    if cfg.probe_count > 0 and cfg.mode in ("remixit", "zeroshot"):
        probe_view = gen_views(
            cfg.data_spec, cfg.probe_count, {"paired": 1.0},
            start_index=PROBE_INDEX_START,
        )["paired"]

    # student initialization
    if cfg.mode == "zeroshot":
        student = ModelState(teacher.params, teacher.config, teacher.version)
    elif cfg.mode in ("supervised", "mixit"):
        seed = derive_seed(cfg.seed, _SALT_MODEL)
        student = init_model(replace(cfg.model, seed=seed))
    else:
        base = cfg.student_model if cfg.student_model else cfg.model
        seed = derive_seed(cfg.seed, _SALT_MODEL)
        student = init_model(replace(base, seed=seed))

    cur_teacher = teacher
    protocol = cfg.protocol
    if cfg.mode == "zeroshot" and protocol.kind != "ema":
        protocol = TeacherProtocol("ema", gamma=0.01)

    opt = init_optimizer(student.params.size, cfg.lr0)
    order_rng = _rng(cfg.seed, _SALT_ORDER)
    perm_rng = _rng(cfg.seed, _SALT_PERM)

    rows: list[dict] = []
    probes: list[ProbeRecord] = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        opt = replace(opt, lr=lr_at_epoch(cfg.lr0, cfg.lr_halving_period, epoch))
        teacher_version = cur_teacher.version if cur_teacher is not None else 0

        if cfg.mode == "supervised":
            student, opt, mean_loss = _supervised_epoch(
                student, views["paired"], opt, cfg.batch, order_rng, epoch
            )
        elif cfg.mode == "mixit":
            student, opt, mean_loss = _mixit_epoch(
                student, views["mixtures_only"], views["noise_only"], opt,
                cfg.batch, order_rng, epoch,
            )
        else:
            student, opt, stats = remixit_epoch(
                cur_teacher, student, views["mixtures_only"], opt,
                batch=cfg.batch, order_rng=order_rng, perm_rng=perm_rng,
                permute=cfg.remix_permute, epoch=epoch,
            )
            mean_loss = stats["mean_loss"]

        if probe_view is not None:
            probes.append(_record_probe(epoch, student, cur_teacher, probe_view))

        if cfg.mode in ("remixit", "zeroshot"):
            cur_teacher = update_teacher(protocol, cur_teacher, student, epoch + 1)

        val, gain = evaluate_separator(model_separate_fn(student), eval_view)
        rows.append({
            "epoch": epoch,
            "mode": cfg.mode,
            "si_sdr": val,
            "si_sdri": gain,
            "loss": mean_loss,
            "teacher_version": teacher_version,
            "lr": opt.lr,
        })

    csv_text = metrics_csv(rows)
    audit = {role: view.reads for role, view in views.items()}

    if out_path is not None:
        (out_path / "metrics.csv").write_text(csv_text)
        save_checkpoint(out_path / "model.ckpt", student)
        if cur_teacher is not None:
            save_checkpoint(out_path / "teacher_final.ckpt", cur_teacher)
        if probes:
            probe_dir = out_path / "probes"
            probe_dir.mkdir(exist_ok=True)
            for rec in probes:
                np.savez(
                    probe_dir / f"epoch_{rec.epoch:04d}.npz",
                    student_speech=rec.student_speech,
                    teacher_speech=rec.teacher_speech,
                    clean_speech=rec.clean_speech,
                )

    return TrainResult(student, cur_teacher, rows, csv_text, audit, probes)


def _supervised_epoch(model, view, opt, batch, order_rng, epoch):
    if view.role != "paired":
        raise ValueError(f"supervised training needs a paired view, got {view.role!r}")
    order = order_rng.permutation(len(view))
    losses = []
    for step, lo in enumerate(range(0, len(order), batch)):
        s, n, m = view.take(order[lo : lo + batch])
        try:
            model, opt, loss = supervised_step(model, opt, s, n, m)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(str(err), epoch=epoch, step=step) from None
        losses.append(loss)
    return model, opt, float(np.mean(losses))


def _mixit_epoch(model, mix_view, noise_view, opt, batch, order_rng, epoch):
    if mix_view.role != "mixtures_only" or noise_view.role != "noise_only":
        raise ValueError("mixit training needs mixtures_only and noise_only views")
    order = order_rng.permutation(len(mix_view))
    noise_order = order_rng.permutation(len(noise_view))
    noise_pos = 0
    losses = []
    for step, lo in enumerate(range(0, len(order), batch)):
        positions = order[lo : lo + batch]
        (m,) = mix_view.take(positions)
        picks = []
        for _ in range(len(positions)):
            if noise_pos >= len(noise_order):
                noise_order = order_rng.permutation(len(noise_view))
                noise_pos = 0
            picks.append(noise_order[noise_pos])
            noise_pos += 1
        (n2,) = noise_view.take(np.array(picks))
        try:
            model, opt, loss = mixit_step(model, opt, m, n2)
        except TrainingDivergedError as err:
            raise TrainingDivergedError(str(err), epoch=epoch, step=step) from None
        losses.append(loss)
    return model, opt, float(np.mean(losses))


def _record_probe(epoch, student, teacher, probe_view) -> ProbeRecord:
    s, _, m = probe_view.take(np.arange(len(probe_view)))
    student_speech = separate(student, m).sources[0]
    teacher_speech = separate(teacher, m).sources[0]
    return ProbeRecord(epoch, student_speech, teacher_speech, s.data.copy())


def zero_shot_adapt(
    pretrained: ModelState, adapt_set: DatasetView, cfg: TrainConfig
) -> ModelState:
    """Adapt a pretrained model on unlabeled mixtures from a new domain.

    The student starts as an exact copy of the pretrained model and trains
    with remixed teacher targets while the teacher drifts after it via a
    slow moving average (gamma defaults to 0.01).
    """
    if len(adapt_set) < 1:
        raise ValueError("adaptation set is empty")
    if adapt_set.role != "mixtures_only":
        raise ValueError(f"adaptation needs a mixtures_only view, got {adapt_set.role!r}")
    gamma = cfg.protocol.gamma if cfg.protocol.kind == "ema" else 0.01
    protocol = TeacherProtocol("ema", gamma=gamma)

    student = ModelState(pretrained.params, pretrained.config, pretrained.version)
    teacher = pretrained
    opt = init_optimizer(student.params.size, cfg.lr0)
    order_rng = _rng(cfg.seed, _SALT_ORDER)
    perm_rng = _rng(cfg.seed, _SALT_PERM)
    for epoch in range(cfg.epochs):
        opt = replace(opt, lr=lr_at_epoch(cfg.lr0, cfg.lr_halving_period, epoch))
        student, opt, _ = remixit_epoch(
            teacher, student, adapt_set, opt,
            batch=cfg.batch, order_rng=order_rng, perm_rng=perm_rng,
            permute=cfg.remix_permute, epoch=epoch,
        )
        teacher = update_teacher(protocol, teacher, student, epoch + 1)
    return student


# --------------------------------------------------------------------------
# Config files (flat key = value text)
# --------------------------------------------------------------------------

_CONFIG_KEYS = {
    "mode", "batch", "epochs", "lr0", "lr_halving_period",
    "protocol", "protocol_k", "protocol_gamma",
    "model_slots", "model_filters", "model_filter_len", "model_hop",
    "model_hidden", "model_depth", "model_seed", "student_depth",
    "data_spec", "train_count", "noise_fraction", "eval_count",
    "probe_count", "remix_permute", "seed",
}


def parse_train_config(text: str, base_dir: str | Path = ".") -> TrainConfig:
    """Parse the experiment config format; unknown keys are errors."""
    kv = datagen.parse_kv_text(text)
    unknown = sorted(set(kv) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    for required in ("mode", "data_spec", "train_count", "epochs"):
        if required not in kv:
            raise ValueError(f"config missing required key {required!r}")

    def geti(key: str, default: int) -> int:
        return int(kv[key]) if key in kv else default

    def getf(key: str, default: float) -> float:
        return float(kv[key]) if key in kv else default

    def getb(key: str, default: bool) -> bool:
        if key not in kv:
            return default
        val = kv[key].lower()
        if val not in ("true", "false", "1", "0"):
            raise ValueError(f"key {key!r} must be true/false, got {kv[key]!r}")
        return val in ("true", "1")

    spec_ref = kv["data_spec"]
    if spec_ref in ("DOMAIN_A", "DOMAIN_B"):
        spec = datagen.builtin_domain(spec_ref)
    else:
        spec = datagen.load_domain_spec(Path(base_dir) / spec_ref)

    mode = kv["mode"]
    slots_default = 3 if mode == "mixit" else 2
    seed = geti("seed", 0)
    model = ModelConfig(
        num_slots=geti("model_slots", slots_default),
        num_filters=geti("model_filters", 32),
        filter_len=geti("model_filter_len", 16),
        hop=geti("model_hop", 8),
        hidden_width=geti("model_hidden", 64),
        depth=geti("model_depth", 2),
        seed=geti("model_seed", 0),
    )
    student_model = None
    if "student_depth" in kv:
        student_model = replace(model, depth=int(kv["student_depth"]))

    protocol = TeacherProtocol(
        kind=kv.get("protocol", "ema" if mode == "zeroshot" else "static"),
        k=geti("protocol_k", 20),
        gamma=getf("protocol_gamma", 0.01),
    )

    return TrainConfig(
        mode=mode,
        data_spec=spec,
        train_count=int(kv["train_count"]),
        epochs=int(kv["epochs"]),
        model=model,
        batch=geti("batch", 8),
        lr0=getf("lr0", 1e-3),
        lr_halving_period=geti("lr_halving_period", 6),
        protocol=protocol,
        student_model=student_model,
        noise_fraction=getf("noise_fraction", 0.2),
        eval_count=geti("eval_count", 64),
        probe_count=geti("probe_count", 0),
        remix_permute=getb("remix_permute", True),
        seed=seed,
    )


def load_train_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    return parse_train_config(path.read_text(), base_dir=path.parent)
