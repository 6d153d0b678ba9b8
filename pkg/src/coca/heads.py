"""Trainable classifier heads over frozen features.

Two head kinds: a plain linear layer, and an adapter head that passes the
feature through a bottleneck MLP, mixes it back with the input at a fixed
residual ratio, and scores the re-normalized result against the textual
prototypes at a fixed temperature. Gradients are hand-derived (verified
against finite differences in the test suite); encoders are never touched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import softmax_rows, LOG_EPS
from .prototypes import TextualPrototypeSet

HEAD_MAGIC = b"COCAHEAD"
HEAD_VERSION = 1
_KIND_TAGS = {"linear": 1, "adapter": 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

MODEL_KINDS = ("linear_probe", "adapter", "cross_modal")


def _as_batch(z: np.ndarray) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


class LinearHead:
    kind = "linear"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("inconsistent linear head shapes")

    @classmethod
    def init(cls, num_classes: int, dim: int, seed: int = 0) -> "LinearHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 0.02, size=(num_classes, dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, z: np.ndarray) -> np.ndarray:
        zb, single = _as_batch(z)
        if zb.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        logits = zb @ self.weight.T + self.bias
        return logits[0] if single else logits

    def backward(self, z: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        zb, _ = _as_batch(z)
        dl = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
        return {"weight": dl.T @ zb, "bias": dl.sum(axis=0)}

    def clone(self) -> "LinearHead":
        return LinearHead(self.weight.copy(), self.bias.copy())


class AdapterHead:
    """Bottleneck adapter blended with the input: z' = r*f(z) + (1-r)*z,
    logits = logit_scale * cosine(z', prototypes)."""

    kind = "adapter"

    def __init__(
        self,
        down: np.ndarray,
        up: np.ndarray,
        residual_ratio: float,
        logit_scale: float,
        prototypes: np.ndarray,
    ):
        self.down = np.asarray(down, dtype=np.float64)
        self.up = np.asarray(up, dtype=np.float64)
        self.residual_ratio = float(residual_ratio)
        self.logit_scale = float(logit_scale)
        self.prototypes = np.asarray(prototypes, dtype=np.float64)
        if not 0.0 <= self.residual_ratio <= 1.0:
            raise ValueError("residual ratio must be in [0, 1]")
        if self.logit_scale <= 0.0:
            raise ValueError("logit scale must be positive")

    @classmethod
    def init(
        cls,
        textual: TextualPrototypeSet,
        seed: int = 0,
        residual_ratio: float = 0.2,
        logit_scale: float = 100.0,
    ) -> "AdapterHead":
        rng = np.random.default_rng(seed)
        d = textual.dim
        h = hidden_dim(d)
        down = rng.uniform(-1.0, 1.0, size=(d, h)) * np.sqrt(6.0 / d)
        up = rng.uniform(-1.0, 1.0, size=(h, d)) * np.sqrt(6.0 / h)
        return cls(down, up, residual_ratio, logit_scale, textual.prototypes.copy())

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.down.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"down": self.down, "up": self.up}

    def _trace(self, zb: np.ndarray):
        pre = zb @ self.down
        act = np.maximum(pre, 0.0)
        mixed = self.residual_ratio * (act @ self.up) + (1.0 - self.residual_ratio) * zb
        norms = np.linalg.norm(mixed, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("degenerate adapter output")
        unit = mixed / norms[:, None]
        logits = self.logit_scale * unit @ self.prototypes.T
        return pre, act, norms, unit, logits

    def forward(self, z: np.ndarray) -> np.ndarray:
        zb, single = _as_batch(z)
        if zb.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        logits = self._trace(zb)[4]
        return logits[0] if single else logits

    def backward(self, z: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        zb, _ = _as_batch(z)
        dl = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
        pre, act, norms, unit, _ = self._trace(zb)
        d_unit = self.logit_scale * dl @ self.prototypes
        inner = np.sum(unit * d_unit, axis=1, keepdims=True)
        d_mixed = (d_unit - inner * unit) / norms[:, None]
        d_f = self.residual_ratio * d_mixed
        d_up = act.T @ d_f
        d_act = d_f @ self.up.T
        d_pre = d_act * (pre > 0.0)
        d_down = zb.T @ d_pre
        return {"down": d_down, "up": d_up}

    def clone(self) -> "AdapterHead":
        return AdapterHead(
            self.down.copy(),
            self.up.copy(),
            self.residual_ratio,
            self.logit_scale,
            self.prototypes.copy(),
        )


def hidden_dim(dim: int) -> int:
    return max(1, dim // 4)


# ---------------------------------------------------------------------------
# losses

def image_loss(head, batch: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy of the head on a feature batch, plus gradients.

    Targets are full distributions: one-hot rows for labeled or
    pseudo-labeled samples, uniform rows for UNKNOWN pseudo-labels.
    """
    zb, _ = _as_batch(batch)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if zb.shape[0] == 0:
        raise ValueError("empty batch")
    if t.shape != (zb.shape[0], head.num_classes):
        raise ValueError("target shape mismatch")
    probs = softmax_rows(head.forward(zb))
    loss = float(-np.sum(t * np.log(np.maximum(probs, LOG_EPS))) / zb.shape[0])
    dlogits = _clamped_ce_dlogits(probs, t) / zb.shape[0]
    return loss, head.backward(zb, dlogits)


def _clamped_ce_dlogits(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Exact logit gradient of -sum t*log(max(p, eps)).

    Terms where the clamp is active are locally constant, so they contribute
    nothing; without the clamp this reduces to the usual probs - targets.
    """
    active = targets * (probs > LOG_EPS)
    return active.sum(axis=1, keepdims=True) * probs - active


def text_loss(head, textual: TextualPrototypeSet):
    """Mean cross-entropy of the head on the textual prototypes themselves."""
    targets = np.eye(textual.num_classes)
    return image_loss(head, textual.prototypes, targets)


def soft_consistency_loss(teacher_head, student_head, z_full: np.ndarray, z_masked: np.ndarray):
    """Soft cross-entropy between teacher predictions on the full features
    and student predictions on the masked features; gradients flow only to
    the student (the teacher output is treated as a constant)."""
    zf, _ = _as_batch(z_full)
    zm, _ = _as_batch(z_masked)
    if zf.shape != zm.shape:
        raise ValueError("full/masked batch shape mismatch")
    p_teacher = softmax_rows(teacher_head.forward(zf))
    p_student = softmax_rows(student_head.forward(zm))
    n = zf.shape[0]
    loss = float(-np.sum(p_teacher * np.log(np.maximum(p_student, LOG_EPS))) / n)
    dlogits = _clamped_ce_dlogits(p_student, p_teacher) / n
    return loss, student_head.backward(zm, dlogits)


# ---------------------------------------------------------------------------
# optimization

@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adamw_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamWState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    param -= lr * weight_decay * param
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = {
            name: AdamWState(np.zeros_like(p), np.zeros_like(p)) for name, p in params.items()
        }

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        for name, p in self.params.items():
            adamw_step(p, grads[name], self.state[name], lr if lr is not None else self.lr,
                       self.weight_decay)


@dataclass
class TrainSchedule:
    base_lr: float = 1e-3
    warmup_iters: int = 50
    warmup_floor: float = 1e-5
    total_iters: int = 12800
    weight_decay: float = 0.01
    eval_every: int = 100
    patience: int = 10

    def __post_init__(self):
        if not 0 < self.warmup_iters < self.total_iters:
            raise ValueError("warmup must be positive and shorter than the run")
        if min(self.base_lr, self.warmup_floor, self.eval_every, self.patience) <= 0:
            raise ValueError("schedule fields must be positive")


def lr_at(schedule: TrainSchedule, iteration: int) -> float:
    """Linear warmup from the floor, then cosine annealing to zero."""
    if not 0 <= iteration < schedule.total_iters:
        raise ValueError("iteration outside schedule range")
    w = schedule.warmup_iters
    if iteration < w:
        frac = iteration / w
        return schedule.warmup_floor + (schedule.base_lr - schedule.warmup_floor) * frac
    span = schedule.total_iters - w
    return schedule.base_lr * 0.5 * (1.0 + np.cos(np.pi * (iteration - w) / span))


def batch_size_for(source_class_count: int) -> int:
    doubled = 2 * source_class_count
    if doubled < 8:
        raise ValueError("below table range")
    if doubled < 16:
        return 8
    if doubled < 32:
        return 16
    if doubled < 64:
        return 32
    return 64


# ---------------------------------------------------------------------------
# teacher

def ema_update(teacher_head, student_head, alpha: float):
    """teacher <- alpha * teacher + (1 - alpha) * student, parameter-wise."""
    t_params, s_params = teacher_head.params(), student_head.params()
    for name, t in t_params.items():
        s = s_params[name]
        if t.shape != s.shape:
            raise ValueError("shape mismatch")
        t *= alpha
        t += (1.0 - alpha) * s
    return teacher_head


@dataclass
class TeacherHead:
    head: object
    alpha: float

    @classmethod
    def from_student(cls, student_head, alpha: float = 0.99) -> "TeacherHead":
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        return cls(student_head.clone(), alpha)

    def update(self, student_head) -> None:
        ema_update(self.head, student_head, self.alpha)

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.head.forward(z)


# ---------------------------------------------------------------------------
# source training

@dataclass
class SourceTrainResult:
    head: object
    history: list[tuple[int, float, float]]  # (iteration, val_accuracy, lr)
    best_iteration: int
    best_accuracy: float
    stopped_iteration: int
    batch_size: int
    batch_composition: tuple[int, int]  # (image rows, text rows) per step


def _accuracy(head, features: np.ndarray, labels: np.ndarray) -> float:
    preds = np.argmax(head.forward(features), axis=1)
    return float(np.mean(preds == labels))


def _snapshot(head) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in head.params().items()}


def _restore(head, snap: dict[str, np.ndarray]) -> None:
    for k, v in head.params().items():
        v[...] = snap[k]


def train_source(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    textual: TextualPrototypeSet,
    model_kind: str,
    schedule: TrainSchedule,
    batch_size: int,
    seed: int = 0,
) -> SourceTrainResult:
    """Train a source head on few-shot labeled features, never seeing target data.

    linear_probe and adapter minimize the image loss only; cross_modal adds
    the text loss, with every mini-batch split 50-50 between image rows and
    textual-prototype rows. Early stopping tracks validation accuracy every
    eval_every iterations and restores the best snapshot.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    x = np.asarray(train_features, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    vx = np.asarray(val_features, dtype=np.float64)
    vy = np.asarray(val_labels, dtype=np.int64)
    if vx.shape[0] == 0:
        raise ValueError("validation split empty")
    c = textual.num_classes
    eye = np.eye(c)

    if model_kind == "adapter":
        head = AdapterHead.init(textual, seed=seed)
    else:
        head = LinearHead.init(c, x.shape[1], seed=seed)
    opt = AdamW(head.params(), schedule.base_lr, schedule.weight_decay)
    rng = np.random.default_rng(seed)

    n_img = batch_size // 2 if model_kind == "cross_modal" else batch_size
    n_text = batch_size - n_img if model_kind == "cross_modal" else 0

    best = _snapshot(head)
    best_acc, best_iter = -1.0, 0
    stale = 0
    history: list[tuple[int, float, float]] = []
    stopped = schedule.total_iters
    for it in range(schedule.total_iters):
        lr = lr_at(schedule, it)
        idx = rng.choice(x.shape[0], size=n_img, replace=x.shape[0] < n_img)
        loss, grads = image_loss(head, x[idx], eye[y[idx]])
        if model_kind == "cross_modal":
            tidx = rng.choice(c, size=n_text, replace=c < n_text)
            _, tgrads = image_loss(head, textual.prototypes[tidx], eye[tidx])
            grads = {k: grads[k] + tgrads[k] for k in grads}
        opt.step(grads, lr)

        if (it + 1) % schedule.eval_every == 0:
            acc = _accuracy(head, vx, vy)
            history.append((it + 1, acc, lr))
            if acc > best_acc:
                best_acc, best_iter = acc, it + 1
                best = _snapshot(head)
                stale = 0
            else:
                stale += 1
                if stale >= schedule.patience:
                    stopped = it + 1
                    break

    _restore(head, best)
    return SourceTrainResult(
        head=head,
        history=history,
        best_iteration=best_iter,
        best_accuracy=best_acc,
        stopped_iteration=stopped,
        batch_size=batch_size,
        batch_composition=(n_img, n_text),
    )


# ---------------------------------------------------------------------------
# checkpoint format

def save_head(path, head, class_names: list[str]) -> None:
    if len(class_names) != head.num_classes:
        raise ValueError("class name count must match head classes")
    chunks = [HEAD_MAGIC, struct.pack("<II", HEAD_VERSION, _KIND_TAGS[head.kind])]
    chunks.append(struct.pack("<QQ", head.num_classes, head.dim))
    for name in class_names:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
    if head.kind == "linear":
        blobs = [head.weight, head.bias]
    else:
        blobs = [
            head.down,
            head.up,
            np.array([head.residual_ratio]),
            np.array([head.logit_scale]),
            head.prototypes,
        ]
    for blob in blobs:
        chunks.append(np.ascontiguousarray(blob, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_head(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != HEAD_MAGIC:
        raise ValueError("bad head magic")
    version, tag = struct.unpack_from("<II", blob, 8)
    if version != HEAD_VERSION:
        raise ValueError(f"unsupported head version {version}")
    c, d = struct.unpack_from("<QQ", blob, 16)
    cursor = 32
    names = []
    for _ in range(c):
        (ln,) = struct.unpack_from("<I", blob, cursor)
        cursor += 4
        names.append(blob[cursor : cursor + ln].decode("utf-8"))
        cursor += ln

    def take(count: int) -> np.ndarray:
        nonlocal cursor
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=cursor).copy()
        cursor += count * 8
        return out

    kind = _TAG_KINDS.get(tag)
    if kind == "linear":
        head = LinearHead(take(c * d).reshape(c, d), take(c))
    elif kind == "adapter":
        h = hidden_dim(d)
        down = take(d * h).reshape(d, h)
        up = take(h * d).reshape(h, d)
        ratio = take(1)[0]
        scale = take(1)[0]
        protos = take(c * d).reshape(c, d)
        head = AdapterHead(down, up, ratio, scale, protos)
    else:
        raise ValueError(f"unknown head kind tag {tag}")
    if cursor != len(blob):
        raise ValueError("head checkpoint size mismatch")
    return head, names
