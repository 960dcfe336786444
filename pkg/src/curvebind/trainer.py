"""Training loop, curriculum pocket centers, gradient checks and checkpoints."""

from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._jsonio import dumps
from .docking import DivergenceError
from .model import CWFBind, ComplexInputs, ModelConfig

log = logging.getLogger(__name__)

ENCODER_KEYS = ("d_node", "d_pair", "d_opm", "use_lcf", "protein_mode")
# ModelConfig fields that TrainConfig sets itself
_TRAIN_OWNED = frozenset({"alpha1", "gamma", "gamma_d", "huber_delta", "use_lcf", "uniform_weights",
                          "fixed_radius", "plain_bce"})

CHECKPOINT_FORMAT = "curvebind-checkpoint"
CHECKPOINT_VERSION = 1
SCHEDULES = ("constant", "linear", "constant-then-linear")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 3
    epochs: int = 450
    max_steps: int | None = None
    T_p: int | None = None
    alpha1: float = 0.05
    gamma: float = 2.0
    gamma_d: float = 1.0
    huber_delta: float = 1.0
    weight_decay: float = 0.01
    schedule: str = "constant-then-linear"
    final_lr_factor: float = 0.1
    seed: int = 0
    no_lcf: bool = False
    uniform_weights: bool = False
    fixed_radius: bool = False
    plain_bce: bool = False
    # architecture overrides forwarded to ModelConfig (widths, depths, ...)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.T_p is not None and not 0 <= self.T_p <= (self.epochs if self.max_steps is None else self.T_p):
            raise ValueError("T_p must lie in [0, epochs]")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def run_epochs(self, n_complexes: int) -> int:
        """Epochs actually run; ``max_steps`` overrides ``epochs`` when set."""
        if self.max_steps is None:
            return self.epochs
        return math.ceil(self.max_steps / math.ceil(n_complexes / self.batch_size))

    def switch_epoch(self, n_complexes: int) -> int:
        """Curriculum switch ``T_p``; half the epochs actually run unless set."""
        return self.run_epochs(n_complexes) // 2 if self.T_p is None else self.T_p

    def model_config(self) -> ModelConfig:
        base = dict(self.model)
        base.update(alpha1=self.alpha1, gamma=self.gamma, gamma_d=self.gamma_d, huber_delta=self.huber_delta,
                    use_lcf=not self.no_lcf, uniform_weights=self.uniform_weights,
                    fixed_radius=self.fixed_radius, plain_bce=self.plain_bce)
        return ModelConfig(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        model_keys = {f.name for f in fields(ModelConfig)} - _TRAIN_OWNED
        bad = set(data.get("model", {})) - model_keys
        if bad:
            raise ValueError(f"unknown or misplaced model keys: {sorted(bad)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_sections(load_config_document(path))

    @classmethod
    def from_sections(cls, data: dict) -> "TrainConfig":
        """Build from a config document with optional ``train``, ``encoder`` and ``model`` tables.

        Dotted keys such as ``"encoder.d_node"`` are accepted in JSON too.
        Keys outside any table are training keys.
        """
        nested: dict = {}
        for key, value in data.items():
            head, dot, tail = key.partition(".")
            if dot:
                nested.setdefault(head, {})[tail] = value
            elif isinstance(value, dict):
                nested.setdefault(key, {}).update(value)
            else:
                nested.setdefault("train", {})[key] = value
        unknown = set(nested) - {"train", "encoder", "model"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        train = dict(nested.get("train", {}))
        model = dict(train.pop("model", {}))
        model.update(nested.get("model", {}))
        encoder = dict(nested.get("encoder", {}))
        bad = set(encoder) - set(ENCODER_KEYS)
        if bad:
            raise ValueError(f"unknown encoder keys: {sorted(bad)}")
        if "use_lcf" in encoder:
            train["no_lcf"] = not encoder.pop("use_lcf")
        model.update(encoder)
        return cls.from_dict({**train, "model": model} if model else train)


def load_config_document(path) -> dict:
    """Raw TOML (by ``.toml`` suffix) or JSON config document."""
    path = Path(path)
    text = path.read_text()
    return tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)


def total_loss(pocket_terms, docking_terms):
    return pocket_terms + docking_terms


def curriculum_center(epoch: int, T_p: int, true_center, pred_center):
    return true_center if epoch < T_p else pred_center


def _lr_factor(schedule: str, step: int, total: int, final: float) -> float:
    if schedule == "constant" or total <= 1:
        return 1.0
    if schedule == "linear":
        return 1.0 + (final - 1.0) * min(step, total - 1) / (total - 1)
    half = total // 2
    if step < half:
        return 1.0
    return 1.0 + (final - 1.0) * (step - half) / max(total - 1 - half, 1)


def instance_generator(seed: int, step: int, index: int) -> torch.Generator:
    """Gumbel noise source for one complex at one step, independent of batching."""
    return torch.Generator().manual_seed(int(np.random.SeedSequence([seed, step, index]).generate_state(1)[0]))


@dataclass
class StepResult:
    step: int
    epoch: int
    ids: list
    terms: dict
    accepted: bool
    lr: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        out = {"step": self.step, "epoch": self.epoch, "ids": self.ids, "lr": self.lr,
               "accepted": self.accepted, "terms": self.terms}
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return dumps(out)


class Trainer:
    def __init__(self, model: CWFBind, config: TrainConfig):
        self.model = model
        self.config = config
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate,
                                           weight_decay=config.weight_decay)
        self.step_count = 0
        self.total_steps = 1
        self.switch = config.T_p if config.T_p is not None else config.epochs // 2

    def _set_lr(self):
        c = self.config
        lr = c.learning_rate * _lr_factor(c.schedule, self.step_count, self.total_steps, c.final_lr_factor)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        return lr

    def batch_loss(self, batch: list[ComplexInputs], epoch: int):
        """Mean of each loss term over the batch, summed in a fixed order."""
        sums = None
        for idx, inp in enumerate(batch):
            center = curriculum_center(epoch, self.switch, inp.labels.true_center, None)
            gen = instance_generator(self.config.seed, self.step_count, idx)
            out = self.model(inp, center_override=center, generator=gen, noise=True)
            terms = self.model.losses(inp, out)
            sums = terms if sums is None else {k: sums[k] + terms[k] for k in sums}
        return {k: v / len(batch) for k, v in sums.items()}

    def train_step(self, batch: list[ComplexInputs], epoch: int = 0) -> StepResult:
        lr = self._set_lr()
        self.optimizer.zero_grad(set_to_none=True)
        ids = [inp.id for inp in batch]
        try:
            terms = self.batch_loss(batch, epoch)
        except DivergenceError as exc:
            self.step_count += 1
            return StepResult(self.step_count - 1, epoch, ids, {}, False, lr,
                              {"error": str(exc), **{k: v for k, v in exc.diagnostics.items() if k != "coords"}})
        values = {k: float(v.detach()) for k, v in terms.items()}
        if not all(math.isfinite(v) for v in values.values()):
            self.step_count += 1
            log.warning("non-finite loss at step %d; step rejected", self.step_count - 1)
            return StepResult(self.step_count - 1, epoch, ids, values, False, lr,
                              {"error": "non-finite loss", "non_finite": [k for k, v in values.items()
                                                                         if not math.isfinite(v)]})
        terms["total"].backward()
        grads_ok = all(p.grad is None or bool(torch.isfinite(p.grad).all()) for p in self.model.parameters())
        if not grads_ok:
            self.optimizer.zero_grad(set_to_none=True)
            self.step_count += 1
            return StepResult(self.step_count - 1, epoch, ids, values, False, lr, {"error": "non-finite gradient"})
        self.optimizer.step()
        self.step_count += 1
        return StepResult(self.step_count - 1, epoch, ids, values, True, lr)

    def fit(self, data: list[ComplexInputs], log_stream=None,
            callback: Callable[[StepResult], None] | None = None) -> list[StepResult]:
        c = self.config
        data = [d for d in data if d.labels is not None and d.labels.trainable]
        if not data:
            raise ValueError("no trainable complexes")
        epochs = c.run_epochs(len(data))
        self.switch = c.switch_epoch(len(data))
        self.total_steps = c.max_steps if c.max_steps is not None else epochs * math.ceil(len(data) / c.batch_size)
        rng = np.random.default_rng(c.seed)
        history = []
        self.model.train()
        for epoch in range(epochs):
            order = rng.permutation(len(data))
            for start in range(0, len(data), c.batch_size):
                if self.step_count >= self.total_steps:
                    return history
                batch = [data[k] for k in order[start:start + c.batch_size]]
                result = self.train_step(batch, epoch)
                history.append(result)
                if log_stream is not None:
                    log_stream.write(result.to_json() + "\n")
                if callback is not None:
                    callback(result)
        return history


# -- gradient check -----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def to_dict(self) -> dict:
        return {"tolerance": self.tolerance, "passed": self.passed, "failures": self.failures,
                "errors": self.errors, "samples": self.samples}


def parameter_blocks(model: torch.nn.Module, granularity: str = "mlp") -> dict[str, list[tuple[str, torch.nn.Parameter]]]:
    """Group parameters by the sub-network that owns them.

    With ``granularity="mlp"`` a block inside a layer is the named MLP or
    projection (``...lig_msg.phi_x``); with ``"component"`` it is the layer
    component (``...lig_msg``, ``...cross``).  Outside the layer stacks the block
    is the top-level module (``classifier``, ``dock_opm``).
    """
    if granularity not in ("mlp", "component"):
        raise ValueError(f"unknown granularity {granularity!r}")
    depth = 4 if granularity == "mlp" else 3
    blocks: dict[str, list] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        parts = name.split(".")
        if parts[0].endswith("layers"):
            key = ".".join(parts[:min(depth, len(parts) - 1)])
        else:
            key = parts[0]
        blocks.setdefault(key, []).append((name, p))
    return blocks


def block_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)`` over one block's sampled coordinates."""
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), floor)
    return diff / scale


def gradcheck(target, loss_fn: Callable, step: float = 1e-4, tolerance: float = 1e-4, samples: int = 50,
              seed: int = 0, grad_transform: Callable[[str, torch.Tensor], torch.Tensor] | None = None,
              blocks: Iterable[str] | None = None, granularity: str = "mlp") -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn(target)`` with central differences.

    ``target`` is a module (checked per parameter block) or a dict of named
    float64 tensors (one block each).  ``samples`` coordinates are drawn per
    block, all of them when the block is smaller.  ``grad_transform`` rewrites
    analytic gradients before comparison, which is how fault injection is tested.
    """
    report = GradCheckReport(tolerance=tolerance)
    if isinstance(target, torch.nn.Module):
        groups = parameter_blocks(target, granularity)
    else:
        groups = {k: [(k, t)] for k, t in target.items()}
    if blocks is not None:
        groups = {k: groups[k] for k in blocks}
    tensors = [t for entries in groups.values() for _, t in entries]
    if not tensors:
        return report
    for t in tensors:
        if t.dtype != torch.float64:
            raise TypeError("gradcheck needs float64 tensors")
        t.grad = None
        t.requires_grad_(True)
    loss_fn(target).backward()
    analytic = {}
    for entries in groups.values():
        for name, t in entries:
            g = torch.zeros_like(t) if t.grad is None else t.grad.detach().clone()
            analytic[name] = grad_transform(name, g) if grad_transform else g
            t.grad = None

    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for key, entries in groups.items():
            sizes = np.array([t.numel() for _, t in entries])
            total = int(sizes.sum())
            picks = rng.choice(total, size=min(samples, total), replace=False)
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            a_vals, n_vals = [], []
            for flat in np.sort(picks):
                j = int(np.searchsorted(offsets, flat, side="right") - 1)
                name, t = entries[j]
                k = int(flat - offsets[j])
                view = t.view(-1)
                orig = view[k].clone()
                view[k] = orig + step
                plus = float(loss_fn(target))
                view[k] = orig - step
                minus = float(loss_fn(target))
                view[k] = orig
                n_vals.append((plus - minus) / (2 * step))
                a_vals.append(float(analytic[name].view(-1)[k]))
            report.errors[key] = block_relative_error(np.array(a_vals), np.array(n_vals))
            report.samples[key] = len(picks)
    return report


def model_loss_fn(inp: ComplexInputs, term: str = "total", center: str = "true", seed: int = 0):
    """Deterministic scalar loss of one complex, for :func:`gradcheck`."""
    def fn(model):
        override = inp.labels.true_center if center == "true" else None
        out = model(inp, center_override=override, generator=torch.Generator().manual_seed(seed), noise=True)
        return model.losses(inp, out)[term]
    return fn


# -- checkpoints ----------------------------------------------------------------

def _encode(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().numpy().astype("<f8", copy=False)
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"], validate=True)
    shape = tuple(entry["shape"])
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError("tensor payload length does not match its shape")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def checkpoint_dict(model: CWFBind, extra: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "parameters": {name: _encode(t) for name, t in model.state_dict().items()},
    }


def save_checkpoint(model: CWFBind, path, extra: dict | None = None) -> None:
    text = dumps(checkpoint_dict(model, extra), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def read_checkpoint(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {data.get('version')!r}, "
                                     f"expected {CHECKPOINT_VERSION}")
    return data


def load_parameters(model: CWFBind, data: dict) -> CWFBind:
    """Copy checkpoint tensors into ``model``; names and shapes must match exactly."""
    state = model.state_dict()
    params = data["parameters"]
    missing = set(state) - set(params)
    unexpected = set(params) - set(state)
    if missing or unexpected:
        raise ShapeMismatchError(f"parameter names differ: missing {sorted(missing)[:5]}, "
                                 f"unexpected {sorted(unexpected)[:5]}")
    loaded = {}
    for name, tensor in state.items():
        if list(tensor.shape) != list(params[name]["shape"]):
            raise ShapeMismatchError(f"{name}: checkpoint shape {params[name]['shape']}, "
                                     f"model shape {list(tensor.shape)}")
        loaded[name] = torch.from_numpy(_decode(params[name]))
    model.load_state_dict(loaded)
    return model


def load_checkpoint(path, expected: ModelConfig | None = None) -> CWFBind:
    """Rebuild the model stored at ``path``.

    With ``expected`` the parameters are loaded into a model built from that
    configuration instead, so architecture differences surface as
    :class:`ShapeMismatchError`.
    """
    data = read_checkpoint(path)
    try:
        config = ModelConfig(**data["config"]) if expected is None else expected
    except TypeError as exc:
        raise CheckpointError(f"{path}: bad config ({exc})") from exc
    return load_parameters(CWFBind(config), data)

