"""Training loop: iterative click rounds, LR schedule, checkpoints.

Each training step replays the interactive protocol: an initial set of
random clicks, then a few extra rounds where the model's own binarized
prediction is fed back (detached — no gradient flows into earlier rounds)
together with one corrective click. Per-round losses average into a single
Adam step. Checkpoints are versioned .npz archives carrying parameters,
optimizer moments, the RNG state, and config snapshots, so a resumed run
continues bit-for-bit where the original left off.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .clicksim import Click, next_click, sample_training_clicks
from .data import Sample
from .errors import CheckpointError, ClickmaskError, ConfigError, NonFiniteError
from .head import rasterize_clicks
from .model import ClickSegmenter, ModelConfig
from .numeric import Adam, focal_loss, ops

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 55
    epoch_size: int = 30000
    batch_size: int = 8
    lr_decay_epochs: tuple = (50, 55)  # lr multiplies by 0.1 after each
    crop: int = 448
    max_initial_clicks: int = 24
    iterative_rounds: int = 3
    focal_gamma: float = 2.0
    freeze_backbone: bool = True
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1 or self.epoch_size < 1 or self.batch_size < 1:
            raise ConfigError("epochs, epoch_size and batch_size must be >= 1")
        if any(e > self.epochs for e in self.lr_decay_epochs):
            raise ConfigError(
                f"decay epochs {self.lr_decay_epochs} exceed total epochs {self.epochs}")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise ConfigError("decay epochs must ascend")
        if self.iterative_rounds < 0:
            raise ConfigError("iterative_rounds must be >= 0")
        if self.max_initial_clicks < 1:
            raise ConfigError("max_initial_clicks must be >= 1")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be >= 0")

    @classmethod
    def paper_shaped(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def toy(cls) -> "TrainConfig":
        # batch 2 over epoch_size 200 gives 100 steps/epoch; 6 initial
        # clicks tracks the one-click-at-a-time evaluation regime
        return cls(lr=1e-3, epochs=30, epoch_size=200, crop=112,
                   lr_decay_epochs=(25,), batch_size=2,
                   max_initial_clicks=6)

    def lr_at_epoch(self, epoch: int) -> float:
        """Schedule is a pure function of the epoch, so resumes can't drift."""
        return self.lr * 0.1 ** sum(1 for d in self.lr_decay_epochs if epoch > d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["lr_decay_epochs"] = tuple(d.get("lr_decay_epochs", ()))
        return cls(**d)


def _prompt_stack(clicks, m_prev, radius):
    h, w = m_prev.shape
    pos, neg = rasterize_clicks(clicks, h, w, radius)
    prev = (np.asarray(m_prev) != 0).astype(np.float32)
    return np.stack([pos, neg, prev], axis=-1)[None]


def _corrective_click(m_prev, gt, rng) -> Click | None:
    """Half the time the metric-style click, half a uniform erroneous pixel;
    pure metric clicks overfit the click placement the evaluator uses."""
    wrong = np.argwhere(m_prev != gt)
    if wrong.size == 0:
        return None
    if rng.random() < 0.5:
        return next_click(m_prev, gt)
    y, x = wrong[int(rng.integers(len(wrong)))]
    return Click(int(y), int(x), bool(gt[y, x]))


def train_step(batch, model: ClickSegmenter, optimizer: Adam,
               rng: np.random.Generator, config: TrainConfig,
               tap_cache: dict | None = None) -> float:
    """One optimizer update over a batch of crop-sized samples.

    Per sample: initial random clicks with an all-zero previous mask, then
    `iterative_rounds` rounds feeding back the binarized prediction plus one
    corrective click. The update averages the focal loss over every
    (sample, round) pair. Returns that mean loss.
    """
    if not batch:
        raise ClickmaskError("train_step got an empty batch")
    radius = model.config.head.click_radius
    n_rounds = config.iterative_rounds + 1
    weight = 1.0 / (len(batch) * n_rounds)
    optimizer.zero_grad()
    total = 0.0
    for sample in batch:
        gt = sample.mask
        if tap_cache is not None and "@" not in sample.id:
            taps = tap_cache.get(sample.id)
            if taps is None:
                taps = model.encode(sample.image[None])
                tap_cache[sample.id] = taps
        else:
            taps = model.encode(sample.image[None])
        target = gt[None].astype(np.float32)
        clicks = sample_training_clicks(gt, rng, config.max_initial_clicks)
        m_prev = np.zeros(gt.shape, dtype=np.uint8)
        # Frozen encoder: taps are constants, every round is its own graph,
        # so each round can backward immediately and memory stays flat.
        # Trainable encoder: all rounds hang off one tap graph, and repeated
        # sweeps may only share leaves — defer to a single sweep per sample.
        pending = None
        for r in range(n_rounds):
            logits, mask = model.forward(taps, _prompt_stack(clicks, m_prev, radius))
            loss = focal_loss(logits, target, gamma=config.focal_gamma)
            scaled = ops.scale(loss, weight)
            if model.config.backbone.frozen:
                scaled.backward()
            else:
                pending = scaled if pending is None else ops.add(pending, scaled)
            total += float(loss.data) * weight
            if r + 1 == n_rounds:
                break
            m_prev = mask[0]  # plain array: structurally detached
            extra = _corrective_click(m_prev, gt, rng)
            if extra is not None:
                clicks = clicks + [extra]
        if pending is not None:
            pending.backward()
    if not math.isfinite(total):
        raise NonFiniteError(f"training loss became non-finite: {total}")
    optimizer.step()
    return total


def weights_hash(model: ClickSegmenter, prefix: str = "") -> str:
    """sha256 over the named parameter bytes; pins down frozen weights."""
    digest = hashlib.sha256()
    params = model.params()
    for name in sorted(params):
        if not name.startswith(prefix):
            continue
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params[name].data).tobytes())
    return digest.hexdigest()


# ------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model: ClickSegmenter
    epoch: int
    version: int = FORMAT_VERSION
    train_config: dict | None = None
    optimizer_state: dict = field(default_factory=dict)
    rng_state: dict | None = None


def save_checkpoint(model: ClickSegmenter, path, epoch: int = 0,
                    optimizer: Adam | None = None,
                    rng: np.random.Generator | None = None,
                    train_config: TrainConfig | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "epoch": int(epoch),
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    payload = {"__meta__": np.array(json.dumps(meta))}
    for name, p in model.params().items():
        payload[f"param/{name}"] = p.data
    if optimizer is not None:
        for key, arr in optimizer.state_arrays().items():
            payload[f"adam/{key}"] = arr
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e


def load_checkpoint(path, model: ClickSegmenter | None = None) -> Checkpoint:
    """Restore a checkpoint; builds the model from its stored config unless
    an explicitly constructed one is supplied (which must match shapes)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if "__meta__" not in arrays:
        raise CheckpointError(f"checkpoint {path} has no metadata record")
    meta = json.loads(str(arrays["__meta__"][()]))
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {version} unsupported (expected {FORMAT_VERSION})")
    if model is None:
        model = ClickSegmenter(ModelConfig.from_dict(meta["model_config"]))
    params = model.params()
    saved = {k[len("param/"):]: v for k, v in arrays.items()
             if k.startswith("param/")}
    for name in sorted(set(params) | set(saved)):
        if name not in saved:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if name not in params:
            raise CheckpointError(f"checkpoint has unexpected tensor {name}")
        if saved[name].shape != params[name].data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {saved[name].shape} "
                f"vs model {params[name].data.shape}")
    for name, p in params.items():
        p.data[...] = saved[name]
    adam = {k[len("adam/"):]: v for k, v in arrays.items() if k.startswith("adam/")}
    return Checkpoint(model=model, epoch=int(meta["epoch"]), version=version,
                      train_config=meta.get("train_config"),
                      optimizer_state=adam, rng_state=meta.get("rng_state"))


# ---------------------------------------------------------------- training

def _dihedral(a: np.ndarray, code: int) -> np.ndarray:
    """One of the 8 square symmetries (rotations x transpose), code 0-7.
    Pure pixel permutation — no resampling."""
    if code & 4:
        a = a.swapaxes(0, 1)
    return np.ascontiguousarray(np.rot90(a, code & 3))


def _assemble_batch(dataset, config, rng):
    from .data import random_crop
    patch = 14
    batch = []
    for _ in range(config.batch_size):
        sample = dataset[int(rng.integers(len(dataset)))]
        if sample.mask.shape != (config.crop, config.crop):
            sample = random_crop(sample, config.crop, rng, patch)
        # free augmentation for square crops; the orientation code lands in
        # the id so cached taps stay keyed to the exact pixels encoded
        code = int(rng.integers(8))
        batch.append(Sample(image=_dihedral(sample.image, code),
                            mask=_dihedral(sample.mask, code),
                            class_label=sample.class_label,
                            id=f"{sample.id}|d{code}"))
    return batch


def train(config: TrainConfig, dataset, model: ClickSegmenter | None = None,
          out_dir=None, resume=None, log=None) -> Checkpoint:
    """Full training run; returns the final checkpoint state.

    Writes per-epoch checkpoints and a JSONL loss curve when out_dir is set.
    `resume` restores parameters, optimizer moments, RNG and epoch counter
    from an earlier checkpoint of the same run.
    """
    if not dataset:
        raise ClickmaskError("training dataset is empty")
    if model is None:
        model = ClickSegmenter(ModelConfig.toy())
    model.set_frozen(config.freeze_backbone)
    patch = model.config.backbone.patch_size
    if config.crop % (2 * patch):  # head needs an even token grid
        raise ConfigError(
            f"crop {config.crop} is not a multiple of {2 * patch} (2x patch)")
    optimizer = Adam(model.params(), lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2)
    rng = np.random.default_rng(config.seed)
    start_epoch = 1
    if resume is not None:
        ck = load_checkpoint(resume, model=model)
        if ck.optimizer_state:
            optimizer.load_state_arrays(ck.optimizer_state)
        if ck.rng_state is not None:
            rng.bit_generator.state = ck.rng_state
        start_epoch = ck.epoch + 1

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    tap_cache: dict = {} if config.freeze_backbone else None
    steps_per_epoch = max(1, math.ceil(config.epoch_size / config.batch_size))

    for epoch in range(start_epoch, config.epochs + 1):
        optimizer.set_lr(config.lr_at_epoch(epoch))
        for step in range(1, steps_per_epoch + 1):
            batch = _assemble_batch(dataset, config, rng)
            loss = train_step(batch, model, optimizer, rng, config, tap_cache)
            record = {"epoch": epoch, "step": step, "loss": round(loss, 6),
                      "lr": optimizer.lr}
            if log is not None:
                log(record)
            if out_dir is not None:
                with open(os.path.join(out_dir, "curve.jsonl"), "a") as fh:
                    fh.write(json.dumps(record) + "\n")
        if out_dir is not None:
            save_checkpoint(model, os.path.join(out_dir, f"ckpt-{epoch:03d}.npz"),
                            epoch=epoch, optimizer=optimizer, rng=rng,
                            train_config=config)
    return Checkpoint(model=model, epoch=config.epochs,
                      train_config=config.to_dict(),
                      optimizer_state=optimizer.state_arrays(),
                      rng_state=rng.bit_generator.state)
