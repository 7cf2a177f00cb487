import os

import numpy as np
import pytest

from clickmask.backbone import BackboneConfig
from clickmask.clicksim import next_click
from clickmask.data import SynthConfig, synth_generate
from clickmask.errors import CheckpointError, ClickmaskError, ConfigError
from clickmask.head import HeadConfig
from clickmask.model import ClickSegmenter, ModelConfig
from clickmask.numeric import Adam
from clickmask.trainer import (Checkpoint, TrainConfig, _corrective_click,
                               load_checkpoint, save_checkpoint, train,
                               train_step, weights_hash)


def tiny_model(seed=0, **overrides) -> ClickSegmenter:
    cfg = ModelConfig(
        backbone=BackboneConfig(d_model=32, depth=4, n_heads=2, patch_size=14,
                                base_grid=(2, 2)),
        head=HeadConfig(d_model=32, n_heads=2, fusion_depth=2,
                        pyramid_channels=16, decoder_channels=16),
        seed=seed, **overrides)
    return ClickSegmenter(cfg)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(lr=1e-3, epochs=2, epoch_size=4, batch_size=2,
                lr_decay_epochs=(), crop=28, max_initial_clicks=4,
                iterative_rounds=1, seed=3)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_dataset(n=4):
    return synth_generate(SynthConfig(seed=5, count=n, canvas=(28, 28)))


# ----------------------------------------------------------------- config

def test_train_config_validation():
    TrainConfig()  # publication-scale defaults hold together
    with pytest.raises(ConfigError):
        TrainConfig(epochs=30)  # default decay epochs (50, 55) exceed 30
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(iterative_rounds=-1)
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_epochs=(55, 50))
    TrainConfig.toy()
    TrainConfig.paper_shaped()


def test_lr_schedule_steps_down_by_tenths():
    cfg = TrainConfig(epochs=60)
    assert cfg.lr_at_epoch(1) == 5e-5
    assert cfg.lr_at_epoch(50) == 5e-5   # decay applies after the epoch
    assert cfg.lr_at_epoch(51) == pytest.approx(5e-6)
    assert cfg.lr_at_epoch(55) == pytest.approx(5e-6)
    assert cfg.lr_at_epoch(56) == pytest.approx(5e-7)


# ------------------------------------------------------------- train_step

def test_train_step_deterministic():
    data = tiny_dataset()
    losses = []
    for _ in range(2):
        model = tiny_model(seed=1)
        model.set_frozen(True)
        opt = Adam(model.params(), lr=1e-3)
        rng = np.random.default_rng(7)
        losses.append(train_step(data[:2], model, opt, rng, tiny_train_config()))
    assert losses[0] == losses[1]
    assert np.isfinite(losses[0]) and losses[0] > 0


def test_train_step_rejects_empty_batch():
    model = tiny_model()
    opt = Adam(model.params())
    with pytest.raises(ClickmaskError):
        train_step([], model, opt, np.random.default_rng(0), tiny_train_config())


def test_round_count_controls_forward_calls():
    data = tiny_dataset(2)
    for rounds, want in ((0, 2), (3, 8)):
        model = tiny_model()
        model.set_frozen(True)
        opt = Adam(model.params(), lr=1e-3)
        calls = {"n": 0}
        inner = model.forward

        def counting(taps, stack, threshold=None, _inner=inner, _calls=calls):
            _calls["n"] += 1
            return _inner(taps, stack, threshold)

        model.forward = counting
        cfg = tiny_train_config(iterative_rounds=rounds)
        train_step(data, model, opt, np.random.default_rng(1), cfg)
        assert calls["n"] == want


def test_frozen_backbone_untouched_by_updates():
    data = tiny_dataset(2)
    model = tiny_model()
    model.set_frozen(True)
    opt = Adam(model.params(), lr=1e-3)
    assert not any(n.startswith("backbone.") for n in opt.param_names)
    before_backbone = weights_hash(model, "backbone.")
    before_head = weights_hash(model, "head.")
    rng = np.random.default_rng(2)
    for _ in range(3):
        train_step(data, model, opt, rng, tiny_train_config())
    assert weights_hash(model, "backbone.") == before_backbone
    assert weights_hash(model, "head.") != before_head


def test_unfrozen_backbone_trains_and_matches_per_round_reference():
    # the single-sweep-per-sample path must equal gradients from running
    # each round on its own freshly encoded graph
    from clickmask.clicksim import sample_training_clicks
    from clickmask.numeric import ops
    from clickmask.numeric.losses import focal_loss
    from clickmask.trainer import _prompt_stack

    data = tiny_dataset(1)
    cfg = tiny_train_config(iterative_rounds=2, freeze_backbone=False)

    model = tiny_model()
    model.set_frozen(False)
    opt = Adam(model.params(), lr=cfg.lr)
    assert any(n.startswith("backbone.") for n in opt.param_names)
    before = weights_hash(model, "backbone.")
    grabbed = {}
    original_step = opt.step
    def snapshot_then_step():
        grabbed.update({n: p.grad.copy() for n, p in opt.params.items()})
        original_step()
    opt.step = snapshot_then_step
    train_step(data, model, opt, np.random.default_rng(5), cfg)
    assert weights_hash(model, "backbone.") != before

    reference = tiny_model()
    reference.set_frozen(False)
    ref_params = reference.params()
    for p in ref_params.values():
        p.zero_grad()
    rng = np.random.default_rng(5)
    sample = data[0]
    weight = 1.0 / (cfg.iterative_rounds + 1)
    clicks = sample_training_clicks(sample.mask, rng, cfg.max_initial_clicks)
    m_prev = np.zeros(sample.mask.shape, dtype=np.uint8)
    target = sample.mask[None].astype(np.float32)
    for r in range(cfg.iterative_rounds + 1):
        taps = reference.encode(sample.image[None])  # fresh graph per round
        logits, mask = reference.forward(
            taps, _prompt_stack(clicks, m_prev, reference.config.head.click_radius))
        ops.scale(focal_loss(logits, target, gamma=cfg.focal_gamma), weight).backward()
        if r == cfg.iterative_rounds:
            break
        m_prev = mask[0]
        extra = _corrective_click(m_prev, sample.mask, rng)
        if extra is not None:
            clicks = clicks + [extra]

    for name, got in grabbed.items():
        want = ref_params[name].grad
        denom = max(np.abs(want).max(), np.abs(got).max(), 1e-12)
        assert np.abs(got - want).max() / denom < 1e-5, name


def test_corrective_click_mixes_strategies():
    gt = np.zeros((20, 20), dtype=np.uint8)
    gt[5:15, 5:15] = 1
    m_prev = np.zeros_like(gt)
    metric = next_click(m_prev, gt)
    rng = np.random.default_rng(0)
    clicks = {_corrective_click(m_prev, gt, rng) for _ in range(40)}
    assert metric in clicks          # the simulator branch fires
    assert len(clicks) > 1           # and so does the uniform branch
    assert all(c.positive for c in clicks)  # all errors here are misses
    assert _corrective_click(gt, gt, rng) is None


def test_loss_decreases_on_repeated_batch():
    data = tiny_dataset(2)
    model = tiny_model(seed=4)
    model.set_frozen(True)
    opt = Adam(model.params(), lr=3e-3)
    rng = np.random.default_rng(11)
    cfg = tiny_train_config(iterative_rounds=1)
    losses = [train_step(data, model, opt, rng, cfg) for _ in range(40)]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


# ------------------------------------------------------------ checkpoints

def probe_prediction(model):
    rng = np.random.default_rng(0)
    image = rng.random((1, 28, 28, 3)).astype(np.float32)
    taps = model.encode(image)
    from clickmask.clicksim import Click
    clicks = [Click(10, 12, True), Click(3, 4, False)]
    return model.predict(taps, clicks, np.zeros((28, 28), np.uint8))


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = tiny_model(seed=9)
    want = probe_prediction(model)
    path = tmp_path / "ck.npz"
    rng = np.random.default_rng(5)
    rng.random(10)  # advance so the state is nontrivial
    opt = Adam(model.params(), lr=1e-3)
    save_checkpoint(model, path, epoch=7, optimizer=opt, rng=rng,
                    train_config=tiny_train_config())
    ck = load_checkpoint(path)  # fresh model built from stored config
    assert isinstance(ck, Checkpoint)
    assert ck.epoch == 7
    assert ck.train_config["crop"] == 28
    assert ck.rng_state == rng.bit_generator.state
    got = probe_prediction(ck.model)
    assert np.array_equal(want, got)
    # optimizer state covers exactly the trainable parameters
    saved_names = {k.rsplit(".", 1)[0] for k in ck.optimizer_state}
    assert saved_names == set(opt.param_names)


def test_checkpoint_shape_mismatch_names_tensor(tmp_path):
    path = tmp_path / "ck.npz"
    save_checkpoint(tiny_model(), path)
    wider = ClickSegmenter(ModelConfig(
        backbone=BackboneConfig(d_model=64, depth=4, n_heads=2, patch_size=14,
                                base_grid=(2, 2)),
        head=HeadConfig(d_model=64, n_heads=2, fusion_depth=2,
                        pyramid_channels=16, decoder_channels=16)))
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(path, model=wider)
    assert "shape mismatch for" in str(e.value)
    assert "backbone." in str(e.value) or "head." in str(e.value)


def test_checkpoint_truncated_and_missing(tmp_path):
    path = tmp_path / "ck.npz"
    save_checkpoint(tiny_model(), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.npz")


def test_checkpoint_version_gate(tmp_path):
    import json
    path = tmp_path / "ck.npz"
    np.savez(path, __meta__=np.array(json.dumps({"format_version": 99})))
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(path)
    assert "99" in str(e.value)


def test_checkpoint_missing_tensor(tmp_path):
    model = tiny_model()
    path = tmp_path / "ck.npz"
    save_checkpoint(model, path)
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    victim = sorted(k for k in arrays if k.startswith("param/"))[0]
    del arrays[victim]
    np.savez(tmp_path / "cut.npz", **arrays)
    with pytest.raises(CheckpointError) as e:
        load_checkpoint(tmp_path / "cut.npz")
    assert "missing tensor" in str(e.value)


# ----------------------------------------------------------------- train()

def test_train_writes_checkpoints_and_curve(tmp_path):
    data = tiny_dataset()
    cfg = tiny_train_config()
    records = []
    ck = train(cfg, data, model=tiny_model(), out_dir=tmp_path,
               log=records.append)
    assert ck.epoch == 2
    names = sorted(os.listdir(tmp_path))
    assert names == ["ckpt-001.npz", "ckpt-002.npz", "curve.jsonl"]
    assert len(records) == 4  # 2 epochs x ceil(4 / 2) steps
    assert all(np.isfinite(r["loss"]) for r in records)
    assert [r["epoch"] for r in records] == [1, 1, 2, 2]
    curve_lines = (tmp_path / "curve.jsonl").read_text().strip().split("\n")
    assert len(curve_lines) == 4


def test_train_requires_nonempty_dataset():
    with pytest.raises(ClickmaskError):
        train(tiny_train_config(), [], model=tiny_model())


def test_train_caches_taps_for_frozen_crop_free_runs():
    data = tiny_dataset(3)
    model = tiny_model()
    cfg = tiny_train_config(epochs=16, epoch_size=6)
    train(cfg, data, model=model)
    # every sample is crop-sized, so each of its 8 dihedral augmentations
    # encodes at most once no matter how many times it is visited
    visits = 16 * 6
    assert model.encode_calls <= 8 * len(data) < visits


def test_resume_matches_uninterrupted_run(tmp_path):
    data = tiny_dataset()
    cfg = tiny_train_config(epochs=3)

    full = []
    train(cfg, data, model=tiny_model(seed=2), out_dir=tmp_path / "a",
          log=full.append)

    part = []
    train(tiny_train_config(epochs=2), data, model=tiny_model(seed=2),
          out_dir=tmp_path / "b", log=part.append)
    resumed = []
    train(cfg, data, model=tiny_model(seed=2),
          resume=tmp_path / "b" / "ckpt-002.npz", log=resumed.append)

    assert [r["loss"] for r in part] == [r["loss"] for r in full[:len(part)]]
    tail = [r["loss"] for r in full[len(part):]]
    assert [r["loss"] for r in resumed] == tail
