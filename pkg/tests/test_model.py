"""Full network: shapes, determinism, parameter budget, checkpoints."""

import dataclasses

import numpy as np
import pytest
import torch

from eventinterp.events import EventInterval
from eventinterp.model import (
    CheckpointError,
    ClipSample,
    InterpolationNet,
    ModelConfig,
    build_variant,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from eventinterp.synthesis import KeyframeClip

TINY = ModelConfig(
    n_time_bins=4,
    msa_dim=4,
    msa_heads=2,
    channels=(8, 8, 12),
    smoothnet_depth=1,
    kernel_taps=4,
    kernel_head_depths=(1, 1, 1),
    seed=7,
)


def tiny_inputs(batch=1, size=8, bins=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    frames = torch.rand(batch, 4, 3, size, size, generator=gen)
    voxels = torch.randn(batch, 4, bins, size, size, generator=gen)
    return frames, voxels


class TestModelConfig:
    def test_defaults_valid(self):
        cfg = ModelConfig()
        assert cfg.msa_heads == 16
        assert cfg.channels == (32, 64, 96)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ValueError):
            ModelConfig(msa_dim=10, msa_heads=4)

    def test_rejects_odd_bins_and_bad_channels(self):
        with pytest.raises(ValueError):
            ModelConfig(n_time_bins=5)
        with pytest.raises(ValueError):
            ModelConfig(channels=(30, 64, 96))

    def test_dict_round_trip(self):
        cfg = dataclasses.replace(TINY, seed=3)
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_keys_rejected(self):
        d = ModelConfig().to_dict()
        d["dropout"] = 0.5
        with pytest.raises(ValueError):
            ModelConfig.from_dict(d)


class TestForward:
    def test_output_shape_64(self):
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs(batch=2, size=64)
        out = model(frames, voxels)
        assert out.shape == (2, 3, 64, 64)

    def test_output_shape_256_default_config(self):
        model = InterpolationNet(ModelConfig())
        frames, voxels = tiny_inputs(batch=1, size=256, bins=8)
        with torch.no_grad():
            out = model(frames, voxels)
        assert out.shape == (1, 3, 256, 256)
        assert torch.isfinite(out).all()

    def test_forward_deterministic(self):
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs()
        assert torch.equal(model(frames, voxels), model(frames, voxels))

    def test_same_seed_same_initialization(self):
        a = InterpolationNet(TINY)
        b = InterpolationNet(TINY)
        for (na, pa), (nb, pb) in zip(
            a.state_dict().items(), b.state_dict().items()
        ):
            assert na == nb
            assert torch.equal(pa, pb), na

    def test_finite_at_default_init(self):
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs(seed=5)
        out = model(frames, 10.0 * voxels)
        assert torch.isfinite(out).all()

    def test_predict_clamps(self):
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs(seed=2)
        out = model.predict(frames, voxels)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_geometry_mismatch_rejected(self):
        model = InterpolationNet(TINY)
        frames, _ = tiny_inputs(size=8)
        _, voxels = tiny_inputs(size=16)
        with pytest.raises(ValueError):
            model(frames, voxels)


class TestParameterCount:
    def test_default_budget(self):
        n = parameter_count(ModelConfig())
        assert 1_600_000 <= n <= 2_600_000

    def test_msa_ablation_strictly_smaller(self):
        full = parameter_count(ModelConfig())
        bare = parameter_count(ModelConfig(msa_enabled=False))
        assert bare < full

    def test_doubling_taps_increases_count(self):
        base = parameter_count(TINY)
        fat = parameter_count(dataclasses.replace(TINY, kernel_taps=8))
        assert fat > base

    def test_variant_forward_shape(self):
        model = build_variant(TINY)
        assert not model.config.msa_enabled
        frames, voxels = tiny_inputs()
        assert model(frames, voxels).shape == (1, 3, 8, 8)


class TestGradientFlow:
    def test_every_parameter_trains_within_first_steps(self):
        # zero-initialized projections block some upstream gradients on the
        # very first batch; after a few optimizer steps nothing stays dead
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs(size=8, seed=9)
        opt = torch.optim.Adamax(model.parameters(), lr=5e-3)
        touched = {name: False for name, _ in model.named_parameters()}
        for _ in range(3):
            opt.zero_grad()
            out = model(frames, voxels)
            loss = (out - 0.5).abs().mean()
            loss.backward()
            for name, p in model.named_parameters():
                if p.grad is not None and p.grad.abs().max() > 0:
                    touched[name] = True
            opt.step()
        dead = sorted(name for name, hit in touched.items() if not hit)
        assert not dead, f"parameters with no gradient in 3 steps: {dead}"


class TestCheckpoint:
    def test_round_trip_preserves_outputs(self, tmp_path):
        model = InterpolationNet(TINY)
        frames, voxels = tiny_inputs(seed=4)
        path = tmp_path / "model.pt"
        save_checkpoint(path, model, extra={"epoch": 3})
        loaded, payload = load_checkpoint(path)
        assert payload["epoch"] == 3
        assert loaded.config == TINY
        torch.testing.assert_close(loaded(frames, voxels), model(frames, voxels))

    def test_version_mismatch_refused(self, tmp_path):
        model = InterpolationNet(TINY)
        path = tmp_path / "model.pt"
        save_checkpoint(path, model)
        payload = torch.load(path, weights_only=True)
        payload["version"] = 99
        torch.save(payload, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_garbage_file_refused(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_extra_key_collision_rejected(self, tmp_path):
        model = InterpolationNet(TINY)
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "m.pt", model, extra={"version": 2})


def make_intervals(bounds=(0, 100, 200, 300, 400)):
    out = []
    for a, b in zip(bounds, bounds[1:]):
        out.append(
            EventInterval(
                a,
                b,
                t=np.array([a], dtype=np.int64),
                x=np.array([1]),
                y=np.array([1]),
                polarity=np.array([1]),
            )
        )
    return tuple(out)


class TestClipSample:
    def test_valid_sample_and_voxels(self):
        sample = ClipSample(
            clip=KeyframeClip(torch.rand(4, 3, 8, 8)),
            intervals=make_intervals(),
            target=torch.rand(3, 8, 8),
        )
        vox = sample.voxels(4)
        assert vox.data.shape == (4, 4, 8, 8)

    def test_gap_between_intervals_rejected(self):
        bad = make_intervals((0, 100, 250, 300, 400))
        bad = (bad[0],) + make_intervals((150, 250, 300, 350, 400))[:3]
        with pytest.raises(ValueError):
            ClipSample(
                clip=KeyframeClip(torch.rand(4, 3, 8, 8)),
                intervals=bad,
                target=torch.rand(3, 8, 8),
            )

    def test_target_geometry_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ClipSample(
                clip=KeyframeClip(torch.rand(4, 3, 8, 8)),
                intervals=make_intervals(),
                target=torch.rand(3, 16, 16),
            )
