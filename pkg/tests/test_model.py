import numpy as np
import pytest
import torch

from seldtrack.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from seldtrack.errors import CheckpointError, ValidationError
from seldtrack.model import (
    ModelConfig,
    TrackSeldModel,
    expected_parameter_count,
    init_model,
    parameter_count,
)

TINY = ModelConfig(n_classes=3, n_mels=16, conv_channels=(4, 8), gru_hidden=8, gru_layers=1)
DESK = ModelConfig(n_classes=3)


def features(t=25, k=16, b=1, seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.standard_normal((b, 7, t, k))).float()


class TestConfig:
    def test_rejects_degenerate_configs(self):
        with pytest.raises(ValidationError):
            ModelConfig(n_classes=3, conv_channels=())
        with pytest.raises(ValidationError):
            ModelConfig(n_classes=3, n_track=1)
        with pytest.raises(ValidationError):
            ModelConfig(n_classes=3, n_mels=60)  # not divisible by 2**4
        with pytest.raises(ValidationError):
            ModelConfig(n_classes=0)

    def test_embed_dim(self):
        assert DESK.embed_dim == 128 * 4
        assert TINY.embed_dim == 8 * 4


class TestInit:
    def test_same_seed_identical(self):
        a = init_model(TINY, 7)
        b = init_model(TINY, 7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = init_model(TINY, 8)
        assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))

    @pytest.mark.parametrize("cfg", [TINY, DESK], ids=["tiny", "desk"])
    def test_parameter_count_matches_closed_form(self, cfg):
        model = TrackSeldModel(cfg)
        assert parameter_count(model) == expected_parameter_count(cfg)


class TestForward:
    def test_output_geometry_five_second_clip(self):
        # 5 s at 24 kHz -> 248 STFT frames -> 50 label frames after x5 pooling
        model = init_model(DESK, 0).eval()
        with torch.no_grad():
            out = model(features(t=248, k=64))
        assert out.sed_logits.shape == (1, 50, 2, 4)
        assert out.ead_prob.shape == (1, 50, 2)
        assert out.doa.shape == (1, 50, 2, 2)

    def test_softmax_rows_sum_to_one(self):
        model = init_model(TINY, 1).eval()
        with torch.no_grad():
            out = model(features(seed=3))
        sums = torch.softmax(out.sed_logits, dim=-1).sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        assert out.ead_prob.min() > 0.0 and out.ead_prob.max() < 1.0

    def test_eval_mode_deterministic_and_pure(self):
        model = init_model(TINY, 2).eval()
        before = {k: v.clone() for k, v in model.state_dict().items()}
        x = features(seed=5)
        with torch.no_grad():
            a = model(x)
            b = model(x)
        assert torch.equal(a.sed_logits, b.sed_logits)
        assert torch.equal(a.ead_prob, b.ead_prob)
        assert torch.equal(a.doa, b.doa)
        for k, v in model.state_dict().items():
            assert torch.equal(before[k], v), f"eval forward mutated {k}"

    def test_train_mode_uses_batch_statistics(self):
        model = init_model(TINY, 2)
        x = features(seed=6, b=4)
        model.train()
        tracked = model.state_dict()["sed_branch.blocks.0.bn1.num_batches_tracked"].clone()
        out_train = model(x)
        assert model.state_dict()["sed_branch.blocks.0.bn1.num_batches_tracked"] > tracked
        model.eval()
        with torch.no_grad():
            out_eval = model(x)
        assert not torch.allclose(out_train.sed_logits, out_eval.sed_logits)

    def test_rejects_geometry_mismatch(self):
        model = init_model(TINY, 0)
        with pytest.raises(ValidationError):
            model(features(k=64))
        with pytest.raises(ValidationError):
            model(torch.zeros(1, 6, 25, 16))

    def test_time_padding_rounds_up(self):
        model = init_model(TINY, 0).eval()
        with torch.no_grad():
            out = model(features(t=23))
        assert out.n_frames == 5  # ceil(23/5)


class TestCheckpoint:
    def test_round_trip_bitexact(self, tmp_path):
        model = init_model(TINY, 3)
        model(features(b=2, seed=1)).sed_logits.sum().backward()  # touch BN stats
        opt = torch.optim.Adam(model.parameters(), lr=5e-4)
        opt.step()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, model, optimizer=opt, extra={"epoch": 3})
        ckpt = load_checkpoint(p)
        assert ckpt.extra["epoch"] == 3
        assert ckpt.config == TINY
        restored = ckpt.build_model()
        for k, v in model.state_dict().items():
            assert torch.equal(restored.state_dict()[k], v), k
        opt2 = torch.optim.Adam(restored.parameters(), lr=5e-4)
        opt2.load_state_dict(ckpt.optimizer_state)
        sd1, sd2 = opt.state_dict(), opt2.state_dict()
        # json round trip turns tuples into lists; compare canonical forms
        import json

        canon = lambda g: json.loads(json.dumps(g, sort_keys=True, default=list))
        assert canon(sd1["param_groups"]) == canon(sd2["param_groups"])
        for pid in sd1["state"]:
            for key in ("exp_avg", "exp_avg_sq"):
                assert torch.equal(sd1["state"][pid][key], sd2["state"][pid][key])

    def test_rejects_corrupted_magic(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, init_model(TINY, 0))
        raw = bytearray(p.read_bytes())
        raw[0] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_rejects_future_version(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, init_model(TINY, 0))
        raw = bytearray(p.read_bytes())
        raw[len(MAGIC)] = FORMAT_VERSION + 1
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)

    def test_rejects_truncated_file(self, tmp_path):
        p = tmp_path / "model.ckpt"
        p.write_bytes(b"SE")
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)
