import numpy as np
import pytest

from ynetr.checkpoint import (
    ConfigMismatchError,
    load_checkpoint,
    load_into,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)
from ynetr.losses import LossConfig
from ynetr.model import ModelConfig, YNetr
from ynetr.optim import AdamW
from ynetr.phantom import PhantomSpec, generate_phantom
from ynetr.sampling import SamplerConfig
from ynetr.training import (
    TrainConfig,
    TrainingDiverged,
    prepare_case,
    train,
    write_history_csv,
    read_history_csv,
)

WINDOW = (16, 16, 16)


def tiny_model(seed=0, zero_head=True):
    return YNetr(
        ModelConfig(
            input_dims=WINDOW,
            embed_dim=32,
            num_heads=4,
            depth=12,
            decoder_channels=(16, 16, 8, 8, 4),
            init_seed=seed,
            zero_init_head=zero_head,
        )
    )


def tiny_cases(n=1):
    cases = []
    for i in range(n):
        spec = PhantomSpec(
            shape=WINDOW,
            tumor_count=(1, 1),
            tumor_volume_cm3=(0.15, 0.3),
            seed=100 + i,
        )
        vol, lbl = generate_phantom(spec)
        cases.append(prepare_case(f"case_{i}", vol, lbl, WINDOW))
    return cases


def train_cfg(**overrides):
    base = dict(
        learning_rate=1e-3,
        epochs=1,
        steps_per_epoch=4,
        weight_decay=0.0,
        loss=LossConfig(kind="dice_ce", alpha=0.5),
        seed=7,
    )
    base.update(overrides)
    return TrainConfig(**base)


def param_bytes(model):
    return b"".join(p.data.tobytes() for p in model.parameters())


class TestPrepareCase:
    def test_pads_and_splits(self):
        spec = PhantomSpec(shape=(12, 12, 10), tumor_count=(1, 1),
                           tumor_volume_cm3=(0.05, 0.1), seed=3)
        vol, lbl = generate_phantom(spec)
        case = prepare_case("c", vol, lbl, WINDOW)
        assert case.lf.shape == WINDOW
        assert case.hf.shape == WINDOW
        assert case.label.shape == WINDOW
        assert len(case.fg_coords) >= 1
        # lf + hf reconstructs the padded normalized volume
        recon = case.lf + case.hf
        assert recon.shape == WINDOW
        assert np.isfinite(recon).all()


class TestTrainLoop:
    def test_zero_lr_keeps_params(self):
        model = tiny_model()
        before = param_bytes(model)
        opt = AdamW(model.parameters(), lr=0.0, weight_decay=0.0)
        train(model, tiny_cases(), train_cfg(steps_per_epoch=3),
              SamplerConfig(window=WINDOW, jitter_max=4), optimizer=opt)
        assert param_bytes(model) == before

    def test_loss_history_recorded(self):
        model = tiny_model()
        history, _ = train(
            model, tiny_cases(), train_cfg(), SamplerConfig(window=WINDOW, jitter_max=4)
        )
        assert [r.step for r in history] == [1, 2, 3, 4]
        assert all(np.isfinite(r.loss) for r in history)
        assert all(np.isfinite(r.dice) and np.isfinite(r.ce) for r in history)

    def test_deterministic_runs_bitwise(self, tmp_path):
        results = []
        for _ in range(2):
            model = tiny_model()
            history, _ = train(
                model, tiny_cases(), train_cfg(steps_per_epoch=6),
                SamplerConfig(window=WINDOW, jitter_max=4),
            )
            path = tmp_path / "h.csv"
            write_history_csv(history, path)
            results.append((param_bytes(model), path.read_bytes()))
        assert results[0][0] == results[1][0]
        assert results[0][1] == results[1][1]

    def test_divergence_detected(self):
        model = tiny_model()
        model.decoder.head.weight.data[...] = np.nan
        with pytest.raises(TrainingDiverged) as err:
            train(model, tiny_cases(), train_cfg(),
                  SamplerConfig(window=WINDOW, jitter_max=4))
        assert err.value.step == 1

    def test_loss_kind_variants_run(self):
        for kind in ("dice", "ce", "dice_ce"):
            model = tiny_model()
            history, _ = train(
                model, tiny_cases(),
                train_cfg(loss=LossConfig(kind=kind), steps_per_epoch=2),
                SamplerConfig(window=WINDOW, jitter_max=4),
            )
            assert np.isfinite(history[-1].loss)

    def test_history_csv_roundtrip(self, tmp_path):
        model = tiny_model()
        history, _ = train(model, tiny_cases(), train_cfg(steps_per_epoch=2),
                           SamplerConfig(window=WINDOW, jitter_max=4))
        path = tmp_path / "history.csv"
        write_history_csv(history, path)
        header = path.read_text().splitlines()[0]
        assert header == "step,loss,dice_component,ce_component"
        back = read_history_csv(path)
        assert [(r.step, r.loss) for r in back] == [(r.step, r.loss) for r in history]


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        model = tiny_model(seed=1, zero_head=False)
        opt = AdamW(model.parameters(), lr=1e-3)
        path = tmp_path / "ck.ynck"
        save_checkpoint(path, model, opt, step=3, extra={"name": "t"})
        ckpt = load_checkpoint(path)
        assert ckpt.meta["step"] == 3
        assert ckpt.meta["extra"]["name"] == "t"
        restored = restore_model(ckpt)
        assert param_bytes(restored) == param_bytes(model)
        path2 = tmp_path / "ck2.ynck"
        opt2 = AdamW(restored.parameters(), lr=1e-3)
        restore_optimizer(opt2, ckpt)
        save_checkpoint(path2, restored, opt2, step=3, extra={"name": "t"})
        assert path.read_bytes() == path2.read_bytes()

    def test_config_mismatch(self, tmp_path):
        model = tiny_model(seed=2)
        path = tmp_path / "ck.ynck"
        save_checkpoint(path, model, step=0)
        other = YNetr(
            ModelConfig(
                input_dims=WINDOW,
                embed_dim=64,
                num_heads=4,
                depth=12,
                decoder_channels=(16, 16, 8, 8, 4),
            )
        )
        with pytest.raises(ConfigMismatchError):
            load_into(other, load_checkpoint(path))

    def test_resume_equals_uninterrupted(self, tmp_path):
        sampler = SamplerConfig(window=WINDOW, jitter_max=4)
        cases = tiny_cases()

        straight = tiny_model()
        train(straight, cases, train_cfg(steps_per_epoch=6), sampler)

        resumed = tiny_model()
        cfg_a = train_cfg(steps_per_epoch=3)
        _, opt = train(resumed, cases, cfg_a, sampler)
        path = tmp_path / "mid.ynck"
        save_checkpoint(path, resumed, opt, step=3)

        fresh = restore_model(load_checkpoint(path))
        opt2 = AdamW(fresh.parameters(), lr=cfg_a.learning_rate,
                     weight_decay=cfg_a.weight_decay)
        restore_optimizer(opt2, load_checkpoint(path))
        train(fresh, cases, train_cfg(steps_per_epoch=6), sampler,
              optimizer=opt2, start_step=3)

        assert param_bytes(fresh) == param_bytes(straight)
