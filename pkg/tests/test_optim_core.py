import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amoslab.amos import AmosHyperParams
from amoslab.baselines import AdaGradHyperParams, AdamWHyperParams, SGDHyperParams
from amoslab.errors import CheckpointError, ConfigError, ShapeError
from amoslab.optim_core import (
    OptimizerState,
    ParamSpec,
    apply_update,
    checkpoint_metadata,
    init_state,
    load_checkpoint,
    save_checkpoint,
)
from amoslab.tensor import AxisMask


def kernel_spec(name="mlp/kernel", shape=(4, 8), reduce_axis=0, eta=0.5):
    mask = AxisMask.for_axes(len(shape), (reduce_axis,))
    return ParamSpec(name=name, shape=shape, eta=eta, reduction=mask)


class TestInitState:
    def test_amos_reduced_slots_with_momentum(self):
        spec = kernel_spec()
        state = init_state([spec], AmosHyperParams(xi=0.01, mu=0.9))
        slots = state.slots["mlp/kernel"]
        assert state.step == 0
        assert slots["v"].shape == (1, 8)
        assert slots["b"].shape == (1, 8)
        assert slots["m"].shape == (4, 8)
        for arr in slots.values():
            assert not arr.any()

    def test_no_momentum_means_no_m_slot(self):
        state = init_state([kernel_spec()], AmosHyperParams(xi=0.01))
        assert set(state.slots["mlp/kernel"]) == {"v", "b"}

    def test_empty_spec_list(self):
        state = init_state([], AmosHyperParams(xi=0.01))
        assert state.step == 0
        assert state.slots == {}

    def test_no_reduce_full_shape_slots(self):
        spec = ParamSpec("k", (4, 8), eta=1.0, reduction=AxisMask.none(2))
        state = init_state([spec], AmosHyperParams(xi=0.01))
        assert state.slots["k"]["v"].shape == (4, 8)
        assert state.slots["k"]["b"].shape == (4, 8)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            init_state([kernel_spec(), kernel_spec()], AmosHyperParams(xi=0.01))

    def test_baseline_slot_layouts(self):
        spec = kernel_spec()
        adamw = init_state([spec], AdamWHyperParams(alpha=1e-3, schedule="constant"))
        assert {k: v.shape for k, v in adamw.slots["mlp/kernel"].items()} == {
            "m": (4, 8),
            "v": (4, 8),
        }
        adagrad = init_state([spec], AdaGradHyperParams(alpha=0.1))
        assert adagrad.slots["mlp/kernel"]["accum"].shape == (4, 8)
        sgd = init_state([spec], SGDHyperParams(alpha=0.1))
        assert sgd.slots["mlp/kernel"] == {}


class TestParamSpec:
    def test_eta_must_be_positive(self):
        with pytest.raises(ConfigError):
            ParamSpec("x", (2,), eta=0.0, reduction=AxisMask.none(1))

    def test_mask_rank_must_match(self):
        with pytest.raises(ShapeError):
            ParamSpec("x", (2, 2), eta=1.0, reduction=AxisMask.none(1))


class TestApplyUpdate:
    def test_zero_step(self):
        np.testing.assert_array_equal(apply_update(np.array([1.0, 2.0]), np.zeros(2)), [1.0, 2.0])

    def test_full_step(self):
        np.testing.assert_array_equal(
            apply_update(np.array([1.0, 2.0]), np.array([1.0, 2.0])), [0.0, 0.0]
        )

    def test_negative_delta(self):
        assert apply_update(np.array([0.5]), np.array([-0.25]))[0] == 0.75

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_update(np.zeros(2), np.zeros(3))


def random_state_and_params(rng):
    shapes = [(3,), (2, 4), (2, 3, 2)]
    params = {f"p{i}": rng.normal(size=s) for i, s in enumerate(shapes)}
    slots = {
        name: {"v": np.abs(rng.normal(size=arr.shape)), "b": np.abs(rng.normal(size=arr.shape))}
        for name, arr in params.items()
    }
    return OptimizerState(step=int(rng.integers(0, 1000)), slots=slots), params


class TestCheckpointRoundTrip:
    @settings(max_examples=120, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_round_trip_bit_exact(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        state, params = random_state_and_params(rng)
        path = tmp_path_factory.mktemp("ckpt") / "state.ckpt"
        save_checkpoint(state, params, path, hyper_snapshot={"xi": 0.01})
        loaded_state, loaded_params = load_checkpoint(path)
        assert loaded_state.step == state.step
        assert set(loaded_params) == set(params)
        for name, arr in params.items():
            assert loaded_params[name].tobytes() == arr.tobytes()
        for name, slots in state.slots.items():
            for slot, arr in slots.items():
                assert loaded_state.slots[name][slot].tobytes() == arr.tobytes()

    def test_metadata(self, tmp_path):
        state, params = random_state_and_params(np.random.default_rng(0))
        path = tmp_path / "x.ckpt"
        save_checkpoint(state, params, path, hyper_snapshot={"alpha": 0.5})
        meta = checkpoint_metadata(path)
        assert meta["step"] == state.step
        assert meta["hyper"]["alpha"] == 0.5

    def test_truncated_file_rejected(self, tmp_path):
        state, params = random_state_and_params(np.random.default_rng(1))
        path = tmp_path / "x.ckpt"
        save_checkpoint(state, params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 9])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        state, params = random_state_and_params(np.random.default_rng(2))
        path = tmp_path / "x.ckpt"
        save_checkpoint(state, params, path)
        blob = bytearray(path.read_bytes())
        blob[8] = 99  # version field
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
