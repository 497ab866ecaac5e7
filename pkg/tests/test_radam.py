import numpy as np
import pytest

from nfs.errors import ContractViolation, NonFiniteGradientError
from nfs.gradcore import (
    RAdam,
    Tensor,
    load_checkpoint,
    radam_step,
    rho_t,
    save_checkpoint,
)
from oracles import scalar_radam


def test_rho_small_at_step_one():
    assert rho_t(0.999, 1) <= 4.0


def test_first_step_is_momentum_only():
    # At t=1 the rectification gate is closed: update = lr * m_hat = lr * g.
    p = {"w": Tensor(np.asarray(1.0), requires_grad=True)}
    opt = RAdam(p, lr=1e-3)
    opt.step({"w": np.asarray(0.5)})
    assert float(p["w"].data) == pytest.approx(1.0 - 1e-3 * 0.5, abs=1e-15)


def test_zero_gradient_is_identity():
    rng = np.random.default_rng(0)
    p = {"w": Tensor(rng.standard_normal((3, 2)), requires_grad=True)}
    before = p["w"].data.copy()
    opt = RAdam(p, lr=1e-2)
    for _ in range(10):
        opt.step({"w": np.zeros((3, 2))})
    assert np.array_equal(p["w"].data, before)


def test_trajectory_matches_scalar_oracle():
    p = {"w": Tensor(np.asarray(1.0), requires_grad=True)}
    opt = RAdam(p, lr=1e-3)
    seen = []
    for _ in range(10):
        opt.step({"w": np.asarray(1.0)})
        seen.append(float(p["w"].data))
    expected = scalar_radam([1.0] * 10, lr=1e-3, w0=1.0)
    assert np.allclose(seen, expected, atol=1e-12, rtol=0.0)


def test_trajectory_matches_oracle_random_grads():
    rng = np.random.default_rng(3)
    grads = rng.standard_normal(40).tolist()
    p = {"w": Tensor(np.asarray(0.2), requires_grad=True)}
    opt = RAdam(p, lr=3e-3)
    seen = [float(p["w"].data) for _ in ()]
    for g in grads:
        opt.step({"w": np.asarray(g)})
        seen.append(float(p["w"].data))
    expected = scalar_radam(grads, lr=3e-3, w0=0.2)
    assert np.allclose(seen, expected, atol=1e-12, rtol=0.0)


def test_nonfinite_gradient_rejects_whole_step():
    p = {
        "good": Tensor(np.asarray(1.0), requires_grad=True),
        "bad": Tensor(np.asarray(1.0), requires_grad=True),
    }
    opt = RAdam(p, lr=1e-3)
    with pytest.raises(NonFiniteGradientError) as err:
        opt.step({"good": np.asarray(1.0), "bad": np.asarray(np.nan)})
    assert "bad" in str(err.value)
    assert float(p["good"].data) == 1.0
    assert opt.state.step_count == 0


def test_shape_mismatch_rejected():
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(ContractViolation):
        radam_step(p, {"w": np.zeros(4)}, RAdam(p).state)


def test_step_count_strictly_increases():
    p = {"w": Tensor(np.asarray(0.0), requires_grad=True)}
    opt = RAdam(p)
    for want in (1, 2, 3):
        opt.step({"w": np.asarray(0.1)})
        assert opt.state.step_count == want


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    params = {
        "a.weight": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
        "a.bias": Tensor(rng.standard_normal(3), requires_grad=True),
        "scalar": Tensor(np.asarray(rng.standard_normal()), requires_grad=True),
    }
    config = {"chan": 4, "note": "fixture"}
    path = tmp_path / "model.nfsckpt"
    save_checkpoint(path, params, config, seed=42)
    arrays, cfg, seed = load_checkpoint(path)
    assert cfg == config and seed == 42
    for name, t in params.items():
        assert arrays[name].tobytes() == t.data.tobytes()
        assert arrays[name].shape == t.data.shape
    save_checkpoint(tmp_path / "again.nfsckpt", params, config, seed=42)
    assert (tmp_path / "model.nfsckpt").read_bytes() == (tmp_path / "again.nfsckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.nfsckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ContractViolation):
        load_checkpoint(path)
