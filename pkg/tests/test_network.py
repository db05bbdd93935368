import numpy as np
import pytest

from josnc.network import (Model, ModelConfig, NetworkError, ema_update,
                           forward_arrays, load_checkpoint, save_checkpoint)


def make_model(rng, input_dim=6, n_classes=4, hidden=(16, 16), embed=8):
    return Model(ModelConfig(input_dim, n_classes, hidden, embed), rng)


def test_config_validation():
    with pytest.raises(NetworkError):
        ModelConfig(0, 4)
    with pytest.raises(NetworkError):
        ModelConfig(6, 1)
    with pytest.raises(NetworkError):
        ModelConfig(6, 4, embed_dim=0)


def test_forward_shapes_and_probs(rng):
    m = make_model(rng)
    x = rng.normal(size=(5, 6))
    logits, probs, emb = m.forward(x)
    assert logits.data.shape == (5, 4)
    np.testing.assert_allclose(probs.data.sum(axis=1), np.ones(5), atol=1e-12)
    assert np.all(probs.data > 0)
    norms = np.sqrt((emb.data ** 2).sum(axis=1))
    np.testing.assert_allclose(norms, np.ones(5), atol=1e-9)


def test_zero_classifier_gives_uniform(rng):
    m = make_model(rng)
    m.params["classifier.W"].data[:] = 0.0
    m.params["classifier.b"].data[:] = 0.0
    _, probs, _ = m.forward(rng.normal(size=(3, 6)))
    np.testing.assert_allclose(probs.data, np.full((3, 4), 0.25), atol=1e-12)


def test_forward_rejects_wrong_dim(rng):
    m = make_model(rng)
    with pytest.raises(NetworkError):
        m.forward(rng.normal(size=(3, 7)))


def test_forward_arrays_matches_tape_forward(rng):
    m = make_model(rng)
    x = rng.normal(size=(7, 6))
    _, probs_t, emb_t = m.forward(x)
    probs_a, emb_a = forward_arrays(m.snapshot_view(), m.config, x)
    np.testing.assert_allclose(probs_a, probs_t.data, atol=1e-12)
    np.testing.assert_allclose(emb_a, emb_t.data, atol=1e-12)


def test_teacher_snapshot_is_off_tape(rng):
    m = make_model(rng)
    teacher = m.snapshot()
    for name, arr in teacher.items():
        assert isinstance(arr, np.ndarray)
        assert arr is not m.params[name].data
        np.testing.assert_array_equal(arr, m.params[name].data)


# EMA --------------------------------------------------------------------------

def test_ema_fixed_point_when_equal(rng):
    m = make_model(rng)
    teacher = m.snapshot()
    before = {k: v.copy() for k, v in teacher.items()}
    ema_update(teacher, m, 0.99)
    for k in teacher:
        np.testing.assert_allclose(teacher[k], before[k], atol=1e-15)


def test_ema_omega_zero_copies_student(rng):
    m = make_model(rng)
    teacher = {k: np.zeros_like(v.data) for k, v in m.params.items()}
    ema_update(teacher, m, 0.0)
    for k in teacher:
        np.testing.assert_array_equal(teacher[k], m.params[k].data)


def test_ema_geometric_convergence(rng):
    # constant student: gap after t steps is omega^t * initial gap
    m = make_model(rng)
    omega = 0.9
    teacher = {k: v.data + 1.0 for k, v in m.params.items()}
    for _ in range(10):
        ema_update(teacher, m, omega)
    for k in teacher:
        gap = teacher[k] - m.params[k].data
        np.testing.assert_allclose(gap, np.full_like(gap, omega ** 10), atol=1e-12)


def test_ema_validation(rng):
    m = make_model(rng)
    teacher = m.snapshot()
    with pytest.raises(NetworkError):
        ema_update(teacher, m, 1.5)
    del teacher["classifier.b"]
    with pytest.raises(NetworkError):
        ema_update(teacher, m, 0.99)


# checkpoints --------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    m = make_model(rng)
    student = m.snapshot()
    teacher = {k: v + rng.normal(size=v.shape) for k, v in student.items()}
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(path, student, teacher)
    s2, t2 = load_checkpoint(path)
    assert set(s2) == set(student) and set(t2) == set(teacher)
    for k in student:
        np.testing.assert_array_equal(s2[k], student[k])
        np.testing.assert_array_equal(t2[k], teacher[k])


def test_checkpoint_bytes_deterministic(tmp_path, rng):
    m = make_model(rng)
    student = m.snapshot()
    teacher = m.snapshot()
    p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_checkpoint(p1, student, teacher)
    save_checkpoint(p2, student, teacher)
    assert open(p1, "rb").read() == open(p2, "rb").read()
