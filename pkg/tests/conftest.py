import numpy as np
import pytest

from pdmotor.network import NetConfig, build, train
from pdmotor.preprocess import filter_no_motion
from pdmotor.synth import SynthProfile, generate_corpus, make_profiles, synth_generate


def numeric_gradient(loss_fn, tensor, h=1e-6):
    """Test-local central-difference oracle, independent of the engine."""
    grad = np.zeros_like(tensor)
    flat, gflat = tensor.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2 * h)
    return grad


def max_rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.fixture(scope="session")
def separable_corpus():
    """Small clearly-rendered corpus: (X, y) of 60 windows, all classes."""
    profiles = make_profiles(
        2, seed=11, ambiguity=0.0, separation=1.5, no_motion_fraction=0.0,
        mean_run_minutes=2.0, force_extremes=False,
    )
    records = generate_corpus(profiles, 30)
    windows = [w for r in records for w in r.labeled_windows()]
    X = np.stack([w.values for w in windows])
    y = np.array([w.label for w in windows])
    return X, y


@pytest.fixture(scope="session")
def trained_small_net(separable_corpus):
    """One desk-scale network trained enough to be class-sensitive."""
    X, y = separable_corpus
    cfg = NetConfig(width_scale=64, epochs=12, batch_size=16, lr=0.001, seed=4)
    params = build(cfg)
    params, _ = train(params, X, y)
    return params
