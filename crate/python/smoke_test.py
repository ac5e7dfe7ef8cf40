"""Smoke test for the decnn Python extension.

Build and install the module first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py` (or `pytest python/`).
"""

import json
import math
import os
import tempfile

import decnn


def test_metrics():
    assert decnn.roc_auc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert decnn.roc_auc([0.5], [0.5]) == 0.5
    assert decnn.entropy([5, 0, 0]) == 0.0
    assert abs(decnn.entropy([1, 1]) - math.log(2)) < 1e-12
    assert decnn.ece([1.0, 1.0], [True, True], 10) == 0.0


def test_train_predict_and_persist():
    images, labels, groups = decnn.biased_synthetic(200, 0)
    assert len(images) == 200 and len(images[0]) == 256
    assert set(groups) <= {0, 1}
    config = {
        "objective": "redecnn",
        "epochs": 2,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "depth": 2,
        "arch": {"input_dim": 256, "blocks": 2, "hidden": 16, "classes": 2, "decoder_hidden": 32},
    }
    model, losses = decnn.train(images, labels, 16, 16, json.dumps(config))
    assert len(losses) == 2 and all(math.isfinite(v) for v in losses)
    assert model.arch["blocks"] == 2

    probs = model.predict_proba(images[:8])
    assert all(abs(sum(p) - 1.0) < 1e-9 for p in probs)
    assert model.predict(images[:8]) == [max(range(2), key=p.__getitem__) for p in probs]

    layers = model.decode_layers(images[:3])
    assert len(layers) == 2 and len(layers[0]) == 3 and len(layers[0][0]) == 256

    entropies, majorities = model.uncertainty(images[:10], samples=5, depth=2, seed=1)
    assert all(0.0 <= e <= math.log(2) + 1e-12 for e in entropies)
    assert len(majorities) == 10

    adv = model.fgsm(images[:4], labels[:4], 0.1)
    assert all(0.0 <= v <= 1.0 for row in adv for v in row)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        again = decnn.Model.load(path)
        assert again.predict_proba(images[:8]) == probs


def test_errors_are_typed():
    try:
        decnn.Model.load("/nonexistent/model.bin")
    except decnn.DecnnError:
        pass
    else:
        raise AssertionError("expected DecnnError")


if __name__ == "__main__":
    test_metrics()
    test_train_predict_and_persist()
    test_errors_are_typed()
    print("python smoke test passed")
