"""Smoke test for the softkin_py extension module.

Build first (from the repository root):

    cargo build -p softkin-python --release --features extension-module
    cp target/release/libsoftkin_py.so crates/python/python/softkin_py.so

then run `python3 crates/python/python/smoke_test.py`.
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import softkin_py as sk


def main():
    data = sk.generate_synthetic(seed=3, n_train=300, n_calibration=200, n_test=200, n_extrapolation=100)
    train, cal, test = data["train"], data["calibration"], data["test"]
    assert len(train) == 300 and train.input_names == ["u1", "u2"]
    assert train.output_names == ["x", "y", "z"]

    lr = sk.Model.fit(train, "linear")
    gb = sk.Model.fit(train, "boosted", n_trees=100)
    qr = sk.Model.fit(train, "boosted", n_trees=50, loss={"type": "pinball", "tau": 0.9})
    rmse_lr = sum(sk.rmse(test.outputs, lr.predict(test.inputs))) / 3
    rmse_gb = sum(sk.rmse(test.outputs, gb.predict(test.inputs))) / 3
    print(f"test RMSE: LR {rmse_lr:.3f}, GB {rmse_gb:.3f}")
    assert rmse_gb < rmse_lr
    assert qr.kind == "boosted"

    again = sk.Model.from_json(gb.to_json())
    assert again.predict(test.inputs) == gb.predict(test.inputs)

    calib = sk.Calibrator.calibrate(gb, cal, alpha=0.1)
    lower, center, upper = calib.predict_interval(gb, [0.5, 0.2])
    assert all(l <= c <= u for l, c, u in zip(lower, center, upper))
    cov, wink = calib.evaluate(gb, test)
    print(f"SCP: quantiles {[round(q, 3) for q in calib.quantiles]}, coverage {cov:.3f}, mean Winkler {wink:.3f}")
    assert 0.8 <= cov <= 1.0

    assert sk.winkler(0.0, -1.0, 1.0, 0.1) == 2.0
    assert math.isclose(sk.winkler(2.0, -1.0, 1.0, 0.1), 22.0)
    assert sk.coverage([[0.5], [2.0]], [[0.0], [0.0]], [[1.0], [1.0]]) == 0.5
    assert sk.conformal_quantile([0.1 * i for i in range(1, 10)], 0.1) == 0.9
    assert math.isinf(sk.conformal_quantile([1.0, 2.0], 0.1))
    assert sk.p_value([1.0, 2.0, 3.0], 2.0) == 0.75
    assert sk.ks_statistic([0.0, 1.0], [2.0, 3.0]) == 1.0

    try:
        sk.Model.fit(train, "boosted", learning_rate=3.0)
    except ValueError as e:
        print(f"rejected bad hyperparameter: {e}")
    else:
        raise AssertionError("expected ValueError")

    config = """
[data]
source = "synthetic"
[data.sizes]
train = 200
calibration = 150
test = 100
extrapolation = 100
[quantile]
n_trees = 40
[[models]]
id = "lr"
kind = "linear"
[[models]]
id = "gb"
kind = "boosted"
n_trees = 80
"""
    with tempfile.TemporaryDirectory() as out:
        report = json.loads(sk.run_pipeline(config, out, seed=1))
        for f in report["files"]:
            assert os.path.isfile(os.path.join(out, f)), f
        methods = sorted({r["method"] for r in report["interval_metrics"]})
        print(f"pipeline selected {report['selected']}, interval methods {methods}")
        assert methods == ["CQR", "QR", "SCP"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
