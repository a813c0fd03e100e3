"""Smoke tests for the pydgdi module: a tiny end-to-end run plus spot checks
of the exposed operations."""

import math
import os
import sys
import tempfile

import pydgdi


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    # geometry
    assert approx(pydgdi.haversine_km(0, 0, 0, 0), 0.0)
    assert approx(pydgdi.haversine_km(0, 0, 1, 0), 111.195, 1e-2)

    # positional encoding
    pe = pydgdi.positional_encoding(0, 6)
    assert pe[0::2] == [0.0, 0.0, 0.0]
    assert pe[1::2] == [1.0, 1.0, 1.0]
    assert approx(pydgdi.positional_encoding(1, 4)[2], math.sin(0.01), 1e-12)

    # metrics
    assert approx(pydgdi.recall_at_k([1, 5, 12], 10), 2 / 3)
    assert approx(pydgdi.map_at_k([1, 5, 12], 10), 0.4)

    # gradient check on the builtin fixture, twice for determinism
    err1 = pydgdi.gradcheck(seed=7)
    err2 = pydgdi.gradcheck(seed=7)
    assert err1 == err2
    assert err1 < 1e-4, f"gradcheck error too large: {err1}"

    # end-to-end on a small synthetic corpus
    with tempfile.TemporaryDirectory() as tmp:
        n_loc, n_diff = pydgdi.synth(tmp, nodes=20, diffusions=24, seed=3)
        assert (n_loc, n_diff) == (20, 24)
        locations = os.path.join(tmp, "locations.csv")
        diffusions = os.path.join(tmp, "diffusions.csv")

        stats = pydgdi.graph_stats(locations)
        assert stats["n_nodes"] == 20

        ckpt = os.path.join(tmp, "model.dgdi")
        info = pydgdi.train(locations, diffusions, ckpt, epochs=3, dim=8, seed=5)
        assert info["epochs"] == 3
        assert os.path.exists(ckpt)

        report = pydgdi.evaluate(locations, diffusions, ckpt, dim=8, seed=5)
        for k in (3, 5, 10):
            recall, _ = report["recall"][k]
            map_k, _ = report["map"][k]
            assert 0.0 <= map_k <= recall <= 1.0
        assert report["evaluated"] > 0
        assert '"per_k"' in report["json"]

    # errors surface as DgdiError
    try:
        pydgdi.haversine_km(95, 0, 0, 0)
    except pydgdi.DgdiError:
        pass
    else:
        raise AssertionError("expected DgdiError for out-of-range latitude")

    print("pydgdi smoke tests passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
