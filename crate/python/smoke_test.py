"""Smoke test for the ppfa extension module: simulate, train, score, persist."""

import math
import os
import sys
import tempfile

import ppfa


def main() -> int:
    data = ppfa.simulate(1200, 5, 2, 2, seed=3)
    assert len(data) == 1200 and all(len(row) == 5 for row in data)

    model, trace = ppfa.Model.train(data, r=2, s=2, seed=1, max_iterations=15)
    assert trace.startswith("iteration,loglik,residual,seconds\n")
    assert (model.m, model.r, model.s) == (5, 2, 2)
    limits = model.limits
    assert all(limits[k] > 0 for k in ("T2", "SPE", "DI"))

    report = model.score(data)
    assert len(report["T2"]) == 1200
    assert report["burn_in"][:2] == [True, True] and not report["burn_in"][2]
    live = [i for i, b in enumerate(report["burn_in"]) if not b]
    rate = sum(report["flag_SPE"][i] for i in live) / len(live)
    assert rate < 0.03, rate

    shifted = [row[:] for row in data]
    for row in shifted[600:]:
        row[0] += 4.0
    after = model.score(shifted)
    detected = sum(v != "normal" for v in after["verdict"][600:]) / 600
    assert detected > 0.5, detected

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.txt")
        model.save(path)
        again = ppfa.Model.load(path)
        assert again.to_text() == model.to_text()
        assert again.score(data)["DI"] == report["DI"]

    psi, bandwidth = ppfa.kde_limit([float(i % 17) for i in range(500)], 0.95)
    assert math.isfinite(psi) and bandwidth > 0

    try:
        ppfa.Model.train([[1.0, 2.0], [3.0]])
    except ppfa.PpfaError as err:
        assert err.args[0] == "config"
    else:
        raise AssertionError("ragged input accepted")

    print("ppfa smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
