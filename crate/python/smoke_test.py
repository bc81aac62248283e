"""Smoke test for the mflqg Python extension.

Build and install the module first, e.g.

    maturin develop -m crates/python/Cargo.toml --release

then run `python python/smoke_test.py`.
"""

import json
import math

import mflqg


def close(a, b, tol):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    # Scalar problem with a closed-form answer: -2p - p^2 + 1 = 0.
    model = mflqg.Model([[-1.0]], [[1.0]], [[0.0]], [[0.0]])
    cost = mflqg.Cost([[1.0]], [[1.0]], [[0.0]])
    fb = mflqg.pi_feedback(model, cost, [[0.0]])
    assert abs(fb["P"][0][0] - (math.sqrt(2) - 1)) < 1e-9, fb

    # Lyapunov: -2x + x + 1 = 0.
    assert abs(mflqg.lyapunov([[-1.0]], [[1.0]], [[1.0]])[0][0] - 1.0) < 1e-12

    assert mflqg.svec([[1.0, 2.0], [2.0, 3.0]]) == [1.0, 4.0, 3.0]
    assert mflqg.smat([1.0, 4.0, 3.0]) == [[1.0, 2.0], [2.0, 3.0]]
    assert mflqg.quad_features([2.0, 3.0]) == [4.0, 6.0, 9.0]
    e = mflqg.expm([[-1.0, 0.0], [0.0, -2.0]])
    assert close(e, [[math.exp(-1), 0.0], [0.0, math.exp(-2)]], 1e-14)

    bench = mflqg.Model.benchmark()
    weights = mflqg.Cost.benchmark()
    assert bench.is_ms_stabilizer([[6.0, -3.0]])
    fb = mflqg.pi_feedback(bench, weights, [[6.0, -3.0]])
    ff = mflqg.pi_feedforward(bench, weights, fb["K"], fb["Lambda"], fb["P"])
    upsilon = [[1.25 + fb["Lambda"][0][0]]]
    b_hat = mflqg.identify_b(ff["S"], ff["Ks"], upsilon)
    assert close(b_hat, bench.B, 1e-10), b_hat

    ref = mflqg.pi_feedforward(bench, weights, [[8.4670, -4.9231]], [[0.2010]])
    assert close(ref["S"], [[-3.4935, 3.5718], [3.5718, -9.7025]], 5e-4), ref

    try:
        mflqg.Model([[1.0, 0.0]], [[1.0]], [[0.0]], [[0.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-square A accepted")

    config = mflqg.benchmark_config()
    assert mflqg.validate_config(config)["ok"]
    report = json.loads(mflqg.run_experiment(config, mode="gains"))
    assert report["learned"]["model_reads_during_learning"] == 0
    print("K learned:", report["learned"]["feedback"]["K"])
    print("K oracle: ", report["oracle"]["feedback"]["K"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
