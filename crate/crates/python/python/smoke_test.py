"""Smoke test for the scalegnn_py extension module."""

import math
import tempfile

import scalegnn_py as sg


def main():
    ds = sg.Dataset.planted(n=200, classes=3, features=12, seed=1)
    print(ds)
    assert ds.n == 200 and ds.num_classes == 3

    with tempfile.TemporaryDirectory() as tmp:
        ds.save(tmp)
        back = sg.Dataset.load(tmp)
        assert back.n == ds.n and back.labels == ds.labels

    hops = sg.HopSet([(0, 1), (1, 2), (2, 3)], 4, 3)
    assert hops.pure_nnz() == [6, 4, 2], hops.pure_nnz()
    assert sorted(hops.pure(3)) == [(0, 3, 1.0), (3, 0, 1.0)]

    assert sg.micro_macro_f1([0, 1, 1, 1], [0, 0, 1, 1], [0, 1, 2, 3], 2)[0] == 0.75
    assert all(abs(a - 1 / 3) < 1e-15 for a in sg.softmax_weights([0.0, 0.0, 0.0]))

    x = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    eye = [[1.0, 0.0], [0.0, 1.0]]
    scores = sg.lcs_scores(x, eye, eye, [(0, 1), (0, 2)], 3)
    row0 = [s for r, _, s in scores if r == 0]
    assert math.isclose(sum(row0), 1.0)

    err, ok = sg.gradcheck()
    print(f"gradcheck max relative error {err:.2e}")
    assert ok

    result = sg.train(ds, epochs=30, hops=3, beta=0.5, seed=0)
    print(f"test micro-F1 {100 * result.test_micro_f1:.2f}%, best epoch {result.best_epoch}")
    assert result.test_micro_f1 > 0.5
    assert abs(sum(result.alpha) - 1.0) < 1e-12

    try:
        sg.train(ds, beta=2.0)
    except ValueError as e:
        print(f"rejected bad config: {e}")
    else:
        raise AssertionError("beta=2.0 accepted")
    print("smoke test OK")


if __name__ == "__main__":
    main()
