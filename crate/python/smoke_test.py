"""Smoke test for the ida_calib extension module.

Build the module first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or copy target/<profile>/libida_calib.so next to this file as ida_calib.so.
"""

import math
import tempfile

import ida_calib as ic


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    # Scalar hand example: w = [1], [0]; Σ = [[1]]; λ = 0.5.
    head = ic.ClassifierHead([[1.0], [0.0]], [0.0, 0.0], [0, 1])
    stats = ic.DemoStats([0.0], [[1.0]], 5)
    scores = ic.ida_scores(head, [0.0], stats, lam=0.5)
    assert close(scores[1], math.log1p(math.exp(0.25))), scores
    assert scores[0] == scores[1]

    # λ = 0 reduces to the negated log-softmax.
    h = [2.0]
    vanilla = ic.log_softmax_prob(head, h, 0)
    assert close(vanilla, math.log(math.exp(2) / (math.exp(2) + 1)))
    assert close(ic.ida_scores(head, h, stats, lam=0.0)[0], -vanilla)

    # Stats estimation and merging.
    s = ic.DemoStats.estimate([[1.0, 2.0], [3.0, 4.0]])
    assert s.mean == [2.0, 3.0] and s.cov == [[1.0, 1.0], [1.0, 1.0]]
    merged = ic.DemoStats.estimate([[1.0, 2.0]]).merge(ic.DemoStats.estimate([[3.0, 4.0]]))
    assert all(close(a, b) for a, b in zip(merged.mean, s.mean))

    # Synthetic task, prediction, evaluation and a bundle round trip.
    bundle = ic.generate_task([[-0.5, 0.0], [0.5, 0.0]], [0.1, 0.9], 40, 200,
                              shared_cov_scale=0.25, seed=3, context_mix=1.0)
    demo_stats = ic.DemoStats.estimate(bundle.demo_features)
    priors = ic.empirical_priors(bundle.demo_labels, 2)
    assert close(priors[0], 0.1)
    preds = ic.predict(bundle.head, bundle.query_features, demo_stats, priors=priors)
    report = ic.evaluate([p["decision"] for p in preds], bundle.query_labels, 2)
    assert 0.5 < report["accuracy"] <= 1.0, report
    with tempfile.TemporaryDirectory() as d:
        bundle.stats = demo_stats
        bundle.write(d)
        back = ic.Bundle.read(d)
        assert back.query_features == bundle.query_features
        assert back.stats is not None and back.stats.count == 40

    # Oracle agreement and the MGF identity.
    rep = ic.oracle(bundle.head, bundle.query_features[0], demo_stats, m=200_000, seed=1)
    assert all(abs(z) <= 5 for z in rep["z_gap"]), rep
    mc, se, exact = ic.mgf_check(1.0, 0.0, 1.0, m=200_000, seed=2)
    assert abs(mc - exact) <= 4 * se
    assert ic.mgf_check(0.0, 3.0, 2.0, m=10) == (1.0, 0.0, 1.0)

    # Errors map to Python exceptions.
    for bad in (lambda: ic.ClassifierHead([[1.0]], [0.0], [0]),
                lambda: ic.DemoStats([0.0], [[-1.0]], 1),
                lambda: ic.ida_scores(head, [1.0, 2.0], stats)):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    try:
        ic.Bundle.read("/nonexistent/bundle")
    except ValueError as e:
        assert "manifest" in str(e)

    print("smoke test ok:", report["accuracy"], [round(z, 2) for z in rep["z_gap"]])


if __name__ == "__main__":
    main()
