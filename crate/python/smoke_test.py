"""Smoke test for the maskspec Python extension.

Build it first:  pip install --no-build-isolation -e crates/python
Then run:        python python/smoke_test.py
"""

import itertools
import math
import pathlib

import maskspec

ROOT = pathlib.Path(__file__).resolve().parent.parent


def brute_posterior(initial, transition, tokens):
    v = len(initial)
    acc = [[0.0] * v for _ in tokens]
    for x in itertools.product(range(v), repeat=len(tokens)):
        p = initial[x[0]]
        for a, b in zip(x, x[1:]):
            p *= transition[a][b]
        off = [i for i, t in enumerate(tokens) if t != v and t != x[i]]
        if not off:
            for i, xi in enumerate(x):
                acc[i][xi] += p
        elif len(off) == 1:
            acc[off[0]][x[off[0]]] += p
    return [[a / sum(row) for a in row] for row in acc]


def check_oracle():
    initial = [0.5, 0.3, 0.2]
    transition = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.1, 0.6]]
    m = maskspec.MarkovOracle(initial, transition)
    assert m.vocab_size == 3 and m.mask_id == 3
    for tokens in ([3, 3, 3], [0, 3, 2, 3], [1, 1, 0], [3, 2]):
        got = m.posterior(tokens)
        want = brute_posterior(initial, transition, tokens)
        err = max(abs(a - b) for r, s in zip(got, want) for a, b in zip(r, s))
        assert err < 1e-12, (tokens, err)
    sample = m.sample(10, 5)
    assert sample == m.sample(10, 5) and len(sample) == 10
    assert math.isfinite(m.log_joint(sample))


def check_helpers():
    p, q = [0.7, 0.2, 0.1], [0.2, 0.3, 0.5]
    want = sum(a * math.log(a / b) for a, b in zip(p, q))
    assert abs(maskspec.kl_divergence(p, q) - want) < 1e-12
    assert maskspec.kl_divergence(p, p) == 0.0
    assert maskspec.confidence(p) == 0.7
    assert maskspec.pareto_frontier([(3.0, 0.5), (1.0, 0.2), (2.0, 0.9), (4.0, 0.9)]) == [1, 2]
    try:
        maskspec.kl_divergence([0.5, 0.6], [0.5, 0.5])
    except ValueError:
        pass
    else:
        raise AssertionError("unnormalized input accepted")


def check_pipeline():
    config = (ROOT / "configs" / "quickstart.toml").read_text()
    g = maskspec.generate(config)
    assert len(g["tokens"]) == 16 and g["tokens"][:2] == [0, 1]
    assert g["stats"]["cycles"] == len(g["stats"]["trace"])
    assert g == maskspec.generate(config)

    one = maskspec.sweep(config, jobs=1)
    two = maskspec.sweep(config, jobs=2)
    assert one["records_csv"] == two["records_csv"]
    rows = one["records_csv"].strip().splitlines()
    assert rows[0].startswith("kind,config_id,config_label")
    # drafter_only, verifier_only, trust x2, kl x2, kl_proportional x2, conf_probabilistic x2
    assert len(one["summary"]) == 10 and len(rows) == 1 + 10 * 20
    assert maskspec.sweep(config, seed=3)["records_csv"] != one["records_csv"]


if __name__ == "__main__":
    check_oracle()
    check_helpers()
    check_pipeline()
    print("python smoke test: ok")
