"""Smoke test for the adasgd extension module.

Build and place the module next to this script first:

    cargo build -p adasgd-python --release
    cp target/release/libadasgd_py.so python/adasgd.so
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import adasgd  # noqa: E402


def main():
    data = adasgd.Dataset.synthetic(500, 6, separation=1.5, seed=3)
    assert (data.n_samples, data.n_features) == (500, 6)

    x0 = [0.0] * data.n_features
    assert abs(data.loss(x0) - math.log(2.0)) < 1e-12
    assert len(data.grad(x0)) == 6
    assert len(data.hvp(x0, [1.0] * 6)) == 6

    t, fallback = adasgd.adaptive_step(0.25, 0.25, eps=0.0)
    assert abs(t - 2.0) < 1e-12 and not fallback

    report = adasgd.check(data)
    assert report["passed"], report

    run = adasgd.train(data, "ada-sgd", seed=1, max_iters=100)
    sizes = run.batch_sizes()
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    assert run.final_loss < math.log(2.0)
    csv = run.to_csv().splitlines()
    assert len(csv) == run.iterations + 1
    again = adasgd.train(data, "ada-sgd", seed=1, max_iters=100)
    assert again.to_csv() == run.to_csv()

    fixed = adasgd.train(data, "sgd-fixed", fixed_lr=0.5, max_iters=50)
    assert set(fixed.batch_sizes()) == {16}

    try:
        adasgd.train(data, "sgd-fixed")
    except ValueError:
        pass
    else:
        raise AssertionError("sgd-fixed without a learning rate must fail")

    markov = adasgd.markov_suite(trials=300, seed=2)
    assert markov["passed"], markov

    print(f"ok: {run!r}")


if __name__ == "__main__":
    main()
