"""Smoke test for the lmlrsga_py extension module.

Build first:  maturin develop -m crates/python/Cargo.toml --release
"""

import math
import pathlib
import random
import tempfile

import lmlrsga_py as lm

ROOT = pathlib.Path(__file__).resolve().parent.parent


def check_bilinear_dynamics():
    game = lm.Game.bilinear(1)
    assert game.dims == (1, 1)

    simgd = lm.Optimizer("simgd", game, eta=0.1)
    states = simgd.run(game, [1.0], [0.0], 50)
    ratios = [math.hypot(*b) / math.hypot(*a) for a, b in zip(states, states[1:])]
    assert all(abs(r - math.sqrt(1.01)) < 1e-12 for r in ratios)

    report = lm.analyze(states, 1, 1)
    assert abs(report["spectral_radius"] - math.sqrt(1.01)) < 1e-6
    assert report["stability_class"] in ("marginal", "unstable")

    opt = lm.Optimizer("lmlrsga", game, eta=0.1, tau=0.5)
    x, y = [1.0], [0.0]
    for _ in range(2000):
        x, y = opt.step(game, x, y)
        if math.hypot(x[0], y[0]) <= 1e-4:
            break
    assert math.hypot(x[0], y[0]) <= 1e-4, (x, y)
    print(f"bilinear: SimGD rho {report['spectral_radius']:.6f}, LM-LRSGA converged in {opt.steps_taken} steps")


def check_history_adjoint():
    rng = random.Random(5)
    buf = lm.HistoryBuffer(3, 2, 4)
    rand = lambda k: [rng.uniform(-1, 1) for _ in range(k)]
    for _ in range(6):
        buf.push(rand(3), rand(2), rand(3), rand(2))
    assert len(buf) == 4
    # Side M maps y-space to x-space.
    q, u = rand(2), rand(3)
    lhs = sum(a * b for a, b in zip(buf.direct("m", q), u))
    rhs = sum(a * b for a, b in zip(q, buf.transpose("m", u)))
    assert abs(lhs - rhs) < 1e-12
    print(f"history: {len(buf)} pairs, {buf.stored_scalars} scalars, adjoint gap {abs(lhs - rhs):.1e}")


def check_psd():
    signal = [math.sin(2 * math.pi * 0.25 * k) for k in range(256)]
    freqs, density = lm.welch_psd(signal)
    peak = freqs[max(range(len(density)), key=density.__getitem__)]
    assert peak == 0.25
    print(f"welch: peak at {peak}")


def check_toy_gan_and_errors():
    game = lm.Game.toy_gan(m=2, n=2)
    opt = lm.Optimizer("lmlrsga_ema", game, eta=0.05, tau=0.5, seed=3)
    states = opt.run(game, [0.3, 0.2], [0.1, -0.2], 100)
    assert all(math.isfinite(v) for s in states for v in s)
    try:
        lm.Optimizer("rmsprop", game)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown optimizer accepted")
    print(f"toy gan: final field norm {math.hypot(*game.field(states[-1][:2], states[-1][2:])):.3e}")


def check_run():
    with tempfile.TemporaryDirectory() as out:
        rows = lm.run(str(ROOT / "crates/cli/configs/demo.toml"), out, seed=1, parallel=2)
        assert len(rows) == 15
        assert all((pathlib.Path(r["run_dir"]) / "report.json").exists() for r in rows)
        print(f"demo: {len(rows)} runs, {sum(r['status'] == 'completed' for r in rows)} completed")


if __name__ == "__main__":
    check_bilinear_dynamics()
    check_history_adjoint()
    check_psd()
    check_toy_gan_and_errors()
    check_run()
    print("smoke test passed")
