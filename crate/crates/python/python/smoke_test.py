"""Smoke test for the compiled `bdqcd` module. Run after `pip install`."""

import json
import math

import bdqcd


def main() -> None:
    hs = bdqcd.HypothesisSet.gaussian([0.0, 1.0, 3.0])
    assert hs.q == 2 and len(hs) == 3
    i_star, rows = hs.closest_alternatives()
    assert math.isclose(i_star, 0.5)
    assert rows[0] == (0.5, 0)

    same = bdqcd.HypothesisSet.from_json(
        '[{"family": "gaussian", "mean": 0, "variance": 1},'
        ' {"family": "gaussian", "mean": 1, "variance": 1}]'
    )
    assert math.isclose(same.kl(1, 0), 0.5)

    h = bdqcd.calibrate_h("simultaneous", 5, 2, 5, 1e4)
    assert abs(h - 4.0687) < 1e-4, h

    assert math.isclose(bdqcd.xi_d(3, 2), 0.0, abs_tol=1e-9)
    report = json.loads(bdqcd.theory(hs, 5, 2))
    assert math.isclose(report["i_star"], 0.5)

    sc = bdqcd.Scenario(hs, 3, "multi_shot", 2, 3.0, compromised=1,
                        attack="silent_h0", seed=1, trials=500)
    first = sc.estimate("delay")
    again = sc.estimate("delay")
    assert first.mean == again.mean and first.n == 500
    assert first.mean > 0

    try:
        bdqcd.Scenario(hs, 3, "multi_shot", 1, 3.0, compromised=1)
    except ValueError:
        pass
    else:
        raise AssertionError("d <= M must be rejected")

    print(f"ok: delay {first.mean:.3f} +/- {first.ci_halfwidth:.3f}")


if __name__ == "__main__":
    main()
