"""Quick end-to-end check of the Python bindings.

Build first with `pip install --no-build-isolation -e crates/py`.
"""

import math
import tempfile

import rplsim


def main():
    base = rplsim.Scenario.reference()
    assert len(base.node_ids) == 29, base.node_ids
    assert base.adversaries == [27]

    cfg = base.configure("UM-I", "BH", "ao")
    m, trace = rplsim.run_round(cfg, seed=3)
    assert m["sent"] == m["delivered"] + sum(m["drops"].values()) + m["buffered_at_end"]
    assert m["conserved"] and m["violations"] == 0
    assert rplsim.metrics_from_trace(trace) == m
    again, trace2 = rplsim.run_round(cfg, seed=3)
    assert trace == trace2, "same seed must give the same trace"
    print(f"{cfg.name}: pdr {m['pdr']:.3f}, recovery {m['recovery_s']:.0f} s")

    agg = rplsim.run_set(base.configure("PSM-I", "NoAttack", "dc"), rounds=3, seed=1)
    assert agg["pdr"]["mean"] >= 0.95, agg["pdr"]
    print(f"no attack, 3 rounds: pdr {agg['pdr']['mean']:.3f} +/- {agg['pdr']['ci']:.3f}")

    assert abs(rplsim.t_quantile_975(9) - 2.262157162798205) < 1e-9
    assert math.isnan(rplsim.ci95([1.0]))

    rows = rplsim.run_matrix(rounds=2, seed=1, rdc="ao")
    assert len(rows) == 20, len(rows)
    for cid, status, line in rplsim.evaluate(rows):
        print(line[:100])
    with tempfile.TemporaryDirectory() as d:
        assert len(rplsim.write_report(rows, d)) == 21

    try:
        rplsim.Scenario.from_json('{"name": "x", "bogus": 1}')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown keys must be rejected")
    print("smoke test passed")


if __name__ == "__main__":
    main()
