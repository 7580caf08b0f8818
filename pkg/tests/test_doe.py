import csv
import io
import json
import math

import numpy as np
import pytest

from icnn_doe.doe import (
    Weights,
    DoeRequest,
    build_icnn_lp,
    build_lindistflow,
    evaluate_b0,
    make_request,
    results_from_json,
    results_to_csv,
    results_to_json,
    secants,
    solve_doe,
    stress_day,
    surrogate_deltas,
    verify_with_oracle,
)
from icnn_doe.errors import BadSegmentCount, NegativeWeight, UnfoldedModel
from icnn_doe.grid import Bus, Der, Feeder, InjectionVector, Line, load_feeder, solve_distflow
from icnn_doe.icnn import HEAD_KINDS, IcnnModel, MlpModel, Normalization
from icnn_doe.lp import solve_lp
from icnn_doe.surrogates import SurrogateSet, full_plan, retrench


def fig4(loads, der_bus=None, line_limits=(math.inf, -math.inf)):
    buses = [Bus(k, *loads.get(k, (0.0, 0.0)), der=Der(300.0, -100.0, 10.0) if k == der_bus else None)
             for k in range(1, 6)]
    pairs = [(1, 2), (2, 3), (3, 4), (3, 5)]
    lines = [Line(a, b, 0.5, 0.4, *line_limits) for a, b in pairs]
    return Feeder(buses, lines, slack_bus=1)


@pytest.fixture(scope="module")
def small():
    return fig4({2: (100.0, 30.0), 4: (150.0, 50.0), 5: (80.0, 20.0)}, der_bus=5, line_limits=(30.0, -60.0))


@pytest.fixture(scope="module")
def feeder33():
    return load_feeder()


def small_request(feeder, direction="upper", weights=None, T=4, seed=0):
    rng = np.random.default_rng(seed)
    base = feeder.base_injection()
    mult = rng.uniform(0.3, 1.2, size=(T, 1))
    return DoeRequest(base.p * mult, base.q * mult, np.full((T, 1), 300.0), np.full((T, 1), -100.0), [10.0],
                      feeder.limits(), weights or Weights(), direction)


def tiny_bundle(feeder, plan, family="icnn", seed=0):
    """Untrained nets whose outputs sit near the head limits so penalties bind."""
    rng = np.random.default_rng(seed)
    lim = feeder.limits()
    cls = IcnnModel if family == "icnn" else MlpModel
    centre = {
        "loss": np.array([20.0]),
        "v": np.concatenate([np.full(len(plan.v_buses), lim.v_max), -np.full(len(plan.v_buses), lim.v_min)]),
        "ol": lim.i_max[list(plan.ol_lines)],
        "rpf": -lim.p_min[list(plan.rpf_lines)],
    }
    scale = {"loss": 5.0, "v": 0.02, "ol": 5.0, "rpf": 20.0}
    models = {}
    for i, kind in enumerate(HEAD_KINDS):
        out = centre[kind].size
        m = cls.init(2 * feeder.n_bus, [4, 3], out, np.random.default_rng([seed, i]), kind)
        m.norm = Normalization(np.zeros(2 * feeder.n_bus), np.full(2 * feeder.n_bus, 200.0),
                               centre[kind] - scale[kind] * rng.uniform(0, 1, out), np.full(out, scale[kind]))
        m.mask = plan.mask(kind)
        m.plan_fingerprint = plan.fingerprint()
        models[kind] = m
    return SurrogateSet(models, plan)


# retrenchment ------------------------------------------------------------------------


def test_transit_buses_are_dropped():
    plan = retrench(fig4({1: (10.0, 0.0), 4: (50.0, 10.0), 5: (60.0, 10.0)}))
    assert plan.v_buses == (0, 3, 4)
    assert plan.ol_lines == (0, 2, 3)  # line 2-3 joins two transit buses
    assert plan.rpf_lines == ()


def test_fully_loaded_feeder_keeps_everything():
    f = fig4({k: (10.0, 1.0) for k in range(1, 6)})
    assert retrench(f).v_buses == tuple(range(5))
    assert retrench(f).ol_lines == tuple(range(4))


def test_leaf_der_guards_only_its_parent_line():
    plan = retrench(fig4({4: (50.0, 10.0)}, der_bus=5))
    assert plan.rpf_lines == (3,)


def test_33_bus_plan_is_smaller(feeder33):
    plan = retrench(feeder33)
    assert len(plan.v_buses) == feeder33.n_bus - 1
    assert plan.rpf_lines == tuple(int(feeder33.topology.parent_line[j]) for j in feeder33.der_index)


# weights and validation --------------------------------------------------------------


def test_negative_weight_is_rejected():
    with pytest.raises(NegativeWeight):
        Weights(w_v=-1.0)
    with pytest.raises(NegativeWeight):
        Weights(w_doe=math.nan)


def test_bad_segment_count(small):
    with pytest.raises(BadSegmentCount):
        secants(1.0, 1.0, 0)
    with pytest.raises(BadSegmentCount):
        build_lindistflow(small, small_request(small), 0, pwl_segments=2.5)


def test_unfolded_bundle_is_refused(small):
    surr = tiny_bundle(small, retrench(small))
    with pytest.raises(UnfoldedModel):
        build_icnn_lp(small, surr, small_request(small), 0)


@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_zero_penalties_pass_the_request_through(small, direction):
    w = Weights(w_loss=0.0, w_v=0.0, w_ol=0.0, w_rpf=0.0)
    req = small_request(small, direction, w)
    surr = tiny_bundle(small, retrench(small))
    target = req.p_max if direction == "upper" else req.p_min
    for method in ("B1", "B2", "B3"):
        res = solve_doe(small, req, method, surr)
        for r in res:
            assert r.envelope == pytest.approx(list(target[r.interval]), abs=1e-7)
            assert r.j1 == pytest.approx(0.0, abs=1e-6)


# surrogate formulations --------------------------------------------------------------


@pytest.mark.parametrize("direction", ["upper", "lower"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lp_and_milp_agree_on_tiny_icnns(small, direction, seed):
    surr = tiny_bundle(small, retrench(small), seed=seed)
    req = small_request(small, direction, seed=seed)
    lp = solve_doe(small, req, "B1", surr)
    milp = solve_doe(small, req, "B2", surr)
    for a, b in zip(lp, milp):
        assert b.status == "Optimal"
        assert abs(a.objective - b.objective) <= 1e-6 * max(1.0, abs(a.objective))


def test_delta_variables_match_forward_pass(small):
    surr = tiny_bundle(small, retrench(small), seed=4).folded()
    req = small_request(small, "upper", seed=4)
    seen = 0.0
    for t in range(req.n_intervals):
        built = build_icnn_lp(small, surr, req, t)
        sol = solve_lp(built.problem)
        fwd = surrogate_deltas(surr, req, small, t, sol.x[built.envelope])
        for kind, d in built.deltas.items():
            assert sol.x[d] == pytest.approx(fwd[kind], abs=1e-5)
            seen += sol.x[d]
    assert seen > 0  # at least one penalty was active


def test_mlp_milp_runs(small):
    surr = tiny_bundle(small, retrench(small), family="mlp", seed=5)
    res = solve_doe(small, small_request(small, seed=5), "B4", mlp=surr)
    assert all(r.status == "Optimal" and r.n_binaries >= 0 for r in res)
    assert all(r.j == pytest.approx(r.j1 + r.j2 + r.j3) for r in res)


# linearised model --------------------------------------------------------------------


@pytest.mark.parametrize("segments", [1, 3, 8])
def test_secant_error_bound(segments):
    r, span = 0.7, 3.0
    slopes, cuts = secants(r, span, segments)
    s = np.linspace(-span, span, 2001)
    pwl = (slopes[:, None] * s[None, :] + cuts[:, None]).max(axis=0)
    err = pwl - r * s * s
    h = 2 * span / segments
    assert err.min() >= -1e-12
    assert err.max() <= r * h * h / 4 + 1e-12


def test_lindistflow_loss_close_to_exact(small):
    req = small_request(small, "upper", Weights(w_v=0.0, w_ol=0.0, w_rpf=0.0), T=1)
    built = build_lindistflow(small, req, 0, pwl_segments=32)
    sol = solve_lp(built.problem)
    _, exact = verify_with_oracle(small, req, 0, sol.x[built.envelope])
    res = solve_doe(small, req, "B3", pwl_segments=32)[0]
    assert res.loss_verified == pytest.approx(exact)
    assert res.j2_surrogate == pytest.approx(exact, rel=0.1)


def test_penalty_ladder_trades_envelope_for_safety(feeder33):
    day = stress_day(feeder33)
    j1, drpf = [], []
    for w in (0.1, 1.0, 10.0, 100.0, 1e3):
        req = make_request(feeder33, day, "upper", Weights(w_rpf=w), [48])
        r = solve_doe(feeder33, req, "B3")[0]
        j1.append(r.j1)
        drpf.append(r.delta_surrogate["rpf"])
    assert all(a <= b + 1e-6 for a, b in zip(j1, j1[1:]))
    assert all(a >= b - 1e-6 for a, b in zip(drpf, drpf[1:]))
    assert drpf[0] > 0 and drpf[-1] == pytest.approx(0.0, abs=1e-6)


# baseline and verification -----------------------------------------------------------


def test_b0_without_der_has_no_violation():
    f = fig4({2: (20.0, 5.0), 4: (30.0, 5.0)}, line_limits=(100.0, -50.0))
    base = f.base_injection()
    req = DoeRequest(base.p[None], base.q[None], np.zeros((1, 0)), np.zeros((1, 0)), [], f.limits())
    r = evaluate_b0(f, req, 0)
    assert r.j3 == 0 and r.j1 == 0 and r.envelope == []


def test_b0_on_stress_day_reverse_flows(feeder33):
    req = make_request(feeder33, stress_day(feeder33), "upper", intervals=[48])
    r = solve_doe(feeder33, req, "B0")[0]
    assert r.delta_verified["rpf"] > 0 and r.j3 > 0


def test_zero_envelope_verification_is_plain_power_flow(small):
    base = small.base_injection()
    req = DoeRequest(base.p[None], base.q[None], [[300.0]], [[-100.0]], [0.0], small.limits())
    _, loss = verify_with_oracle(small, req, 0, [0.0])
    assert loss == pytest.approx(solve_distflow(small, InjectionVector(base.p, base.q)).loss, abs=1e-12)


def test_intervals_are_independent(small):
    surr = tiny_bundle(small, retrench(small), seed=6)
    req = small_request(small, "upper", T=5, seed=6)
    for method in ("B1", "B3"):
        together = {r.interval: r for r in solve_doe(small, req, method, surr)}
        req_rev = req.with_weights(req.weights)
        req_rev.intervals = [4, 2, 0, 3, 1]
        for r in solve_doe(small, req_rev, method, surr):
            assert r.envelope == pytest.approx(together[r.interval].envelope, abs=1e-9)
        req_one = req.with_weights(req.weights)
        req_one.intervals = [3]
        (one,) = solve_doe(small, req_one, method, surr)
        assert one.envelope == pytest.approx(together[3].envelope, abs=1e-9)


def test_objective_is_the_sum_of_parts(small):
    surr = tiny_bundle(small, retrench(small), seed=7)
    for r in solve_doe(small, small_request(small, seed=7), "B1", surr):
        w = Weights()
        assert r.j == pytest.approx(r.j1 + r.j2 + r.j3)
        assert r.j3 == pytest.approx(w.w_v * r.delta_verified["v"] + w.w_ol * r.delta_verified["ol"]
                                     + w.w_rpf * r.delta_verified["rpf"])


def test_results_round_trip(small):
    surr = tiny_bundle(small, retrench(small), seed=8)
    res = solve_doe(small, small_request(small, seed=8), "B1", surr)
    back = results_from_json(results_to_json(res))
    assert [r.to_dict() for r in back] == [r.to_dict() for r in res]
    rows = list(csv.DictReader(io.StringIO(results_to_csv(res))))
    assert len(rows) == len(res)
    assert [float(row["envelope"]) for row in rows] == [r.envelope[0] for r in res]
    assert json.loads(results_to_json(res))[0]["method"] == "B1"


def test_stress_day_shape(feeder33):
    p0, q0, p_max, p_min = stress_day(feeder33)
    assert p0.shape == (96, feeder33.n_bus) and p_max.shape == (96, 2)
    assert p_max[48, 0] > 0.9 * feeder33.ders[0].p_max and p_max[0, 0] == 0
    total = p0.sum(axis=1)
    assert 70 <= int(np.argmax(total)) <= 84  # evening peak
    assert np.array_equal(stress_day(feeder33)[0], p0)
