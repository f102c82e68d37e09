"""Smoke tests for the Python bindings.

Import the module from the build tree (plain CMake build) or an installed
wheel, exercise each exposed area once, and check a few hand-computable
values. The heavy numerical verification lives in the C++ test suite.
"""

import math
import os
import sys

import pytest

_BUILD_PY = os.path.join(os.path.dirname(__file__), "..", "..", "build", "python")
if os.path.isdir(_BUILD_PY):
    sys.path.insert(0, os.path.abspath(_BUILD_PY))

nd = pytest.importorskip("normdae")


def test_tensor_round_trip():
    t = nd.Tensor.from_values([2, 3], [1, 2, 3, 4, 5, 6])
    assert t.shape == [2, 3]
    assert t.numel() == 6
    assert t.tolist() == [1, 2, 3, 4, 5, 6]


def test_autodiff_mse_gradient():
    tape = nd.Tape()
    a = nd.Tensor.from_values([2], [3.0, 4.0])
    tape.track(a)
    loss = nd.mse(tape, a, nd.Tensor.from_values([2], [1.0, 1.0]))
    tape.backward(loss)
    # d/da mean((a - t)^2) = 2 (a - t) / n
    assert nd.grad_of(a) == pytest.approx([2.0, 3.0])


def test_linear_matches_manual():
    x = nd.Tensor.from_values([1, 2], [1.0, 2.0])
    w = nd.Tensor.from_values([2, 3], [1, 0, 1, 0, 1, 1])  # [in, out]
    b = nd.Tensor.from_values([3], [0.5, -0.5, 0.0])
    y = nd.linear(None, x, w, b)
    assert y.tolist() == pytest.approx([1.5, 1.5, 3.0])


def test_noise_schedule_endpoints():
    sched = nd.NoiseSchedule.linear(100, 1e-4, 0.02)
    assert sched.steps == 100
    assert sched.alpha_bar(0) == 1.0
    assert sched.beta(1) == pytest.approx(1e-4)
    assert sched.beta(100) == pytest.approx(0.02)
    assert sched.alpha_bar(100) == pytest.approx(0.3635632480554922, abs=1e-12)


def test_sampling_plan():
    plan = nd.SamplingPlan.evenly_spaced(100, 10)
    ts = plan.timesteps
    assert ts[0] == 100
    assert len(ts) == 10
    assert all(a > b for a, b in zip(ts, ts[1:]))


def test_cox_fit_two_groups():
    # Clean two-group data with events in both groups; the high-covariate
    # group dies earlier, so the coefficient must be positive.
    recs = []
    for i, (dur, ev, x) in enumerate(
        [(3, True, 1), (5, True, 1), (7, False, 1), (9, True, 0), (12, True, 0), (15, False, 0)]
    ):
        recs.append(nd.SurvivalRecord(f"s{i}", dur, ev, [float(x)]))
    fit = nd.cox_fit(recs, ["group"])
    assert fit.names == ["group"]
    assert fit.coef[0] > 0
    assert fit.loglik >= fit.loglik_null
    # The fitted coefficient must beat a coarse grid on the same likelihood.
    grid_best = max(
        nd.cox_partial_loglik(recs, [b / 10.0]) for b in range(-50, 51)
    )
    assert nd.cox_partial_loglik(recs, fit.coef) >= grid_best - 1e-6


def test_km_hand_example():
    # 4 subjects: death@2, censor@3, death@5, censor@7 -> S = 3/4 then 3/8.
    recs = [
        nd.SurvivalRecord("a", 2, True, []),
        nd.SurvivalRecord("b", 3, False, []),
        nd.SurvivalRecord("c", 5, True, []),
        nd.SurvivalRecord("d", 7, False, []),
    ]
    km = nd.km_estimate(recs)
    assert [(p.time, p.survival) for p in km] == [(2, 0.75), (5, 0.375)]


def test_ks_hand_example():
    r = nd.ks_two_sample([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
    assert r.statistic == pytest.approx(1.0 / 3.0)


def test_rank_statistics():
    tau = nd.kendall_tau([1.0, 2.0, 3.0], [1.0, 3.0, 2.0])
    assert tau.statistic == pytest.approx(1.0 / 3.0)
    r = nd.pearson([1.0, 2.0, 3.0, 4.0], [2.0, 1.0, 4.0, 3.0])
    assert r.statistic == pytest.approx(0.6)
    nmi = nd.normalized_mutual_info([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], 2)
    assert nmi == pytest.approx(1.0)


def test_scoring_helpers():
    assert nd.cosine_similarity([0.5, 0.5], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2))
    assert nd.standardize([10.0, 20.0, 30.0]) == pytest.approx(
        [-math.sqrt(1.5), 0.0, math.sqrt(1.5)]
    )
    assert nd.compute_reference([[1.0, 2.0], [3.0, 4.0]]) == pytest.approx([2.0, 3.0])


def test_phantom_is_deterministic_and_bounded():
    a = nd.render_phantom(24, 60.0, 1.5, 0, 0.01, 42)
    b = nd.render_phantom(24, 60.0, 1.5, 0, 0.01, 42)
    assert a == b
    assert len(a) == 24 * 24
    assert min(a) >= 0.0 and max(a) <= 1.0
    # More severe atrophy darkens the slice (larger ventricles, thinner cortex).
    mild = nd.render_phantom(24, 60.0, 0.0, 0, 0.0, 42)
    severe = nd.render_phantom(24, 60.0, 3.0, 0, 0.0, 42)
    assert sum(severe) < sum(mild)


def test_pipeline_round_trip(tmp_path):
    ini = """
seed = 3
[phantom]
image_size = 16
healthy_n = 12
patient_n = 8
[model]
channels = 8
latent_dim = 8
time_embed_dim = 8
age_embed_dim = 8
groups = 4
[diffusion]
steps = 20
encode_steps = 5
[train]
epochs = 1
batch_size = 4
"""
    settings = nd.Settings.from_ini(ini)
    out = str(tmp_path / "run")
    nd.run_generate(settings, out)
    nd.run_train(settings, out)
    nd.run_score(settings, out)
    nd.run_survival(settings, out)
    nd.run_report(settings, out)
    for name in [
        "scores.csv",
        "cox_fit_latent_similarity.csv",
        "cox_fit_image_mse.csv",
        "km_split_high_similarity.csv",
        "km_split_low_similarity.csv",
        "report.md",
    ]:
        assert (tmp_path / "run" / name).exists()
    header = (tmp_path / "run" / "scores.csv").read_text().splitlines()[0]
    assert header.split(",")[:4] == ["subject_id", "age", "sex", "latent_similarity"]


def test_config_error_is_typed():
    with pytest.raises(nd.ConfigError):
        nd.Settings.from_ini("nonsense_key = 1")
