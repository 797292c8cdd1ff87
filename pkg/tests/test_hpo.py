import math

import numpy as np
import pytest
from scipy.stats import kstest

from p2prisk.bench.hpo import (
    DESK_SPACES,
    FULL_SPACES,
    apply_params,
    choice,
    integer,
    loguniform,
    random_search,
    sample_params,
    sample_value,
    space_for,
    uniform,
    validate_space,
)
from p2prisk.errors import ValidationError
from p2prisk.models.registry import ModelSpec
from p2prisk.pipeline import SelectorSpec, StageSpec
from p2prisk.rng import Rng


def test_budget_one_returns_the_draw():
    space = {"C": loguniform(1e-3, 1e2), "penalty": choice(["l1", "l2"])}
    res = random_search(space, 1, lambda p: (0.3, None), Rng(4))
    assert res.best_params == sample_params(space, Rng(4).derive("trial/0"))
    assert res.best_index == 0 and len(res.trials) == 1


def test_single_point_space():
    space = {"C": loguniform(2.0, 2.0), "penalty": choice(["l2"]), "k": integer(7, 7)}
    res = random_search(space, 12, lambda p: (float(Rng(len(str(p))).random()), None), Rng(0))
    assert res.best_params == {"C": pytest.approx(2.0), "k": 7, "penalty": "l2"}


def test_loguniform_ks():
    r = Rng(1, "ks")
    dist = loguniform(1e-4, 1e2)
    logs = np.array([math.log10(sample_value(dist, r)) for _ in range(10_000)])
    assert logs.min() >= -4 and logs.max() <= 2
    assert kstest((logs + 4) / 6, "uniform").pvalue > 0.01


def test_ties_keep_earlier_and_argmax():
    scores = iter([0.2, 0.5, 0.5, 0.1])
    res = random_search({"x": uniform(0, 1)}, 4, lambda p: (next(scores), None), Rng(0))
    assert res.best_index == 1 and res.best_score == 0.5


def test_aborted_trials_accounted():
    calls = {"n": 0}

    def flaky(p):
        calls["n"] += 1
        if calls["n"] % 2:
            raise ValidationError("boom")
        return 1.0, "x"

    res = random_search({"x": uniform(0, 1)}, 6, flaky, Rng(0))
    assert len(res.trials) == 3 and len(res.aborted) == 3
    assert res.log()["n_trials"] + res.log()["n_aborted"] == 6
    with pytest.raises(ValidationError, match="first error: boom"):
        random_search({"x": uniform(0, 1)}, 3, lambda p: (_ for _ in ()).throw(ValidationError("boom")), Rng(0))


def test_invalid_spaces():
    for bad in ({"a": loguniform(0, 1)}, {"a": uniform(2, 1)}, {"a": choice([])}, {"a": {"kind": "beta"}}):
        with pytest.raises(ValidationError):
            validate_space(bad)
    with pytest.raises(ValidationError):
        random_search({"a": uniform(0, 1)}, 0, lambda p: (0, None), Rng(0))


def test_declared_spaces_valid_and_in_bounds():
    for spaces in (FULL_SPACES, DESK_SPACES):
        for key, space in spaces.items():
            validate_space(space)
            for t in range(20):
                p = sample_params(space, Rng(t).derive(key))
                for name, v in p.items():
                    d = space[name]
                    if d["kind"] == "choice":
                        assert v in d["values"]
                    else:
                        assert d["low"] <= v <= d["high"]


def test_sampling_order_free():
    space = {"b": uniform(0, 1), "a": integer(0, 100)}
    rev = dict(reversed(list(space.items())))
    assert sample_params(space, Rng(3)) == sample_params(rev, Rng(3))


def test_stage_param_routed_to_selector():
    stage = StageSpec(selector=SelectorSpec("mi", top_q=0.5))
    space = space_for(ModelSpec("LogReg"), "desk", stage)
    assert "stage.top_q" in space
    spec, st2 = apply_params(ModelSpec("LogReg"), stage, {"C": 0.3, "stage.top_q": 0.7})
    assert spec.params["C"] == 0.3 and st2.selector.top_q == 0.7
    assert space_for(ModelSpec("GBT", {"growth": "leafwise"}))["max_leaves"]["high"] == 1024
