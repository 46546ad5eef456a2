import json

import numpy as np
import pytest

from mbclip.config import (
    ConfigError,
    build_model,
    build_problem,
    load_config,
    parse_config,
)

QUAD = {"kind": "quadratic", "eigenvalues": [1.0, 2.0]}


def parse(**sections):
    return parse_config(sections)


class TestStrictKeys:
    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="unknown key.*banana"):
            parse(banana=1)

    def test_unknown_nested(self):
        with pytest.raises(ConfigError, match=r"clip: unknown key.*micro"):
            parse(clip={"B": 4, "micro": 2})

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="run: missing key.*T"):
            parse(run={"seeds": [0]})


class TestSections:
    def test_divisibility(self):
        with pytest.raises(ConfigError, match="mini-batch not divisible by micro-batch"):
            parse(clip={"B": 6, "b": 4})

    def test_grid_divisibility(self):
        with pytest.raises(ConfigError, match="b=3"):
            parse(clip={"B": 8, "b_grid": [2, 3]})

    def test_fixed_mode_needs_rho(self):
        with pytest.raises(ConfigError, match="rho"):
            parse(clip={"B": 4, "b": 2, "mode": "fixed"})

    def test_bad_mode(self):
        with pytest.raises(ConfigError, match="clip.mode"):
            parse(clip={"B": 4, "mode": "sum"})

    def test_epsilon_range(self):
        with pytest.raises(ConfigError, match="gradient_model.epsilon"):
            parse(gradient_model={"epsilon": 1.5})

    def test_ratio_order(self):
        with pytest.raises(ConfigError, match="ratio_high"):
            parse(gradient_model={"ratio_low": 2.0, "ratio_high": 1.0})

    def test_integer_field(self):
        with pytest.raises(ConfigError, match="expected an integer"):
            parse(run={"T": 10.5})

    def test_bool_is_not_a_number(self):
        with pytest.raises(ConfigError, match="expected a number"):
            parse(run={"T": True})

    def test_lr_rule(self):
        assert parse(run={"T": 3}).run.lr == "theorem"
        assert parse(run={"T": 3, "lr": 0.1}).run.lr == 0.1
        with pytest.raises(ConfigError):
            parse(run={"T": 3, "lr": "cosine"})

    def test_algorithms(self):
        with pytest.raises(ConfigError, match="algorithms"):
            parse(run={"T": 3, "algorithms": ["adam"]})

    def test_problem_kind(self):
        with pytest.raises(ConfigError, match="problem.kind"):
            parse(problem={"kind": "cubic"})

    def test_problem_exclusive_forms(self):
        with pytest.raises(ConfigError, match="either"):
            parse(problem={"kind": "quadratic", "eigenvalues": [1.0], "dim": 3})

    def test_verify_zero_samples(self):
        with pytest.raises(ConfigError, match="verify.halfspace.n"):
            parse(verify={"halfspace": {"n": 0}})

    def test_verify_defaults(self):
        v = parse(verify={}).verify
        assert v["deviation"]["b"] == [1, 2, 4, 16, 64]
        assert v["variance"]["n"] == 1_000_000
        assert v["halfspace"]["dims"] == [3, 8, 64]

    def test_schedule_kinds(self):
        for sched in ({"kind": "calibrated"}, {"kind": "power", "scale": 1.0, "exponent": 0.5},
                      {"kind": "table", "values": {"2": 1.0}}):
            assert parse(gradient_model={"ratio_schedule": sched}).model.ratio_schedule == sched
        with pytest.raises(ConfigError, match="not an integer"):
            parse(gradient_model={"ratio_schedule": {"kind": "table", "values": {"x": 1.0}}})

    def test_bounds_defaults(self):
        bd = parse(bounds={"T": 100, "L": 1, "loss_gap": 1, "sigma": 1, "B": 8,
                           "b": [2], "epsilon": 0.5}).bounds
        assert bd["T"] == [100] and bd["sigma_b"] == 1 and bd["C"] == bd["c"] == 1.0


class TestBuilders:
    def test_quadratic_spectrum(self):
        cfg = parse(problem={"kind": "quadratic", "dim": 4, "spectrum_low": 0.5, "spectrum_high": 2.0})
        p = build_problem(cfg.problem)
        assert p.dim == 4 and p.smoothness_L == 2.0

    def test_logistic_from_file(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,1.0,0.5\n-1,-1.0,0.2\n1,0.3,-0.1\n")
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"problem": {"kind": "logistic", "data_path": "d.csv",
                                                "delimiter": ",", "l2_reg": 0.1}}))
        cfg = load_config(path)
        p = build_problem(cfg.problem, path.parent)
        assert p.dim == 2

    def test_base_direction_dim(self):
        cfg = parse(gradient_model={"base_direction": [1.0, 0.0, 0.0]})
        with pytest.raises(ConfigError, match="dim"):
            build_model(cfg.model, 2)

    def test_random_base_is_seeded(self):
        cfg = parse(gradient_model={"base_seed": 4})
        a = build_model(cfg.model, 5)[1].base_direction
        b = build_model(cfg.model, 5)[1].base_direction
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)

    def test_invalid_json(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(f)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.json")
