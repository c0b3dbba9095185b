import numpy as np
import pytest

from lab.config_text import flatten_config, override_config, parse_config, serialize_config
from lab.errors import ConfigError, InvalidInputError
from schemas.core import Architecture
from schemas.experiment import ExperimentConfig, ExperimentKind, SweepAxis


def test_defaults_from_kind_alone():
    cfg = parse_config("kind = mle-study\n")
    assert cfg.kind is ExperimentKind.mle
    assert cfg.seed == 0
    assert cfg.mle.class_count == 4
    assert cfg.mle.fit.max_iters == 10000


def test_kind_from_caller():
    cfg = parse_config("# comment only\n\n", ExperimentKind.segbench)
    assert cfg.kind is ExperimentKind.segbench
    assert cfg.segbench.schemes == ["binary", "backsplit"]


def test_values_lists_and_comments():
    text = """
    kind = segbench   # trailing comment
    seed = 7
    segbench.schemes = [binary, backsplit, partial-0.5]
    segbench.model.architecture = hidden
    segbench.scene.lesion_size = [1.5, 2.5]
    segbench.train.epochs = 12
    """
    cfg = parse_config(text)
    assert cfg.seed == 7
    assert cfg.segbench.schemes == ["binary", "backsplit", "partial-0.5"]
    assert cfg.segbench.model.architecture is Architecture.hidden
    assert cfg.segbench.scene.lesion_size == (1.5, 2.5)
    assert cfg.segbench.train.epochs == 12


def test_missing_kind():
    with pytest.raises(ConfigError) as e:
        parse_config("seed = 3\n")
    assert "kind" in e.value.detail


def test_conflicting_kind():
    with pytest.raises(ConfigError) as e:
        parse_config("seed = 1\nkind = segbench\n", ExperimentKind.mle)
    assert e.value.lines == (2,)


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = mle-study\nmle.n = 10\nseed = 1\nmle.n = 20\n")
    assert e.value.lines == (2, 4)
    assert "line 2 and line 4" in e.value.detail


def test_unknown_key_names_its_line():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = mle-study\nmle.trails = 10\n")
    assert e.value.lines == (2,)
    assert "trails" in e.value.detail


def test_invalid_value_names_its_line():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = mle-study\nseed = 4\nmle.n = many\n")
    assert e.value.lines == (3,)


def test_cross_field_error_names_section():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = mle-study\nmle.class_count = 3\nmle.target_class = 5\n")
    assert set(e.value.lines) <= {2, 3}


@pytest.mark.parametrize("text, line", [
    ("kind = segbench\nsegbench.schemes = [binary, backsplit\n", 2),
    ("kind = segbench\nsegbench.schemes = binary]\n", 2),
    ("kind = segbench\nsegbench.schemes = [[binary]]\n", 2),
    ("kind = segbench\nsegbench.schemes = [binary, , backsplit]\n", 2),
    ("kind = segbench\njust a line\n", 2),
    ("kind = segbench\nseg bench.seeds = 3\n", 2),
    ("kind = segbench\nsegbench = 3\nsegbench.seeds = 2\n", 2),
])
def test_malformed_lines(text, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert line in e.value.lines


def test_value_and_section_conflict():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = segbench\nsegbench.train.epochs = 3\nsegbench.train = 4\n")
    assert e.value.lines == (2, 3)


def test_unknown_scheme_is_a_config_error():
    with pytest.raises(ConfigError) as e:
        parse_config("kind = segbench\nsegbench.schemes = [binary, fancy]\n")
    assert e.value.lines == (2,)


def test_sweep_validation():
    cfg = parse_config("kind = sweep\nsweep.axis = aux_count\nsweep.values = [0, 2]\n")
    assert cfg.sweep.axis is SweepAxis.aux_count
    assert cfg.sweep_schemes == ["aux-0", "aux-2"]
    with pytest.raises(ConfigError):
        parse_config("kind = sweep\nsweep.axis = aux_count\nsweep.values = [4]\n")
    with pytest.raises(ConfigError):
        parse_config("kind = sweep\nsweep.axis = epochs\nsweep.values = [20, 10]\n")
    with pytest.raises(ConfigError):
        parse_config("kind = sweep\nsweep.axis = aux_fraction\nsweep.values = [0.5, 1.5]\n")


def test_default_sweep_grids():
    cfg = parse_config("kind = sweep\n")
    assert cfg.sweep.grid == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cfg.sweep_schemes == ["partial-0", "partial-0.25", "partial-0.5", "partial-0.75", "partial-1"]


@pytest.mark.parametrize("kind", list(ExperimentKind))
def test_serialize_round_trip(kind):
    cfg = parse_config("seed = 11\nsegbench.schemes = [binary, aux-2, virtual-2]\nmle.fit.ridge = 1e-06\n"
                       "segbench.test_fraction = 0.3\n", kind)
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_flatten_omits_unset_optionals():
    flat = flatten_config(ExperimentConfig(kind=ExperimentKind.mle))
    assert "mle.true_theta" not in flat
    assert "out_dir" not in flat
    assert flat["mle.fit.max_iters"] == "10000"
    assert flat["segbench.schemes"] == "[binary, backsplit]"
    assert list(flat) == sorted(flat)


def test_override():
    cfg = parse_config("kind = metrics-eval\n")
    updated = override_config(cfg, {"seed": 9, "out_dir": None, "metrics.tolerance": 2.0,
                                    "metrics.spacing": (0.5, 0.5)})
    assert updated.seed == 9
    assert updated.out_dir is None
    assert updated.metrics.tolerance == 2.0
    assert updated.metrics.spacing == (0.5, 0.5)
    with pytest.raises(InvalidInputError):
        override_config(cfg, {"metrics.target_class": "lesion"})


def test_arbitrary_text_never_escapes_config_error():
    rng = np.random.default_rng(0)
    alphabet = list("abcdefghijklmnopqrstuvwxyz._=[],# \n-0123456789")
    for _ in range(500):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 80))))
        try:
            parse_config(text)
        except ConfigError as e:
            assert e.lines
            assert all(line >= 1 for line in e.lines)
