import pytest

from implicit_vsr.config import (
    DESK_PRESET,
    RunConfig,
    TrainConfig,
    coerce,
    parse_config_file,
    resolve,
)
from implicit_vsr.errors import ValidationError
from implicit_vsr.model import ModelConfig


def test_defaults_match_reference_schedule():
    cfg = resolve()
    assert cfg.train.lr == 1e-4
    assert cfg.train.epochs == 400 and cfg.train.batch == 7 and cfg.train.patch == 256
    assert cfg.loss.lam == 0.2
    m = cfg.model
    assert (m.channels, m.num_scales, m.num_atoms, m.radius, m.extract_blocks, m.up_blocks) == (64, 7, 8, 2, 8, 13)
    assert (m.freq_low, m.freq_high) == (2.0, 16.0)


def test_flag_beats_file_beats_default(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\nlr = 1e-3\nbatch = 3  # trailing comment\n\nno_ita = true\n")
    cfg = resolve(path, {"batch": "5", "no_lc": True})
    assert cfg.train.lr == 1e-3 and cfg.sources["lr"] == "file"
    assert cfg.train.batch == 5 and cfg.sources["batch"] == "flag"
    assert cfg.model.no_ita is True and cfg.train.no_lc is True
    assert cfg.sources.get("epochs", "default") == "default"
    assert "batch = 5  # flag" in cfg.describe()


def test_base_preset_counts_as_default():
    cfg = resolve(None, {"channels": "8"}, base=DESK_PRESET)
    assert cfg.model.channels == 8 and cfg.model.num_scales == 3
    assert cfg.sources["num_scales"] == "default"


def test_round_trip_and_fingerprint():
    cfg = resolve(None, {"lr": "2e-4", "no_rec": True})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.fingerprint() == cfg.fingerprint()
    assert resolve().fingerprint() != cfg.fingerprint()
    # sources do not affect identity
    assert resolve(None, {"lr": "1e-4"}).fingerprint() == resolve().fingerprint()


def test_model_fingerprint_ignores_training_fields():
    a = resolve(None, {"lr": "1e-3"})
    b = resolve(None, {"lr": "1e-5"})
    assert a.model_fingerprint() == b.model_fingerprint()
    assert a.model_fingerprint() != resolve(None, {"channels": "32"}).model_fingerprint()


@pytest.mark.parametrize("key,value,expected", [
    ("batch", "4", 4), ("steps", "2e3", 2000), ("lr", "1e-4", 1e-4),
    ("no_isc", "yes", True), ("no_isc", "0", False), ("flow", "zero", "zero"),
])
def test_coerce(key, value, expected):
    assert coerce(key, value) == expected


@pytest.mark.parametrize("key,value", [("batch", "four"), ("no_isc", "maybe"), ("bogus", "1")])
def test_coerce_errors(key, value):
    with pytest.raises(ValidationError):
        coerce(key, value)


def test_config_file_errors(tmp_path):
    with pytest.raises(ValidationError):
        parse_config_file(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("lr 1e-4\n")
    with pytest.raises(ValidationError, match="bad.cfg:1"):
        parse_config_file(bad)
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("learning_rate = 1\n")
    with pytest.raises(ValidationError, match="learning_rate"):
        parse_config_file(unknown)


@pytest.mark.parametrize("kwargs", [
    {"lr": 0}, {"batch": 0}, {"patch": 30}, {"lr_min": 1.0}, {"epochs": -1},
])
def test_train_config_validation(kwargs):
    with pytest.raises(ValidationError):
        TrainConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"channels": 0}, {"num_scales": 0}, {"radius": -1}, {"scale": 2}, {"freq_low": 20.0},
])
def test_model_config_validation(kwargs):
    with pytest.raises(ValidationError):
        ModelConfig(**kwargs)


def test_ablation_flags_are_independent():
    cfg = resolve(None, {"no_isc": True, "no_bidir": True})
    assert (cfg.model.no_isc, cfg.model.no_ita, cfg.model.no_rec, cfg.model.no_bidir) == (True, False, False, True)
    assert cfg.train.no_lc is False
