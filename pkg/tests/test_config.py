import pytest

from sparsevos.config import ConfigError, RunConfig, config_to_text, load_config, parse_config_text


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.tau1 == 0.9
    assert cfg.tau2 == 0.99
    assert cfg.alpha == 0.995
    assert cfg.k_start == 5 and cfg.k_end == 25


def test_parse_basic():
    text = """
    # training knobs
    seed = 7
    tau1 = 0.85   # gate
    use_mean_teacher = false

    out_dir = runs/a
    """
    values = parse_config_text(text)
    assert values == {"seed": 7, "tau1": 0.85, "use_mean_teacher": False, "out_dir": "runs/a"}


def test_parse_bool_spellings():
    for raw, want in [("true", True), ("Yes", True), ("1", True), ("off", False), ("0", False)]:
        assert parse_config_text(f"update_bank = {raw}")["update_bank"] == want
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("update_bank = maybe")


def test_parse_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key 'taul'"):
        parse_config_text("taul = 0.9")


def test_parse_missing_equals():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config_text("seed = 1\njust words")


def test_overrides_win(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 3\nlearning_rate = 0.5\n")
    cfg = load_config(p, {"seed": "11"})
    assert cfg.seed == 11
    assert cfg.learning_rate == 0.5


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


@pytest.mark.parametrize(
    "key,value",
    [
        ("tau1", "0"),
        ("tau2", "1.5"),
        ("alpha", "1.0"),
        ("k_start", "9"),  # default k_end is 25, so pair with k_end below
        ("iterations", "1"),
        ("learning_rate", "0"),
        ("optimizer", "adam"),
        ("momentum", "1.0"),
        ("bank_mode", "sideways"),
        ("phase2_init", "warm"),
        ("n_shots", "1"),
    ],
)
def test_invariants_rejected(key, value):
    overrides = {key: value}
    if key == "k_start":
        overrides = {"k_start": "9", "k_end": "4"}
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_text_round_trip():
    cfg = load_config(None, {"seed": "5", "tau2": "0.97", "use_mean_teacher": "false"})
    back = parse_config_text(config_to_text(cfg))
    for key, value in back.items():
        assert getattr(cfg, key) == value
    assert back["tau2"] == 0.97
    assert back["use_mean_teacher"] is False


def test_model_and_template_views():
    cfg = RunConfig().validate()
    mc = cfg.model_config()
    assert (mc.key_channels, mc.value_channels, mc.hidden_channels) == (8, 8, 16)
    tpl = cfg.dataset_template()
    assert (tpl.height, tpl.width, tpl.num_frames) == (32, 32, 20)
    assert tpl.max_objects == 2
