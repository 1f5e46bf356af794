import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uegr.config import RunConfig, dump_config, parse_config
from uegr.errors import ConfigInvalid


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


def test_documented_defaults():
    t = RunConfig().train
    assert (t.batch_size, t.epochs, t.weight_decay, t.warmup_ratio, t.lam, t.K) == (16, 10, 0.01, 0.06, 0.01, 2)
    assert t.dropout_rate == 0.4 and t.alpha == 0.8


def test_partial_file_overrides_defaults():
    cfg = parse_config("# comment\nepochs = 3  # trailing\nhidden = 8, 4\nuse_div = false\nsynth_seed = 9\n"
                       "eval_eps = 0.2\n")
    assert cfg.train.epochs == 3 and cfg.train.hidden == (8, 4) and cfg.train.use_div is False
    assert cfg.synth.seed == 9 and cfg.eval_eps == (0.2,)
    assert cfg.train.batch_size == 16


@pytest.mark.parametrize(
    "text,key",
    [
        ("nope = 1", "nope"),
        ("epochs = ten", "epochs"),
        ("use_adv = maybe", "use_adv"),
        ("K = 1", "K"),
        ("batch_size = 0", "batch_size"),
        ("synth_noise_rate = 0.7", "synth_*"),
        ("just words", "just words"),
    ],
)
def test_invalid_entries(text, key):
    with pytest.raises(ConfigInvalid) as e:
        parse_config(text)
    assert e.value.key == key


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0, 2, allow_nan=False),
    st.integers(1, 64),
    st.sampled_from(["sgd", "adamw"]),
    st.lists(st.floats(0, 1), min_size=1, max_size=4),
    st.booleans(),
)
def test_round_trip_property(eps, bs, opt, eval_eps, flag):
    from dataclasses import replace

    base = RunConfig()
    cfg = replace(base, train=replace(base.train, epsilon=eps, batch_size=bs, optimizer=opt, use_dropout=flag),
                  eval_eps=tuple(eval_eps))
    assert parse_config(dump_config(cfg)) == cfg
