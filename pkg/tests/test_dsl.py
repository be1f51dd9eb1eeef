import pytest
from hypothesis import given
from hypothesis import strategies as st

from spincluster.sequence import dsl
from spincluster.sequence.builtins import BUILTIN_NAMES, BuiltinError, builtin, builtin_text
from spincluster.sequence.dsl import (PulseStep, SequenceSemanticError, SequenceSyntaxError, Sym,
                                      parse_sequence, print_sequence)

ECHO = """
sequence echo   # comment
sweep tau us 0 2 5
pulse NV x 90
delay tau/2
pulse NV x 180 & pulse N x 180
delay tau/2
pulse NV y 90
readout
"""


def test_parse_echo():
    seq = parse_sequence(ECHO)
    assert seq.name == "echo"
    assert seq.sweep.kind == "time" and seq.sweep.count == 5
    assert seq.steps[1].duration == Sym("tau", 2)
    assert [len(b) for b in seq.blocks()] == [1, 1, 2, 1, 1, 1]
    assert seq.sweep.grid()[-1] == pytest.approx(2e-6)


def test_semicolons_and_units():
    seq = parse_sequence("pulse N 45 30 freq 2.5MHz; delay 1.5us; lock NV - 200ns alt; pump 1us")
    a, b, c, d = seq.steps
    assert a.phase_deg == 45 and a.angle_deg == 30 and a.freq == pytest.approx(2.5e6)
    assert b.duration == pytest.approx(1.5e-6)
    assert c.sign == -1 and c.alt
    assert d.kind == "pump"


@pytest.mark.parametrize("text, line, col", [
    ("pulse NV x 90\ndelay 5 parsecs", 2, 9),
    ("delay 5", 1, 8),
    ("pulse NV x 90 &", 1, 16),
    ("frobnicate", 1, 1),
    ("sweep t furlongs 0 1 2", 1, 9),
    ("sweep t ns 0 1 0", 1, 16),
    ("lock NV * 10ns", 1, 9),
    ("pulse NV x 90 freq", 1, 19),
    ("delay 10ns extra", 1, 12),
])
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(SequenceSyntaxError) as ei:
        parse_sequence(text)
    assert (ei.value.line, ei.value.column) == (line, col)
    assert f"line {line}, column {col}" in str(ei.value)


@pytest.mark.parametrize("text", [
    "pulse XX x 90",                                    # unknown channel
    "delay tau",                                        # unbound
    "sweep f MHz 1 2 3\ndelay f",                       # wrong unit kind
    "readout\npulse NV x 90",                           # readout not last
    "pulse NV x 90\nreadout\nreadout",                  # duplicate readout
    "pulse NV x 90 & pulse NV y 90",                    # channel twice
    "pulse NV x 90 & delay 1ns",                        # mixed kinds
    "lock NV + 10ns & lock N + 20ns",                   # unequal locks
    "pulse NV x 90 freq 1MHz",                          # freq on NV
    "delay -5ns",                                       # negative duration
    "sweep a deg 0 1 2\nsweep b deg 0 1 2\npulse NV a 90",
])
def test_semantic_errors(text):
    with pytest.raises(SequenceSemanticError):
        parse_sequence(text)


def test_empty_sequence():
    with pytest.raises(SequenceSyntaxError):
        parse_sequence("# nothing\n\n")


def test_print_parse_round_trip():
    seq = parse_sequence(ECHO)
    assert parse_sequence(print_sequence(seq)) == seq


@pytest.mark.parametrize("name, params", [
    ("DEER", {"tau": 1e-6, "f_start": 1e6, "f_stop": 3e6, "count": 11}),
    ("DSE_D", {"tau_stop": 2e-6, "t_init": 3e-6}),
    ("DSE_U", {"tau_stop": 2e-6}),
    ("IDSE_D", {"tau": 0.8e-6}),
    ("IDSE_U", {"tau": 0.8e-6, "t_init": 5e-6}),
    ("HH_DPLUS", {"lock_stop": 3e-6}),
    ("HH_DMINUS", {"lock_stop": 3e-6}),
    ("HH_ALT", {"lock_stop": 3e-6}),
])
def test_builtins_round_trip(name, params):
    seq = builtin(name, **params)
    assert seq.name == name
    assert parse_sequence(print_sequence(seq)) == seq
    assert seq.steps[-1].kind == "readout"


def test_builtin_errors():
    with pytest.raises(BuiltinError):
        builtin("NOPE")
    with pytest.raises(BuiltinError):
        builtin("IDSE_D")
    with pytest.raises(BuiltinError):
        builtin("IDSE_D", tau=1e-6, bogus=1)
    with pytest.raises(BuiltinError):
        builtin("IDSE_D", tau=1e-6, count=0)
    assert set(BUILTIN_NAMES) >= {"IDSE_D", "HH_ALT"}


def test_without_channel_keeps_blocks():
    seq = builtin("HH_ALT", lock_stop=1e-6)
    ref = seq.without_channel("N")
    assert all(s.channel != "N" for s in ref.steps)
    assert not any(b[0].parallel for b in ref.blocks())


_durations = st.integers(0, 10**6).map(lambda n: n * 1e-9)
_steps = st.one_of(
    st.builds(lambda ch, ax, ang, alt: PulseStep("pulse", ch, phase_deg=ax, angle_deg=ang, alt=alt),
              st.sampled_from(["NV", "N"]), st.sampled_from([0.0, 90.0, 180.0, 270.0, 45.0, 12.5]),
              st.sampled_from([90.0, 180.0, 30.0]), st.booleans()),
    st.builds(lambda d: PulseStep("delay", "", duration=d), _durations),
    st.builds(lambda ch, s, d: PulseStep("lock", ch, duration=d, sign=s), st.sampled_from(["NV", "N"]),
              st.sampled_from([1, -1]), _durations),
    st.builds(lambda d: PulseStep("pump", "optical", duration=d), _durations),
)


@given(st.lists(_steps, min_size=1, max_size=8), st.booleans())
def test_random_sequences_round_trip(steps, readout):
    if readout:
        steps = steps + [PulseStep("readout", "NV")]
    seq = dsl.PulseSequence("rnd", tuple(steps))
    again = parse_sequence(print_sequence(seq))
    assert again == seq
    assert print_sequence(again) == print_sequence(seq)


def test_builtin_text_is_stable():
    assert builtin_text("IDSE_D", tau=1e-6) == builtin_text("IDSE_D", tau=1e-6)
    assert "delay 500ns" in builtin_text("IDSE_D", tau=1e-6)
