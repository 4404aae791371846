from coe_grpo.vocab import (
    ABSTAIN, Token, VOCAB_SIZE, as_tokens, claimed_artifacts, extract_answer,
    is_well_formed, think_body, token_names,
)

T = Token
GOOD = (T.THINK_OPEN, T.CHECKER, T.SEP, T.RINGING, T.THINK_CLOSE, T.ANS_OPEN, T.FAKE, T.ANS_CLOSE)


def test_vocab_has_sixteen_tokens():
    assert VOCAB_SIZE == 16
    assert len({t.name for t in Token}) == 16


def test_well_formed_and_answer():
    assert is_well_formed(GOOD)
    assert extract_answer(GOOD) == "FAKE"
    assert think_body(GOOD) == (T.CHECKER, T.SEP, T.RINGING)
    assert claimed_artifacts(GOOD) == {T.CHECKER, T.RINGING}


def test_malformed_variants_abstain():
    bad = [
        (),
        GOOD[1:],                                   # no THINK_OPEN
        GOOD[:-1],                                  # no ANS_CLOSE
        GOOD[:5] + (T.ANS_OPEN, T.SEP, T.ANS_CLOSE),  # no label
        GOOD[:1] + (T.REAL,) + GOOD[2:],            # label inside the body
        GOOD + (T.SEP,),                            # trailing junk
        (T.THINK_OPEN, T.THINK_CLOSE, T.THINK_CLOSE, T.ANS_OPEN, T.REAL, T.ANS_CLOSE),
    ]
    for tr in bad:
        assert not is_well_formed(tr)
        assert extract_answer(tr) == ABSTAIN


def _wrap(*body):
    return (T.THINK_OPEN, *body, T.THINK_CLOSE, T.ANS_OPEN, T.FAKE, T.ANS_CLOSE)


def test_body_tokens():
    assert is_well_formed(_wrap())                       # empty reasoning is still structural
    assert is_well_formed(_wrap(T.CHECKER, T.CHECKER))   # repeats are not a format error
    assert is_well_formed(_wrap(T.HF_SPIKE, T.SEP, T.CHECKER))
    for body in [(T.REAL,), (T.CHECKER, T.FAKE), (T.ANS_OPEN,), (T.THINK_OPEN,)]:
        assert not is_well_formed(_wrap(*body)), body
    assert think_body(_wrap()) == ()


def test_name_roundtrip():
    assert as_tokens(token_names(GOOD)) == GOOD
    assert as_tokens([0, 1]) == (T.THINK_OPEN, T.THINK_CLOSE)
