import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpcgate.identity import ClaimSource, PosixIdentity, is_valid_posix_username

VALID = ["alice", "svc_pipe", "_x", "a-b-c", "u" * 32, "a0", "x_9-"]
INVALID = ["", "Alice", "9user", "alice;rm -rf", "a" * 33, "über", "a b", "-a", "root!"]


@pytest.mark.parametrize("name", VALID)
def test_valid_usernames(name):
    assert is_valid_posix_username(name)
    PosixIdentity(username=name, source_claim=ClaimSource.USERNAME)


@pytest.mark.parametrize("name", INVALID)
def test_invalid_usernames(name):
    assert not is_valid_posix_username(name)
    with pytest.raises(ValueError):
        PosixIdentity(username=name, source_claim=ClaimSource.USERNAME)


@given(st.from_regex(r"[a-z_][a-z0-9_-]{0,31}", fullmatch=True))
def test_grammar_accepts_everything_it_defines(name):
    assert is_valid_posix_username(name)


@given(st.text(max_size=40))
def test_no_shell_metacharacters_ever_pass(name):
    if is_valid_posix_username(name):
        assert not set(name) & set(" ;|&$`'\"\\\n<>(){}*?~")
        assert len(name) <= 32
