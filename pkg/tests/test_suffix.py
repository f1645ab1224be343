import pytest
from hypothesis import given, strategies as st
from publicsuffixlist import PublicSuffixList

from iotflow.errors import UnparsableDomain
from iotflow.suffix import SuffixRules, hosting_providers, sld_of

BUNDLED = SuffixRules.bundled()


def _rule_lines():
    from importlib import resources
    return resources.files("iotflow").joinpath("data/public_suffix.dat").read_text("utf-8").splitlines()


ORACLE = PublicSuffixList(_rule_lines())
SUFFIXES = sorted(BUNDLED.exact | {"x." + w for w in BUNDLED.wildcards} | BUNDLED.exceptions | {"unlisted"})

label = st.from_regex(r"[a-z0-9]([a-z0-9-]{0,8}[a-z0-9])?", fullmatch=True)


def test_examples():
    assert sld_of("avs-alexa.na.amazon.com") == "amazon.com"
    assert SuffixRules(["co.uk", "uk"]).sld_of("a.b.co.uk") == "b.co.uk"
    with pytest.raises(UnparsableDomain):
        sld_of("com")


def test_public_suffix_itself_is_unparsable():
    with pytest.raises(UnparsableDomain):
        sld_of("co.uk")


def test_wildcard_and_exception_rules():
    assert sld_of("foo.bar.ck") == "foo.bar.ck"
    assert sld_of("www.ck") == "www.ck"
    assert sld_of("a.www.ck") == "www.ck"
    assert sld_of("x.city.kawasaki.jp") == "city.kawasaki.jp"


def test_case_and_trailing_dot():
    assert sld_of("API.Amazon.COM.") == "amazon.com"


def test_comments_ignored():
    rules = SuffixRules(["// comment", "", "example  // trailing", "# other"])
    assert rules.exact == {"example"}


@given(st.lists(label, min_size=1, max_size=3), st.sampled_from(SUFFIXES))
def test_matches_reference_implementation(prefix, suffix):
    name = ".".join(prefix + [suffix])
    expected = ORACLE.privatesuffix(name)
    if expected is None:
        with pytest.raises(UnparsableDomain):
            BUNDLED.sld_of(name)
    else:
        assert BUNDLED.sld_of(name) == expected


@given(st.lists(label, min_size=2, max_size=5))
def test_key_is_suffix_of_name(labels):
    name = ".".join(labels)
    try:
        key = sld_of(name)
    except UnparsableDomain:
        return
    assert name == key or name.endswith("." + key)


def test_hosting_providers_bundled():
    providers = hosting_providers()
    assert "amazonaws.com" in providers and "akamaiedge.net" in providers
    assert all(not p.startswith("#") for p in providers)
