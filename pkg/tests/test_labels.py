import numpy as np
import pytest

from uiwf.labels import (ChainLabel, ContextValue, LabelRegistry,
                         UnknownClassError, UnknownLevelError, project,
                         validate)


@pytest.fixture(scope="module")
def registry():
    return LabelRegistry.default()


def test_context_values_are_exactly_three():
    assert len(ContextValue) == 3
    for v in ContextValue:
        assert ContextValue.from_string(str(v)) is v
    with pytest.raises(ValueError):
        ContextValue.from_string("Popup")


def test_project_examples(registry):
    label = ChainLabel("Mail", "Gmail", ContextValue.SELECTED_TEXT)
    registry.validate(label)
    assert project(label, "sv") == ("Mail", "Gmail")

    label = ChainLabel("Terminal", "Main View", ContextValue.NONE)
    registry.validate(label)
    assert project(label, "s") == "Terminal"
    assert project(label, "svc") == ("Terminal", "Main View",
                                     ContextValue.NONE)


def test_project_unknown_level():
    label = ChainLabel("Mail", "Gmail", ContextValue.NONE)
    with pytest.raises(UnknownLevelError):
        project(label, "vc")


def test_equal_svc_implies_equal_s():
    a = ChainLabel("Mail", "Gmail", ContextValue.MENU)
    b = ChainLabel("Mail", "Gmail", ContextValue.MENU)
    assert project(a, "svc") == project(b, "svc")
    assert project(a, "s") == project(b, "s")


def test_validate_examples(registry):
    ok = ChainLabel("Web Browser", "Maps", ContextValue.NONE)
    assert validate(ok, registry) is ok
    with pytest.raises(UnknownClassError):
        validate(ChainLabel("Terminal", "Save", ContextValue.NONE), registry)
    with pytest.raises(UnknownClassError):
        validate(ChainLabel("", "Main View", ContextValue.NONE), registry)


def test_prefix_consistency(registry):
    # project(a, l') == project(b, l') implies equality at every coarser level
    rng = np.random.default_rng(0)
    triples = registry.svc_triples
    order = ["s", "sv", "svc"]
    for _ in range(300):
        a = ChainLabel(*triples[rng.integers(len(triples))])
        b = ChainLabel(*triples[rng.integers(len(triples))])
        for hi in range(3):
            if project(a, order[hi]) == project(b, order[hi]):
                for lo in range(hi):
                    assert project(a, order[lo]) == project(b, order[lo])


def test_registry_closure(registry):
    for triple in registry.svc_triples:
        validate(ChainLabel(*triple), registry)


def test_level_cardinalities(registry):
    s, sv, svc = (registry.num_classes(l) for l in ("s", "sv", "svc"))
    assert s <= sv <= svc
    assert svc == 3 * sv
    # shipped default registry follows the 25 software/view rows
    assert sv == 25
    assert s == 10


def test_registry_file_round_trip(tmp_path):
    path = tmp_path / "registry.txt"
    path.write_text("AppA\tViewX\nAppA\tViewY\nAppB\tViewX\n",
                    encoding="utf-8")
    reg = LabelRegistry.from_file(path)
    assert reg.sv_pairs == [("AppA", "ViewX"), ("AppA", "ViewY"),
                            ("AppB", "ViewX")]
    assert reg.num_classes("svc") == 9


def test_registry_file_bad_line(tmp_path):
    path = tmp_path / "registry.txt"
    path.write_text("AppA only\n", encoding="utf-8")
    with pytest.raises(ValueError, match="1"):
        LabelRegistry.from_file(path)
