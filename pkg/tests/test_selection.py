from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dufuzz.analysis import analyze
from dufuzz.asm import assemble
from dufuzz.chains import ChainFile, ChainFileError, DefUseChain
from dufuzz.selection import SelectionConfig, select_chains, selection_report
from helpers import fixture, random_program

configs = st.builds(
    SelectionConfig,
    st.booleans(),
    st.booleans(),
    st.booleans(),
    st.one_of(st.none(), st.integers(1, 4)),
)


def test_intra_block_chain_removed():
    p = fixture("single")
    assert select_chains(analyze(p), p).chains == ()
    only_block = SelectionConfig(True, False, False)
    assert select_chains(analyze(p), p, only_block).chains == ()


def test_cross_function_chain_retained():
    p = fixture("interproc")
    kept = select_chains(analyze(p), p).chain_set
    assert DefUseChain(0x1000, 0x1004, 1) in kept  # main's CONST r1 -> helper's ADD
    assert DefUseChain(0x1004, 0x1002, 0) in kept  # helper's r0 -> main after return
    assert all(p.function_of[c.def_site] != p.function_of[c.use_site] for c in kept)


def test_hook_def_counts_as_caller():
    p = fixture("externs")
    assert select_chains(analyze(p), p).chains == ()


def test_none_config_is_identity():
    p = fixture("twocalls")
    cf = analyze(p)
    assert select_chains(cf, p, SelectionConfig.none()) == cf


def test_mismatched_program():
    with pytest.raises(ChainFileError):
        select_chains(analyze(fixture("f1")), fixture("single"))


def test_max_chains_per_use():
    p = fixture("diamond")
    capped = select_chains(analyze(p), p, SelectionConfig(False, False, False, 1))
    uses = [c.use_site for c in capped.chains]
    assert len(uses) == len(set(uses))


@pytest.mark.parametrize(
    "text, expect",
    [
        ("default", SelectionConfig()),
        ("none", SelectionConfig.none()),
        ("block", SelectionConfig(True, False, False)),
        ("block,function,max=3", SelectionConfig(True, True, False, 3)),
    ],
)
def test_parse(text, expect):
    assert SelectionConfig.parse(text) == expect


@pytest.mark.parametrize("text", ["bogus", "max=0", "max=x"])
def test_parse_errors(text):
    with pytest.raises(ValueError):
        SelectionConfig.parse(text)


def test_report_counts():
    p = fixture("twocalls")
    before = analyze(p)
    rep = selection_report(before, before, p)
    assert rep.reduction == 0.0
    after = select_chains(before, p)
    rep = selection_report(before, after, p)
    assert rep.chains_before == len(before) and rep.chains_after == len(after)
    assert rep.reduction == pytest.approx(100 * (len(before) - len(after)) / len(before))
    assert sum(r[1] for r in rep.per_function) == len(before)
    assert "reduction" in rep.to_text()
    assert rep.to_csv().splitlines()[0] == "function,chains_before,chains_after,uses_before,uses_after"


def test_report_arithmetic():
    p = assemble(".func main\n CONST r1, 1\n" + " MOV r2, r1\n" * 100 + " HALT\n")
    chains = tuple(DefUseChain(0x1000, 0x1000 + k, 1) for k in range(1, 101))
    rep = selection_report(ChainFile(p.target_id, chains), ChainFile(p.target_id, chains[:40]), p)
    assert (rep.chains_before, rep.chains_after) == (100, 40)
    assert rep.reduction == 60.0


def test_report_rejects_non_subset():
    p = fixture("twocalls")
    with pytest.raises(ValueError):
        selection_report(select_chains(analyze(p), p), analyze(p), p)


def test_header_dispatch_reduction_matches_hand_count(analyzed):
    _, p, full, sel = analyzed["header-dispatch"]
    # hand count: chains of the full file whose two ends lie in different functions
    cross = [c for c in full.chains if p.function_of[c.def_site] != p.function_of[c.use_site]]
    rep = selection_report(full, sel, p)
    assert rep.chains_after == len(cross)
    assert rep.reduction == pytest.approx(100 * (1 - len(cross) / len(full)))


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32), configs, configs)
def test_selection_properties(seed, cfg, other):
    p = random_program(seed, externs=seed % 3 == 0)
    cf = analyze(p)
    out = select_chains(cf, p, cfg)
    assert out.chain_set <= cf.chain_set
    assert select_chains(out, p, cfg) == out
    default = select_chains(cf, p)
    assert all(p.function_of[c.def_site] != p.function_of[c.use_site] for c in default.chains)
    # turning on more drops never grows the output
    more = SelectionConfig(
        cfg.drop_intra_block or other.drop_intra_block,
        cfg.drop_intra_function or other.drop_intra_function,
        cfg.drop_dead_defs or other.drop_dead_defs,
        cfg.max_chains_per_use,
    )
    assert select_chains(cf, p, more).chain_set <= out.chain_set
