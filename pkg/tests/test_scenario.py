import numpy as np
import pytest

from lifenet.model import abilene_scenario, build_layered_graph
from lifenet.scenario import ConfigError, load

SMALL = """
name = "pair"
[network]
num_nodes = 2
undirected = false
capacity_mbps = 50
links = [[0, 1]]
[[clients]]
source = 0
destination = 1
gamma = 1.0
rate_mbps = 40
L = 3
{extra}
[run]
V = 200
"""


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_builtin_matches_constructor():
    ls = load("abilene")
    ref = abilene_scenario()
    sc = ls.scenario
    assert sc.graph.edges == ref.graph.edges
    np.testing.assert_array_equal(sc.graph.capacity, ref.graph.capacity)
    np.testing.assert_array_equal(sc.graph.cost, ref.graph.cost)
    np.testing.assert_array_equal(sc.cpu_cost, ref.cpu_cost)
    np.testing.assert_array_equal(sc.cpu_budget, ref.cpu_budget)
    assert sc.cpu_rate == ref.cpu_rate and sc.chain_length == ref.chain_length
    assert [(c.source, c.destination, c.gamma, c.rate, c.L) for c in sc.clients] == \
        [(c.source, c.destination, c.gamma, c.rate, c.L) for c in ref.clients]
    assert ls.native_v() == pytest.approx(5e5)
    assert ls.path == "builtin:abilene" and len(ls.sha256) == 64


def test_bare_filename_falls_back_to_builtin(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert load("abilene.toml").scenario.graph.edges == load("abilene").scenario.graph.edges


def test_small_file(tmp_path):
    ls = load(_write(tmp_path, SMALL.format(extra="")))
    sc = ls.scenario
    assert sc.graph.edges == ((0, 1),)
    assert sc.graph.capacity[0] == 5 and sc.clients[0].rate == 4
    assert ls.native_v() == pytest.approx(2.0)
    lg = build_layered_graph(sc)
    assert lg.commodities[0].rates == {(0, 3): 4.0}


def test_lifetime_split(tmp_path):
    extra = '[clients.lifetimes]\n"2" = 0.25\n"3" = 0.75'
    sc = load(_write(tmp_path, SMALL.format(extra=extra))).scenario
    assert sc.clients[0].rates_by_lifetime() == {2: 1.0, 3: 3.0}


def test_lifetime_split_outside_range(tmp_path):
    extra = '[clients.lifetimes]\n"5" = 1.0'
    with pytest.raises(ConfigError, match="lifetime split"):
        load(_write(tmp_path, SMALL.format(extra=extra)))


def test_schema_violations(tmp_path):
    with pytest.raises(ConfigError, match="schema"):
        load(_write(tmp_path, SMALL.format(extra="").replace("gamma = 1.0", "gamma = 1.5")))
    with pytest.raises(ConfigError, match="schema"):
        load(_write(tmp_path, SMALL.format(extra="").replace("L = 3", "L = 0")))
    with pytest.raises(ConfigError, match="schema"):
        load(_write(tmp_path, "[network]\nnum_nodes = 2\n"))


def test_bad_node_and_toml(tmp_path):
    with pytest.raises(ConfigError, match="out of range"):
        load(_write(tmp_path, SMALL.format(extra="").replace("destination = 1", "destination = 7")))
    with pytest.raises(ConfigError):
        load(_write(tmp_path, "this is = = not toml"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load(str(tmp_path / "nope.toml"))


def test_hash_tracks_content(tmp_path):
    a = load(_write(tmp_path, SMALL.format(extra=""), "a.toml"))
    b = load(_write(tmp_path, SMALL.format(extra="") + "\n", "b.toml"))
    c = load(_write(tmp_path, SMALL.format(extra=""), "c.toml"))
    assert a.sha256 == c.sha256 != b.sha256
