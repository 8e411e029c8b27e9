"""Topology file loading, defaults, and validation."""

import pytest
import yaml

from splitnet.errors import SplitnetError
from splitnet.interconnect import EID, LinkParams, MID, NID, PID
from splitnet.topology import ENV_TOPOLOGY, RackTopology


def test_default_matches_reference_setup():
    topo = RackTopology.default()
    assert (topo.num_p, topo.num_m, topo.num_n) == (2, 1, 1)
    assert topo.default_link.one_way_latency_us == 4.0
    assert topo.nics[0].ip == "10.0.0.1"
    assert topo.externals[0].ip == "192.168.1.100"
    assert topo.instrumentation


def test_yaml_round_trip(tmp_path):
    doc = {
        "components": {"pcomponents": 3, "mcomponents": 2, "ncomponents": 2,
                       "externals": 1},
        "instrumentation": True,
        "seed": 9,
        "excache_capacity": 1 << 20,
        "dram_budget": 1 << 16,
        "pipe_latency_us": 0.25,
        "links": {
            "default": {"latency_us": 2.0, "bandwidth_bps": 1e9},
            "external_default": {"latency_us": 50.0, "bandwidth_bps": 1e9},
            "pairs": [
                {"a": "P0", "b": "N0", "latency_us": 1.0, "bandwidth_bps": 2e9},
            ],
        },
        "nics": [
            {"ncomponent": "N0", "name": "eth0", "ip": "10.0.0.1"},
            {"ncomponent": "N1", "name": "eth0", "ip": "10.0.1.1",
             "capacity_bps": 1e10},
        ],
        "externals": [{"id": "E0", "ip": "192.168.9.9"}],
    }
    path = tmp_path / "topo.yaml"
    path.write_text(yaml.safe_dump(doc))
    topo = RackTopology.from_file(str(path))
    assert topo.num_p == 3 and topo.num_n == 2
    assert topo.link_params(PID(0), NID(0)) == LinkParams(1.0, 2e9)
    assert topo.link_params(PID(1), NID(0)) == LinkParams(2.0, 1e9)
    assert topo.link_params(NID(0), EID(0)) == LinkParams(50.0, 1e9)
    assert topo.nic_for_ip("10.0.1.1").ncomponent == NID(1)
    assert topo.pipe_latency_us == 0.25
    assert topo.seed == 9


def test_env_variable_points_to_topology(tmp_path, monkeypatch):
    path = tmp_path / "t.yaml"
    path.write_text(yaml.safe_dump({"components": {"pcomponents": 5}}))
    monkeypatch.setenv(ENV_TOPOLOGY, str(path))
    topo = RackTopology.from_env_or_default()
    assert topo.num_p == 5
    monkeypatch.delenv(ENV_TOPOLOGY)
    assert RackTopology.from_env_or_default().num_p == 2


def test_validation_rejects_duplicate_nic_ips():
    topo = RackTopology.default()
    topo.nics = topo.nics + topo.nics
    with pytest.raises(SplitnetError):
        topo.validate()


def test_validation_rejects_nic_on_processor_board():
    topo = RackTopology.default()
    from splitnet.topology import NicSpec
    topo.nics = [NicSpec(PID(0), "eth0", "10.0.0.1", 1e9)]
    with pytest.raises(SplitnetError):
        topo.validate()


def test_validation_requires_one_of_each_board():
    topo = RackTopology.default()
    topo.num_m = 0
    with pytest.raises(SplitnetError):
        topo.validate()


def test_with_links_overrides_every_interconnect_link():
    topo = RackTopology.default().with_links(0.0, 1e15)
    assert topo.link_params(PID(0), MID(0)).one_way_latency_us == 0.0
    # external links are untouched by the interconnect override
    assert topo.link_params(NID(0), EID(0)).one_way_latency_us == 30.0


def test_components_listing_and_membership():
    topo = RackTopology.default()
    ids = list(topo.components())
    assert PID(0) in ids and MID(0) in ids and NID(0) in ids and EID(0) in ids
    assert topo.has_component(PID(1))
    assert not topo.has_component(PID(2))
    assert not topo.has_component(MID(5))
