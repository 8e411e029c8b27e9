"""Manager registry: lookups, allocation policy, and the function invariant."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitnet.errors import DuplicateIpError, UnknownComponentError
from splitnet.gnm import Gnm, GnmClient, NicDescriptor
from splitnet.interconnect import Fabric, GNM_ID, NID, PID
from splitnet.sim import VirtualKernel
from splitnet.topology import RackTopology


def nic(nc_index, ip, name="eth0"):
    return NicDescriptor(NID(nc_index), name, ip, 1e9)


def test_register_then_lookup():
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    assert gnm.lookup_ncomponent_by_ip("10.0.0.1") == NID(0)


def test_register_duplicate_ip_refused():
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    with pytest.raises(DuplicateIpError, match="10.0.0.1"):
        gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])


def test_register_rejects_non_network_board():
    with pytest.raises(UnknownComponentError):
        Gnm().register_ncomponent(PID(0), [])


def test_all_registered_ips_resolve_to_their_board():
    gnm = Gnm()
    table = {}
    for i in range(4):
        ips = [f"10.0.{i}.{j}" for j in range(3)]
        gnm.register_ncomponent(NID(i), [nic(i, ip) for ip in ips])
        for ip in ips:
            table[ip] = NID(i)
    # exhaustive check over every registered address
    for ip, owner in table.items():
        assert gnm.lookup_ncomponent_by_ip(ip) == owner


def test_lookup_unknown_ip_is_absent():
    assert Gnm().lookup_ncomponent_by_ip("8.8.8.8") is None


def test_register_then_deregister_makes_ips_absent():
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    gnm.deregister_ncomponent(NID(0))
    assert gnm.lookup_ncomponent_by_ip("10.0.0.1") is None
    assert not gnm.is_rack_local("10.0.0.1")


def test_deregister_unknown_board_fails():
    with pytest.raises(UnknownComponentError):
        Gnm().deregister_ncomponent(NID(3))


def test_generation_counts_mutations():
    gnm = Gnm()
    g0 = gnm.generation
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    gnm.deregister_ncomponent(NID(0))
    assert gnm.generation == g0 + 2


@given(st.lists(st.integers(0, 255), min_size=4, max_size=4))
@settings(max_examples=50, deadline=None)
def test_is_rack_local_iff_lookup_present(quad):
    ip = ".".join(str(b) for b in quad)
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1"), nic(0, "10.0.0.2")])
    assert gnm.is_rack_local(ip) == (gnm.lookup_ncomponent_by_ip(ip) is not None)


def test_alloc_nic_prefers_least_loaded_round_robin_on_ties():
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    gnm.register_ncomponent(NID(1), [nic(1, "10.0.1.1")])
    picks = [gnm.alloc_nic().ncomponent for _ in range(6)]
    assert picks == [NID(0), NID(1), NID(0), NID(1), NID(0), NID(1)]


def test_registry_function_invariant_under_random_ops():
    # model-based walk: a plain dict is the oracle for the ip -> board map
    rng = random.Random(11)
    gnm = Gnm()
    model = {}
    registered = set()
    for step in range(2000):
        action = rng.randrange(3)
        if action == 0:
            idx = rng.randrange(6)
            ips = [f"10.{idx}.{rng.randrange(4)}.{rng.randrange(4)}"
                   for _ in range(rng.randint(1, 3))]
            ips = list(dict.fromkeys(ips))
            try:
                gnm.register_ncomponent(NID(idx), [nic(idx, ip) for ip in ips])
            except DuplicateIpError:
                assert any(ip in model for ip in ips)
            else:
                assert all(ip not in model for ip in ips)
                for ip in ips:
                    model[ip] = NID(idx)
                registered.add(NID(idx))
        elif action == 1 and registered:
            victim = rng.choice(sorted(registered, key=str))
            gnm.deregister_ncomponent(victim)
            registered.discard(victim)
            model = {ip: nc for ip, nc in model.items() if nc != victim}
        else:
            ip = f"10.{rng.randrange(6)}.{rng.randrange(4)}.{rng.randrange(4)}"
            assert gnm.lookup_ncomponent_by_ip(ip) == model.get(ip)
            assert gnm.is_rack_local(ip) == (ip in model)


def test_frame_level_registry_round_trip():
    kernel = VirtualKernel()
    topo = RackTopology.default()
    topo.num_n = 2
    fabric = Fabric(kernel, topo)
    gnm = Gnm(fabric)
    fabric.register_sink(GNM_ID, gnm.handle_frame)
    fabric.register_sink(PID(0), lambda f: None)
    client = GnmClient(fabric, PID(0))

    def main():
        client.register(NID(1), [nic(1, "10.0.9.1", "eth9")])
        assert client.is_rack_local("10.0.9.1")
        assert client.lookup_ip("10.0.9.1") == (NID(1), None)
        assert client.lookup_ip("1.2.3.4") == (None, None)
        board, ip = client.lookup_ip("1.2.3.4", alloc_if_absent=True)
        assert board == NID(1) and ip == "10.0.9.1"
        assert client.alloc_nic() == (NID(1), "10.0.9.1")
        client.deregister(NID(1))
        assert not client.is_rack_local("10.0.9.1")
        with pytest.raises(DuplicateIpError):
            client.register(NID(1), [nic(1, "10.0.9.2")] * 2)
        return "ok"

    assert kernel.run(main) == "ok"


def test_lookups_between_mutations_are_stable():
    gnm = Gnm()
    gnm.register_ncomponent(NID(0), [nic(0, "10.0.0.1")])
    answers = {ip: gnm.lookup_ncomponent_by_ip(ip)
               for ip in ("10.0.0.1", "10.0.0.2", "8.8.8.8")}
    for _ in range(10):  # lookups are read-only: repeating changes nothing
        for ip, expected in answers.items():
            assert gnm.lookup_ncomponent_by_ip(ip) == expected
    assert gnm.generation == 1
