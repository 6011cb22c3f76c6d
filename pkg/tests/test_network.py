import math

import pytest

from dtaflow import (
    Link,
    NetworkError,
    Node,
    ODPair,
    Path,
    TimeGrid,
    derive_fd,
    fd_flow,
    validate_network,
)
from helpers import braess_components, braess_network


class TestDeriveFd:
    def test_default_backward_speed_is_a_third(self):
        w, rho_c, rho_jam = derive_fd(1000.0, 15.0, 0.5, None)
        assert w == pytest.approx(5.0)
        assert rho_c == pytest.approx(1.0 / 30.0)
        assert rho_jam == pytest.approx(4.0 / 30.0)

    def test_equal_wave_speeds_double_the_critical_density(self):
        _, rho_c, rho_jam = derive_fd(1000.0, 15.0, 0.5, 15.0)
        assert rho_jam == pytest.approx(2 * rho_c)

    def test_zero_capacity_rejected(self):
        with pytest.raises(NetworkError, match="nonpositive"):
            derive_fd(1000.0, 15.0, 0.0, None)

    def test_zero_length_rejected(self):
        with pytest.raises(NetworkError, match="nonpositive"):
            derive_fd(0.0, 15.0, 0.5, None)


class TestFdFlow:
    @pytest.fixture
    def link(self):
        return Link.create("1", "a", "b", 1000.0, 15.0, 0.5)

    def test_empty_road(self, link):
        assert fd_flow(link, 0.0) == 0.0

    def test_jam_density_gives_zero_flow(self, link):
        assert fd_flow(link, link.jam_density_vpm) == pytest.approx(0.0, abs=1e-15)

    def test_branches_agree_at_critical_density(self, link):
        # evaluate both branches explicitly at rho_c
        rho_c = link.critical_density_vpm
        free = link.free_speed_mps * rho_c
        congested = link.backward_speed_mps * (link.jam_density_vpm - rho_c)
        assert free == pytest.approx(link.capacity_vps, rel=1e-12)
        assert congested == pytest.approx(link.capacity_vps, rel=1e-12)
        assert fd_flow(link, rho_c) == pytest.approx(link.capacity_vps, rel=1e-12)

    def test_density_out_of_range(self, link):
        with pytest.raises(NetworkError):
            fd_flow(link, -0.01)
        with pytest.raises(NetworkError):
            fd_flow(link, link.jam_density_vpm * 1.01)

    def test_concave_piecewise_linear_peak(self, link):
        rho_c = link.critical_density_vpm
        for rho in (0.25 * rho_c, 0.9 * rho_c, 1.3 * rho_c,
                    0.8 * link.jam_density_vpm):
            assert fd_flow(link, rho) <= link.capacity_vps + 1e-15


class TestValidateNetwork:
    def test_braess_fixture_accepted(self):
        net = braess_network()
        assert len(net.links) == 5
        assert len(net.paths) == 8
        assert len(net.od_pairs) == 4

    def test_disconnected_path_rejected(self):
        nodes, links, paths, ods = braess_components()
        bad = [p for p in paths if p.id != "p4"]
        bad.append(Path("p4", ("1", "4"), ("2", "4")))  # link 2 head=3, link 4 tail=2
        with pytest.raises(NetworkError, match="disconnected path"):
            validate_network(nodes, links, bad, ods)

    def test_nonpositive_length_rejected(self):
        with pytest.raises(NetworkError, match="nonpositive"):
            Link.create("1", "a", "b", 0.0, 12.0, 0.5)

    def test_dangling_link_endpoint(self):
        nodes, links, paths, ods = braess_components()
        links.append(Link.create("9", "1", "zzz", 100.0, 10.0, 0.5))
        with pytest.raises(NetworkError, match="dangling"):
            validate_network(nodes, links, paths, ods)

    def test_demand_without_paths(self):
        nodes = [Node("a", origin=True), Node("b", destination=True)]
        links = [Link.create("1", "a", "b", 100.0, 10.0, 0.5)]
        ods = [ODPair("a", "b", 10.0, 100.0)]
        with pytest.raises(NetworkError, match="no paths"):
            validate_network(nodes, links, [], ods)

    def test_repeated_link_rejected(self):
        with pytest.raises(NetworkError, match="simple"):
            Path("p", ("a", "b"), ("1", "1"))

    def test_validation_idempotent(self):
        net = braess_network()
        again = validate_network(
            list(net.nodes.values()), list(net.links.values()),
            list(net.paths.values()), list(net.od_pairs),
        )
        assert again == net

    def test_priorities_sum_to_one(self):
        net = braess_network()
        for nid, pri in net.priorities.items():
            if pri:
                assert sum(pri.values()) == pytest.approx(1.0, abs=1e-12)

    def test_source_priority_split(self):
        net = braess_network()
        # node 2: origin with source priority 0.4 and one incoming link
        pri = net.priorities["2"]
        assert pri[""] == pytest.approx(0.4)
        assert pri["1"] == pytest.approx(0.6)

    def test_capacity_proportional_defaults(self):
        nodes = [Node("a", origin=True), Node("b", origin=True), Node("c"),
                 Node("d", destination=True)]
        links = [
            Link.create("1", "a", "c", 100.0, 10.0, 0.6),
            Link.create("2", "b", "c", 100.0, 10.0, 0.2),
            Link.create("3", "c", "d", 100.0, 10.0, 0.8),
        ]
        net = validate_network(nodes, links, [], [])
        assert net.priorities["c"]["1"] == pytest.approx(0.75)
        assert net.priorities["c"]["2"] == pytest.approx(0.25)


class TestTimeGrid:
    def test_step_count_rounds_up(self):
        assert TimeGrid(0.0, 100.0, 30.0).n_steps == 4

    def test_bad_horizon(self):
        with pytest.raises(NetworkError):
            TimeGrid(10.0, 10.0, 1.0)
        with pytest.raises(NetworkError):
            TimeGrid(0.0, 10.0, 0.0)

    def test_times_are_uniform(self):
        g = TimeGrid(0.0, 100.0, 25.0)
        assert list(g.times()) == [0.0, 25.0, 50.0, 75.0, 100.0]
