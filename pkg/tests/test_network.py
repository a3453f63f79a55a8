import numpy as np
import pytest

from riverextremes.errors import DomainError, InputError
from riverextremes.network import (
    FlowRelation,
    NetLocation,
    RiverNetwork,
    Segment,
    catchment_summary,
    flow_relation,
    junction_weights_from_altitude,
    river_distance,
    snap_to_network,
    weight_product,
)


@pytest.fixture(scope="module")
def y_net():
    """Stem plus two branches: s2 (12 km) and s3 (10 km) merge into s1 (10 km)."""
    return RiverNetwork(
        [
            Segment(1, [(0, 0), (10, 0)], None, 1.0),
            Segment(2, [(10, 0), (10, 12)], 1, 0.25),
            Segment(3, [(10, 0), (20, 0)], 1, 0.75),
        ]
    )


@pytest.fixture(scope="module")
def chain_net():
    """Two stacked junctions, each with a 0.25-weight branch on the path."""
    return RiverNetwork(
        [
            Segment(1, [(0, 0), (10, 0)], None, 1.0),
            Segment(2, [(10, 0), (20, 0)], 1, 0.25),
            Segment(3, [(10, 0), (10, 10)], 1, 0.75),
            Segment(4, [(20, 0), (30, 0)], 2, 0.25),
            Segment(5, [(20, 0), (20, 10)], 2, 0.75),
        ]
    )


class TestFlowRelation:
    def test_downstream_stem_vs_branch(self, y_net):
        stem = NetLocation(1, 2.0)
        branch = NetLocation(2, 5.0)
        rel, between = flow_relation(y_net, stem, branch)
        assert rel is FlowRelation.CONNECTED_UPSTREAM
        assert between == {2}
        rel2, between2 = flow_relation(y_net, branch, stem)
        assert rel2 is FlowRelation.CONNECTED_DOWNSTREAM
        assert between2 == {2}

    def test_identical_location(self, y_net):
        loc = NetLocation(3, 4.0)
        rel, between = flow_relation(y_net, loc, loc)
        assert rel is FlowRelation.SAME_SEGMENT
        assert between == frozenset()

    def test_sibling_branches_unconnected(self, y_net):
        rel, between = flow_relation(y_net, NetLocation(2, 5.0), NetLocation(3, 8.0))
        assert rel is FlowRelation.UNCONNECTED
        assert between == frozenset()

    def test_invalid_inputs(self, y_net):
        with pytest.raises(InputError):
            flow_relation(y_net, NetLocation(9, 1.0), NetLocation(1, 1.0))
        with pytest.raises(InputError):
            flow_relation(y_net, NetLocation(1, 99.0), NetLocation(1, 1.0))


class TestRiverDistance:
    def test_same_point(self, y_net):
        loc = NetLocation(2, 3.0)
        assert river_distance(y_net, loc, loc) == 0.0

    def test_same_segment_offsets(self, y_net):
        a, b = NetLocation(2, 3.0), NetLocation(2, 10.0)
        assert river_distance(y_net, a, b) == pytest.approx(7.0)

    def test_sibling_branches_via_junction(self, y_net):
        # 5 km and 8 km above the junction at the top of the stem
        a, b = NetLocation(2, 5.0), NetLocation(3, 8.0)
        assert river_distance(y_net, a, b) == pytest.approx(13.0)

    def test_symmetry_and_identity(self, y_net):
        rng = np.random.default_rng(4)
        segs = [s.id for s in y_net.segments]
        for _ in range(50):
            sa = y_net.segment(int(rng.choice(segs)))
            sb = y_net.segment(int(rng.choice(segs)))
            a = NetLocation(sa.id, float(rng.uniform(0, sa.arc_length)))
            b = NetLocation(sb.id, float(rng.uniform(0, sb.arc_length)))
            d1, d2 = river_distance(y_net, a, b), river_distance(y_net, b, a)
            assert d1 == pytest.approx(d2, abs=1e-12)
            assert d1 >= 0.0
        assert river_distance(y_net, a, a) == 0.0

    def test_relation_reciprocity(self, y_net):
        a, b = NetLocation(1, 1.0), NetLocation(2, 2.0)
        assert flow_relation(y_net, a, b)[0] is FlowRelation.CONNECTED_UPSTREAM
        assert flow_relation(y_net, b, a)[0] is FlowRelation.CONNECTED_DOWNSTREAM


class TestWeightProduct:
    def test_same_segment(self, y_net):
        assert weight_product(y_net, NetLocation(1, 1.0), NetLocation(1, 9.0)) == 1.0

    def test_single_junction(self, y_net):
        got = weight_product(y_net, NetLocation(1, 2.0), NetLocation(2, 5.0))
        assert got == pytest.approx(0.5)  # sqrt(0.25)

    def test_two_junctions(self, chain_net):
        got = weight_product(chain_net, NetLocation(1, 2.0), NetLocation(4, 5.0))
        assert got == pytest.approx(0.25)  # sqrt(0.25) * sqrt(0.25)

    def test_path_multiplicativity(self, chain_net):
        a = NetLocation(1, 1.0)
        mid = NetLocation(2, 4.0)
        b = NetLocation(4, 6.0)
        assert weight_product(chain_net, a, b) == pytest.approx(
            weight_product(chain_net, a, mid) * weight_product(chain_net, mid, b)
        )

    def test_unconnected_is_error(self, y_net):
        with pytest.raises(DomainError):
            weight_product(y_net, NetLocation(2, 1.0), NetLocation(3, 1.0))


class TestJunctionWeights:
    def test_equal_volumes(self):
        np.testing.assert_allclose(junction_weights_from_altitude([7.0, 7.0]), [0.5, 0.5])

    def test_one_three(self):
        np.testing.assert_allclose(junction_weights_from_altitude([1.0, 3.0]), [0.25, 0.75])

    def test_three_branches(self):
        np.testing.assert_allclose(
            junction_weights_from_altitude([1.0, 1.0, 2.0]), [0.25, 0.25, 0.5]
        )

    def test_nonpositive_volume(self):
        with pytest.raises(InputError):
            junction_weights_from_altitude([1.0, 0.0])


class TestNetworkValidation:
    def test_junction_weights_must_sum_to_one(self):
        with pytest.raises(InputError):
            RiverNetwork(
                [
                    Segment(1, [(0, 0), (10, 0)], None, 1.0),
                    Segment(2, [(10, 0), (10, 10)], 1, 0.4),
                    Segment(3, [(10, 0), (20, 0)], 1, 0.4),
                ]
            )

    def test_single_root_required(self):
        with pytest.raises(InputError):
            RiverNetwork(
                [
                    Segment(1, [(0, 0), (10, 0)], None, 1.0),
                    Segment(2, [(20, 0), (30, 0)], None, 1.0),
                ]
            )

    def test_cycle_detected(self):
        with pytest.raises(InputError):
            RiverNetwork(
                [
                    Segment(1, [(0, 0), (10, 0)], 2, 1.0),
                    Segment(2, [(10, 0), (20, 0)], 1, 1.0),
                ]
            )

    def test_declared_arc_length_checked(self):
        with pytest.raises(InputError):
            Segment(1, [(0, 0), (10, 0)], None, 1.0, arc_length=9.5)

    def test_weights_sum_checked_per_junction(self, chain_net):
        # constructing the fixture already passed; sums hold at every junction
        merging = {}
        for s in chain_net.segments:
            if s.downstream is not None:
                merging.setdefault(s.downstream, 0.0)
                merging[s.downstream] += s.junction_weight
        for total in merging.values():
            assert total == pytest.approx(1.0, abs=1e-9)


class TestCatchmentSummary:
    def test_uniform_altitude_centroid(self):
        alt = np.full((4, 4), 250.0)
        mask = np.ones((4, 4), dtype=bool)
        summ = catchment_summary(alt, 1.0, mask, NetLocation(1, 0.0))
        np.testing.assert_allclose(summ.hydro_position, [2.0, 2.0])
        assert summ.area == pytest.approx(16.0)
        assert summ.mean_altitude == pytest.approx(250.0)

    def test_two_cell_weighted_centroid(self):
        # cells centred at x = 0 and x = 1 with altitudes 1 and 3
        alt = np.array([[1.0, 3.0]])
        mask = np.ones((1, 2), dtype=bool)
        summ = catchment_summary(alt, 1.0, mask, NetLocation(1, 0.0), origin_km=(-0.5, -0.5))
        assert summ.hydro_position[0] == pytest.approx(0.75)

    def test_single_cell(self):
        alt = np.array([[123.0, 1.0], [1.0, 1.0]])
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 0] = True
        summ = catchment_summary(alt, 2.0, mask, NetLocation(1, 0.0))
        np.testing.assert_allclose(summ.hydro_position, [1.0, 1.0])
        assert summ.altitude_volume == pytest.approx(123.0 * 4.0)
        assert summ.area == pytest.approx(4.0)

    def test_bad_inputs(self):
        alt = np.ones((2, 2))
        with pytest.raises(InputError):
            catchment_summary(alt, 1.0, np.zeros((2, 2), bool), NetLocation(1, 0.0))
        with pytest.raises(InputError):
            catchment_summary(alt, -1.0, np.ones((2, 2), bool), NetLocation(1, 0.0))
        bad = alt.copy()
        bad[0, 0] = np.nan
        with pytest.raises(InputError):
            catchment_summary(bad, 1.0, np.ones((2, 2), bool), NetLocation(1, 0.0))


class TestGeometryHelpers:
    def test_point_at_endpoints(self, y_net):
        np.testing.assert_allclose(y_net.point_at(NetLocation(1, 0.0)), [0.0, 0.0])
        np.testing.assert_allclose(y_net.point_at(NetLocation(1, 10.0)), [10.0, 0.0])
        np.testing.assert_allclose(y_net.point_at(NetLocation(2, 6.0)), [10.0, 6.0])

    def test_snap_finds_nearest(self, y_net):
        loc = snap_to_network(y_net, (10.05, 6.0), max_distance_km=0.1)
        assert loc.segment == 2
        assert loc.offset == pytest.approx(6.0, abs=1e-6)

    def test_snap_tolerance(self, y_net):
        with pytest.raises(InputError):
            snap_to_network(y_net, (50.0, 50.0), max_distance_km=0.1)


def test_file_round_trip(tmp_path, y_net):
    from riverextremes.network import load_network, save_network

    path = tmp_path / "net.json"
    save_network(y_net, path)
    loaded = load_network(path)
    assert len(loaded.segments) == 3
    assert river_distance(
        loaded, NetLocation(2, 5.0), NetLocation(3, 8.0)
    ) == pytest.approx(13.0)
