"""
Tests for the match network: loading, indexing, block counts and transitions
"""

import numpy as np
import pytest

from labornet.graph_core import (
    BipartiteGraph,
    Partition,
    block_edge_counts,
    degrees,
    degree_histogram,
    graph_from_panel,
    load_edge_list,
    read_partition,
    transition_change_rates,
    write_edge_list,
    write_partition,
)


def test_load_sample_edges(sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=5)

    # jD has only two workers and is dropped
    assert graph.job_ids == ('jA', 'jB', 'jC')
    assert graph.worker_ids[:3] == ('w1', 'w10', 'w2')
    assert graph.n_workers == 10
    assert graph.n_edges == 16
    assert graph.total_edges == 18
    assert graph.job_degrees.tolist() == [7, 5, 6]

    index = graph.worker_index()
    assert graph.worker_degrees[index['w1']] == 3
    assert graph.worker_degrees[index['w8']] == 2
    assert graph.worker_degrees[index['w10']] == 1
    worker_degrees, job_degrees = degrees(graph)
    assert worker_degrees.sum() == job_degrees.sum() == graph.total_edges


def test_load_keeps_small_jobs_without_threshold(sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=1)

    assert graph.n_jobs == 4
    assert graph.total_edges == 20


def test_degree_sums_match_edge_total(sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=1)

    assert graph.worker_degrees.sum() == graph.job_degrees.sum() == graph.total_edges


@pytest.mark.parametrize(
    "body, message",
    [
        ("worker_id,job_id\na,x\n,y\n", "line 3"),
        ("worker_id,job_id,count\na,x,1\nb,y,0\nc,z,2\n", "line 3"),
        ("worker_id,job_id,count\na,x,1.5\n", "line 2"),
        ("worker_id,job_id\n", "empty graph"),
        ("worker,job\na,x\n", "header"),
    ],
)
def test_load_rejects_bad_files(tmp_path, body, message):
    path = tmp_path / 'edges.csv'
    path.write_text(body, encoding='utf-8')

    with pytest.raises(ValueError, match=message):
        load_edge_list(str(path), min_job_workers=1)


def test_load_empty_after_filtering(tmp_path):
    path = tmp_path / 'edges.csv'
    path.write_text("worker_id,job_id\na,x\nb,x\n", encoding='utf-8')

    with pytest.raises(ValueError, match="empty graph"):
        load_edge_list(str(path), min_job_workers=5)


def test_load_missing_file(tmp_path):
    with pytest.raises(ValueError, match="not found"):
        load_edge_list(str(tmp_path / 'none.csv'))


def test_from_pairs_merges_duplicates_and_interns_sorted():
    graph = BipartiteGraph.from_pairs(['b', 'a', 'b', 'b'], ['y', 'x', 'y', 'x'], all_jobs=['z'])

    assert graph.worker_ids == ('a', 'b')
    assert graph.job_ids == ('x', 'y', 'z')
    assert graph.edge_counts.tolist() == [1, 1, 2]
    assert graph.job_degrees.tolist() == [2, 2, 0]


def test_constructor_rejects_unmerged_edges():
    with pytest.raises(ValueError, match="Duplicate"):
        BipartiteGraph(('a',), ('x',), np.array([0, 0]), np.array([0, 0]), np.array([1, 1]))


def test_block_edge_counts_sum_to_total(sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=5)
    rng = np.random.default_rng(0)
    partition = Partition(rng.integers(0, 3, graph.n_workers), rng.integers(0, 2, graph.n_jobs), 3, 2)

    blocks = block_edge_counts(graph, partition)

    assert blocks.shape == (3, 2)
    assert blocks.sum() == graph.total_edges


def test_block_edge_counts_by_hand():
    graph = BipartiteGraph.from_pairs(['a', 'a', 'b', 'c'], ['x', 'y', 'y', 'y'], counts=[2, 1, 3, 1])
    partition = Partition(np.array([0, 0, 1]), np.array([0, 1]))

    assert block_edge_counts(graph, partition).tolist() == [[2, 4], [0, 1]]


def test_partition_shape_checks(sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=5)

    with pytest.raises(ValueError, match="Partition covers"):
        block_edge_counts(graph, Partition(np.zeros(3, dtype=int), np.zeros(3, dtype=int)))
    with pytest.raises(ValueError, match="exceeds"):
        Partition(np.array([0, 2]), np.array([0]), n_worker_groups=2)


def test_partition_compact_and_labels():
    partition = Partition(np.array([4, 1, 4]), np.array([2, 2]), 5, 3).compact()

    assert partition.worker_groups.tolist() == [1, 0, 1]
    assert partition.shape == (2, 1)
    assert Partition.from_labels(['b', 'a', 'b'], [7]).worker_groups.tolist() == [1, 0, 1]


def test_partition_file_written_then_read(tmp_path, sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=5)
    partition = Partition(np.arange(graph.n_workers) % 2, np.array([1, 0, 1]))

    path = write_partition(graph, partition, tmp_path / 'partition.csv')
    loaded = read_partition(str(path), graph)

    assert loaded.worker_groups.tolist() == partition.worker_groups.tolist()
    assert loaded.job_groups.tolist() == [1, 0, 1]


def test_edge_list_snapshot_is_loadable(tmp_path, sample_edges_path):
    graph = load_edge_list(str(sample_edges_path), min_job_workers=5)

    path = write_edge_list(graph, tmp_path / 'edges.csv')
    again = load_edge_list(str(path), min_job_workers=1)

    assert again.worker_ids == graph.worker_ids
    assert again.edge_counts.tolist() == graph.edge_counts.tolist()


def test_degree_histogram():
    frame = degree_histogram(np.array([1, 3, 3, 1, 1]))

    assert frame['degree'].tolist() == [1, 3]
    assert frame['nodes'].tolist() == [3, 2]


def _transition_panel(panel_factory):
    rows = [
        ('1', 1, 0, 1, 1.0, 1), ('1', 2, 0, 2, 1.0, 1), ('1', 3, 0, 2, 1.0, 1),
        ('2', 1, 0, 1, 1.0, 1), ('2', 2, 0, 1, 1.0, 1), ('2', 3, 0, 1, 1.0, 0),
        ('3', 1, 0, 1, 1.0, 1), ('3', 2, 0, 0, None, 1), ('3', 3, 0, 1, 1.0, 1),
    ]
    extra = {
        'job_id': ['a', 'b', 'c', 'a', 'd', 'd', 'a', None, 'a'],
        'sector': [1, 1, 2, 1, 1, 1, 1, None, 1],
        'firm': ['f', 'g', 'g', 'f', 'f', 'f', 'f', None, 'f'],
    }
    return panel_factory(rows, extra)


def test_transition_change_rates(panel_factory):
    panel = _transition_panel(panel_factory)

    frame = transition_change_rates(panel, ['gamma', 'sector'], firm_column='firm').set_index('label')

    # job changes: worker 1 (a->b, b->c) and worker 2 (a->d); worker 3 passes through nonemployment
    assert frame.loc['gamma', 'events'] == 3
    assert frame.loc['gamma', 'changes'] == 1
    assert frame.loc['gamma', 'rate'] == pytest.approx(1 / 3)
    assert frame.loc['sector', 'rate'] == pytest.approx(1 / 3)
    assert frame.loc['gamma', 'rate_firm_change'] == pytest.approx(1.0)
    assert frame.loc['gamma', 'rate_same_firm'] == pytest.approx(0.0)


def test_transition_rates_without_job_changes_are_empty(panel_factory):
    rows = [('1', 1, 0, 1, 1.0, 1), ('1', 2, 0, 1, 1.0, 0), ('2', 1, 1, 2, 2.0, 1), ('2', 2, 1, 0, None, 1)]
    panel = panel_factory(rows, {'job_id': ['a', 'a', 'b', None], 'firm': ['f', 'f', 'g', None]})

    frame = transition_change_rates(panel, ['gamma'], firm_column='firm')

    assert frame.empty
    assert list(frame.columns) == ['label', 'events', 'changes', 'rate', 'rate_firm_change', 'rate_same_firm']


def test_transition_rates_need_job_ids(panel_factory):
    panel = panel_factory([('1', 1, 0, 1, 1.0, 1)])

    with pytest.raises(ValueError, match="job_id"):
        transition_change_rates(panel, ['gamma'])


def test_graph_from_panel_counts_spells_once(panel_factory):
    panel = _transition_panel(panel_factory)

    graph = graph_from_panel(panel)

    # worker 2's spell in d persists into period 3 without a new separation
    assert graph.total_edges == 7
    index = graph.job_index()
    assert graph.job_degrees[index['a']] == 4
