import csv

from isoguard import report
from isoguard.history import check_ra, from_json
from isoguard.schedules import appendix_a_history


def test_write_summary_union_header(tmp_path):
    p = report.write_summary(str(tmp_path / "s.csv"), [{"a": 1}, {"b": 2, "a": 3}])
    rows = list(csv.DictReader(open(p)))
    assert rows == [{"a": "1", "b": ""}, {"a": "3", "b": "2"}]


def test_plots_write_png(tmp_path):
    d = report.ensure_dir(str(tmp_path / "figs"))
    paths = [
        report.plot_depth_profile([1, 3, 2], f"{d}/depth.png"),
        report.plot_walks([{"seed": 1, "states": 5, "restarts": 2, "violations": 0}], f"{d}/walks.png"),
    ]
    r = check_ra(from_json(appendix_a_history()))
    paths.append(report.plot_dependency_graph(r.graph, f"{d}/g.png", r.cycle))
    for p in paths:
        with open(p, "rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
