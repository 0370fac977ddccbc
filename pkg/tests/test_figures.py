import pandas as pd

from bevpredict.services.figures import horizon_figure, loss_figure, write_figure


def test_loss_figure_has_both_series():
    log = pd.DataFrame({"step": [1, 2, 3], "loss": [0.3, 0.2, 0.25], "running_loss": [0.3, 0.29, 0.285]})
    fig = loss_figure(log)
    assert sorted(trace.name for trace in fig.data) == ["loss", "running_loss"]


def test_horizon_figure_skips_the_totals_row(tmp_path):
    report = pd.DataFrame({
        "horizon_s": ["0.2", "0.4", "all"],
        "eps_x": [0.1, 0.3, 0.2],
        "eps_y": [0.05, 0.07, 0.06],
        "matched": [4, 4, 8],
        "missed": [0, 0, 0],
        "spurious": [0, 1, 1],
    })
    fig = horizon_figure(report)
    for trace in fig.data:
        assert list(trace.x) == ["0.2", "0.4"]

    path = tmp_path / "horizons.html"
    write_figure(fig, path)
    assert "<html>" in path.read_text()
