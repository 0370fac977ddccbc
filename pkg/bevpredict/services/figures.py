"""
Plotly figures for training and evaluation runs
"""

import logging
from pathlib import Path
from typing import Union

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)


def loss_figure(loss_log: pd.DataFrame) -> go.Figure:
    """Per-step and running MSE against optimizer step"""

    long = loss_log.melt(id_vars="step", value_vars=["loss", "running_loss"],
                         var_name="series", value_name="mse")
    fig = px.line(
        long,
        x="step",
        y="mse",
        color="series",
        title="Training Loss",
        labels={"step": "Step", "mse": "MSE", "series": ""},
        color_discrete_map={"loss": "#9ecae1", "running_loss": "#08519c"}
    )
    fig.update_layout(margin=dict(l=20, r=20, t=40, b=20))
    return fig


def horizon_figure(report: pd.DataFrame) -> go.Figure:
    """Grouped eps_x / eps_y bars per horizon (report rows from `report_frame`)"""

    per_horizon = report[report["horizon_s"] != "all"]
    long = per_horizon.melt(id_vars="horizon_s", value_vars=["eps_x", "eps_y"],
                            var_name="axis", value_name="error_m")
    fig = px.bar(
        long,
        x="horizon_s",
        y="error_m",
        color="axis",
        barmode="group",
        title="Prediction Error by Horizon",
        labels={"horizon_s": "Horizon (s)", "error_m": "Mean absolute error (m)", "axis": ""},
        color_discrete_map={"eps_x": "#007bff", "eps_y": "#dc3545"}
    )
    fig.update_layout(margin=dict(l=20, r=20, t=40, b=20))
    return fig


def write_figure(fig: go.Figure, path: Union[str, Path]) -> None:
    """Standalone HTML with the plotly bundle inlined"""

    fig.write_html(str(path), include_plotlyjs=True)
    logger.info(f"Figure written to {path}")
