"""
Plotting service
Статические SVG-графики: кривые, огибающая min/max, легенда
"""

import io
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from growthcast.utils.helpers import atomic_write_bytes  # noqa: E402

# Холст 1200x600 (SVG в пунктах: 72 на дюйм)
CANVAS_INCHES = (1200 / 72, 600 / 72)

# Без даты и случайных id в SVG, чтобы байты были воспроизводимы
SVG_RC = {"svg.hashsalt": "growthcast", "svg.fonttype": "path"}

SERIES_STYLES = {
    "actual": {"color": "black", "linewidth": 2.0},
    "mean prediction": {"color": "tab:blue", "linewidth": 1.8},
    "continuation": {"color": "tab:red", "linewidth": 1.8, "linestyle": "--"},
}


def plot_curves(
    path: Union[str, Path],
    title: str,
    series: Dict[str, pd.Series],
    band: Optional[Tuple[pd.Series, pd.Series]] = None,
    ylabel: str = "cases",
) -> Path:
    """Нарисовать кривые по датам и записать SVG"""
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=CANVAS_INCHES)
        try:
            if band is not None:
                low, high = band
                ax.fill_between(low.index, low.to_numpy(), high.to_numpy(),
                                color="tab:blue", alpha=0.2, label="min/max envelope")
            for name, values in series.items():
                ax.plot(values.index, values.to_numpy(), label=name, **SERIES_STYLES.get(name, {}))
            ax.set_title(title)
            ax.set_xlabel("date")
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
            ax.legend(loc="upper left")
            fig.autofmt_xdate()

            buffer = io.BytesIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return atomic_write_bytes(path, buffer.getvalue())
