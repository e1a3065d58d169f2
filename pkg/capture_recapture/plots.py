"""Static SVG histograms of posterior draws"""
import logging

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from .posterior import histogram  # noqa: E402

logger = logging.getLogger(__name__)

# fixed element ids and no timestamp, so identical draws give identical files
matplotlib.rcParams['svg.hashsalt'] = 'trsestimate'


def histogram_svg(series, path, xlabel='N'):
    """
    Write Freedman-Diaconis histograms of one or more draw sequences to an
    SVG file. series maps a label to its draws.
    """
    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3.2), squeeze=False)
    for ax, (label, draws) in zip(axes[0], series.items()):
        bins = histogram(draws)
        ax.bar(bins['bin_left'], bins['density'], width=bins['bin_right'] - bins['bin_left'],
               align='edge', color='#4c72b0', edgecolor='white', linewidth=0.3)
        ax.set_title(label)
        ax.set_xlabel(xlabel if len(series) == 1 else label)
        ax.set_ylabel('density')
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"Wrote histogram figure {path}")
    return path
