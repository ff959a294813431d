"""Batch figure rendering for zolqr experiment artifacts.

A thin file-to-file consumer of the documented CSV schemas and the JSON
manifest; no experiment quantities are recomputed here beyond the sweep's
least-squares slope line.
"""

from zolqr_plots.figures import PlotError, PlotJob, plot_sweep, plot_trajectories

__version__ = "0.1.0"
