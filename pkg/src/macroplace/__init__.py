"""Diffusion-based macro placement toolkit.

Submodules:
  netlist    hypergraph model, Bookshelf-subset parsing, normalization
  metrics    HPWL, RUDY congestion, overlap, composite/relative energy
  diffusion  noise schedules and DDPM/DDIM steps
  autodiff   minimal reverse-mode tape over numpy
  scorenet   the noise-prediction network and its training loop
  guidance   constraint potentials and the guided sampler
  syngen     process-aware synthetic netlist generation
  transfer   buffer-based fine-tuning on a target netlist
  render     deterministic SVG output
  cli        command-line entry points
"""

from .config import VERSION as __version__

__all__ = ["__version__"]
