"""Face-detector evasion research toolkit.

Submodules:
  image     normalized raster images, PNG I/O, alpha handling
  cascade   from-scratch Viola-Jones Haar cascade detector
  rng       platform-stable seeded random streams
  shapes    randomized cosmetic shape generation and rasterization
  campaign  perturb/re-detect search loop and key-region analysis
  cloak     dual-layer alpha-transparency attack optimizer
  clients   local and remote detector adapters
  cli       command-line entry point
"""

__version__ = "0.1.0"
