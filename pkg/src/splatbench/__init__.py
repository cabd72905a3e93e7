"""Desk-scale Gaussian-splat scene workbench.

Library layout:

- ``splatbench.scene``  -- splat collection, semantic codebook, scene file IO
- ``splatbench.render`` -- differentiable CPU rasterizer, metrics, training
- ``splatbench.sim``    -- synthetic box-world simulator (raycast RGB-D, agent)
- ``splatbench.detect`` -- single-view change detection
- ``splatbench.update`` -- active multi-view collection and splat editing
- ``splatbench.query``  -- semantic querying, 3D localization, 2D semantic maps
- ``splatbench.nav``    -- fast-marching navigation and SPL/SR metrics
- ``splatbench.bench``  -- task generation, episode execution, reporting
"""

__version__ = "0.1.0"
