"""edcarb: carbon-aware co-design and operations toolkit for edge data centers.

Subpackages cover the three optimization layers plus shared plumbing:

- carbon_model: embodied/operational carbon arithmetic and the carbon-delay product
- accelerator_model: analytic area/latency/traffic model for PE-array accelerators
- design_explorer: genetic-algorithm design-space search with exhaustive oracle
- edc_scheduler: multi-DNN layer-splitting scheduler with CI-adaptive power caps
- runtime_sim: discrete-step execution simulator with carbon accounting
- cli_io / cli: configuration, trace/profile ingestion, artifact serialization
"""

__version__ = "0.1.0"
