"""Defect texture generation engine for railway components.

Subpackages cover the full pipeline: shared domain types and the defect
library (`model`), the instruction-dataset forge (`forge`), prompt tuning
(`tuner`), generation-backend dispatch (`gateway`), texture standardization
(`processor`), token/latency/cost metering (`metering`), usability scoring
(`sus`), and the HTTP service + CLI (`service`, `cli`).
"""

__version__ = "0.1.0"
