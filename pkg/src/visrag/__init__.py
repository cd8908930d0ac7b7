"""Retrieval-augmented generation of visualization scripts.

Pipeline: chunk docs (:mod:`.corpus`), embed and index them (:mod:`.vecindex`),
decompose a request (:mod:`.planner`), retrieve and generate
(:mod:`.generator`), run and repair (:mod:`.executor`, :mod:`.orchestrator`),
then score the images (:mod:`.metrics`, :mod:`.bench`).
"""

__version__ = "0.1.0"
