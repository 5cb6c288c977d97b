"""Self-training for graph node classification with Banzhaf-ranked pseudo-labels."""
from .graph import Graph, LabelState, Split, load_dataset, save_dataset
from .orchestrator import RunConfig, run, sweep

__all__ = ["Graph", "LabelState", "Split", "load_dataset", "save_dataset", "RunConfig", "run", "sweep"]
__version__ = "0.1.0"
