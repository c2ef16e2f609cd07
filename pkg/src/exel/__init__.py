"""Subgraph importance for graph classifiers by Group Lasso regression of
the graph embedding on node embeddings."""
from .errors import *  # noqa: F401,F403
from .graph import Dataset, Graph, Partition, graph_from_edges, validate_partition
from .partition import bridge_partition, find_bridges, singleton_partition
from .explain import ImportanceReport, explain, explain_node_level
from .solver import RegressionProblem, SolverConfig, Solution, solve

__version__ = "0.1.0"
