"""Multi-label federated learning simulator.

Clustering-based client allocation (k-modes over label vectors), label-adaptive
aggregation (FLAG) alongside FedAvg, local-only and centralized baselines, and
the mAP-based evaluation and convergence protocol.
"""

from .data import MultiLabelDataset, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .errors import (
    ConfigurationError,
    DegenerateDistributionError,
    DegenerateWeightsError,
    DimensionError,
    DivergenceError,
    DomainError,
    FlagFedError,
    IntegrityError,
    ParseError,
    UndefinedMetricError,
)
from .federate import (
    AggregationStrategy,
    FederationState,
    LabelStats,
    aggregate_fedavg,
    aggregate_flag,
    label_stats,
    label_weight,
    run_federation,
)
from .kmodes import KModesModel
from .metrics import ConvergenceResult, RoundRecord, average_precision, convergence, mean_average_precision
from .model import AslConfig, ModelParams, Shape, TrainConfig
from .partition import ClientShard, HeterogeneityReport, cmda_split, heterogeneity_report, random_split

__version__ = "0.1.0"
