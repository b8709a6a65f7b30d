"""Federated learning simulator with loss-trend deviation detection (FL-LTD)."""
from .adversary import AttackSpec, attack_loss, attack_update
from .config import ConfigError, ExperimentConfig, parse_config
from .data import Dataset, PartitionSpec, gen_synthetic, load_idx, partition_noniid
from .detection import DetectorConfig, LossTrendDetector, detector_step
from .estimators import FederatedClassifier, SoftmaxRegression
from .federation import aggregate_fedavg, aggregate_ltd, run_experiment, run_round
from .model import ModelArch

__version__ = "0.1.0"
