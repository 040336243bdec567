"""Toy neural network whose hidden units are the players of a cooperative game."""

from .attack import AttackConfig, draw_targets, pgd_attack
from .data import GroupedDataset, generate_dataset
from .game import (
    DEFAULT_ATTACK,
    DEFAULT_FIXTURE,
    METRICS,
    NeuronFixture,
    NeuronOracle,
    bake_masks,
    build_fixture,
    load_bundle,
    make_neuron_game,
    save_bundle,
)
from .masking import MaskMismatchError, MeanMask, compute_masks, masked_forward
from .metrics import (
    attack_success_rate,
    group_accuracies,
    metric_accuracy,
    metric_adversarial,
    metric_class_recall,
    metric_group_fairness,
)
from .network import NeuronNetwork, TrainingDivergedError, init_network, train
from .repair import REPAIR_MODES, repair_fixture, repair_report, select_players
