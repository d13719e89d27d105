"""Desk-scale experiment drivers, YAML configuration and the command line."""
from .augmentation import AugmentationPlan, AugmentationSplit, run_augmentation_study
from .config import ExperimentConfig, load_config, parse_config
from .desk import DeskBase, DeskConfig, evaluate_pipeline, finetune_and_evaluate, prepare_base, run_finetune_grid
from .render import render_directory
