"""Interpretable white-box adversarial examples guided by deep Taylor decomposition.

A small float64 numpy engine (dense/conv/pool networks, reverse-mode input
gradients, training), deep Taylor relevance maps, the DI-AA attack with
FGSM/BIM/PGD baselines, and a benchmark harness with a CLI.
"""

from .attacks import AttackConfig, AttackOutcome, ae_gen, attack_objective, bim, clip_box, di_aa, fgsm, pgd
from .data import Dataset, load_dataset
from .dtd import RelevanceMap, dtd_relevance, sort_saliency
from .harness import export_saliency, hyperparameter_sweep, run_attack_suite, transfer_evaluate
from .metrics import lp_norms
from .network import Network, fold_batchnorm, load_model, mlp, mnist_convnet, save_model
from .tensor import ForwardTrace, forward, input_gradient, softmax_probs
from .training import TrainConfig, adversarial_train, evaluate_accuracy, train

__version__ = "0.1.0"
