"""
Weighted truncated adversarial weight perturbation for graph neural networks.

``root``
    The ``root`` module provides the base option object and the exception hierarchy.

``datasets``
    The ``datasets`` module provides the graph data model, adjacency normalization,
    splits and the synthetic toy datasets.

``parsers``
    The ``parsers`` module provides readers of raw citation datasets.

``nn``
    The ``nn`` module provides the models, the loss, exact gradients and Adam.

``awp``
    The ``awp`` module provides the weight perturbation, the objectives and training.

``analyst``
    The ``analyst`` module provides flatness and generalization diagnostics.

``attacks``
    The ``attacks`` module provides DICE and random edge flips with the evasion
    and poisoning protocols.

``tools``
    The ``tools`` module provides the experiment configuration and routines.

``tui``
    The ``tui`` module provides logging setup and the ``wtawp`` command.

"""
__version__ = "0.1.0"
