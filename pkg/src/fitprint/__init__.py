"""Targeted black-box fingerprinting of image classifiers.

Modules:

    autograd      reverse-mode autodiff over numpy arrays
    models        CNN / MLP classifiers, training, serialization
    reuse         model-reuse techniques and suites of reused / independent models
    fingerprint   target fingerprints, mappings, testing-sample extraction
    verification  bit error rate, false-claim bound, reuse decision
    attacks       false-claim and removal attacks
    registry      append-only, timestamped store of packages and models
    cli           the ``fitprint`` command
"""

__version__ = "0.1.0"
