"""Feature-grouped adversarial domain adaptation over a privacy-preserving
vertical federated learning protocol.

The package simulates three parties: two active parties A (target domain)
and B (source domain) that hold labels plus a handful of raw features, and
one feature-rich passive party C.  Party C learns per-feature-group
extractors with adversarial domain adaptation and compresses each group
into one scalar, while the active party trains a split logistic regression
over those scalars using additively homomorphic encryption and mutual
noise masking, so that neither side sees the other's private values.
"""

from fedada import phe, nn, grouping, adversarial, secure_lr, protocol
from fedada import oracle, data, metrics

__all__ = [
    "phe",
    "nn",
    "grouping",
    "adversarial",
    "secure_lr",
    "protocol",
    "oracle",
    "data",
    "metrics",
]

__version__ = "0.1.0"
