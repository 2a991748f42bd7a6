"""
ContrastGuard - Fault Injection Detection and Recovery Testbed

Trains a small image classifier with contrastive learning, simulates
parameter-tampering attacks on it, detects them from single-batch
contrastive loss, and repairs the model with a few hundred images.
"""

__version__ = "0.1.0"
