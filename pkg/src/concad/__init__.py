"""Sleep-apnea segment classification from single-lead ECG.

Three feature extractors (raw ECG, RR intervals, R-peak envelope) are fused
by a softmax gate and trained jointly with cross-entropy and a supervised
contrastive loss. Everything from convolutions to the optimizer runs on
numpy with hand-written backward passes.
"""

__version__ = "0.1.0"
