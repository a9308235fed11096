"""The tiny neural network stack end to end.

Trains the occupancy cell classifier, verifies its gradients against
finite differences, then compresses it twice over: int8 quantization
and magnitude pruning, reporting the accuracy cost of each step.
"""

import numpy as np

from edgedrive.nn import (
    gradient_check,
    mlp_forward,
    prune_by_magnitude,
    quantize_mlp,
    quantized_mlp_forward,
)
from edgedrive.perception import synthetic_patches, train_cell_classifier


def accuracy_pct(scores, targets):
    labels = (np.asarray(scores).reshape(-1) >= 0.5).astype(float)
    return 100.0 * float(np.mean(labels == targets))


def main():
    print("training the 9 -> 16 -> 1 occupancy cell classifier")
    model = train_cell_classifier(seed=0)
    x_hold, t_hold = synthetic_patches(3000, np.random.default_rng(777))

    rng = np.random.default_rng(1)
    x_probe = rng.uniform(0.0, 1.0, size=(8, 9))
    t_probe = rng.uniform(0.0, 1.0, size=(8, 1))
    err = gradient_check(model, x_probe, t_probe)
    print(f"gradient check max relative error: {err:.3e}")

    base = accuracy_pct(mlp_forward(model, x_hold), t_hold)
    print(f"held-out accuracy, full precision: {base:.2f}%")

    quantized = quantize_mlp(model)
    q_acc = accuracy_pct(quantized_mlp_forward(quantized, x_hold), t_hold)
    weights = sum(layer.weights.size for layer in model.layers)
    biases = sum(layer.bias.size for layer in model.layers)
    fp32_bytes = 4 * (weights + biases)
    int8_bytes = weights + 4 * biases
    print(
        f"int8 quantization: {q_acc:.2f}% "
        f"({fp32_bytes} weight bytes down to about {int8_bytes})"
    )

    print()
    print(f"{'prune frac':>10}{'achieved':>10}{'accuracy':>10}")
    for fraction in (0.1, 0.3, 0.5, 0.7):
        pruned, achieved = prune_by_magnitude(model, fraction)
        acc = accuracy_pct(mlp_forward(pruned, x_hold), t_hold)
        print(f"{fraction:>10.1f}{achieved:>10.3f}{acc:>9.2f}%")
    print("multiply-accumulate work falls with each zeroed weight; the")
    print("mask keeps pruned weights at zero through further training")


if __name__ == "__main__":
    main()
