"""
The toy task: why the non-visual branch matters
===============================================

Images are 2x2 grids of binary glyphs; the label is the glyph at a
queried grid position. The queried index reaches the model only through
a small FC branch whose output is broadcast-added onto the convolutional
features, exactly how the fusion op injects its template term. Training
once with the branch and once with it zeroed makes its contribution
visible: without the index, the best an image-only model can do is bet
on the most frequent glyph in the grid, which caps it near 0.5.

This runs 10 epochs instead of the full 20, so expect roughly 0.93
against 0.50 after about two minutes; the test suite runs the complete
protocol.
"""

from asymfuse import ToyTrainConfig, heldout_set, locality_rate, toy_train

config = ToyTrainConfig(seed=0, n_test=500, epochs=10)

print("training with the index branch...")
result = toy_train(config)
for epoch, loss in enumerate(result.train_curve):
    bar = "#" * int(40 * loss / result.train_curve[0])
    print(f"  epoch {epoch:2d} loss {loss:.4f} {bar}")
print(f"test accuracy: {result.test_accuracy:.3f}")

rate = locality_rate(result.model, heldout_set(config))
print(f"queried quadrant carries the strongest fused response in "
      f"{rate:.1%} of test samples")

print("\ntraining again with the branch zeroed...")
ablated = toy_train(ToyTrainConfig(seed=0, n_test=500, epochs=10,
                                   ablate_index=True))
print(f"ablated test accuracy: {ablated.test_accuracy:.3f} (chance is 0.25)")
print(f"\naccuracy gap attributable to the branch: "
      f"{result.test_accuracy - ablated.test_accuracy:+.3f}")
