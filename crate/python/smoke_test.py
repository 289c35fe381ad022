"""Smoke test for the skeleton_attack Python extension.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python
    python3 python/smoke_test.py
"""

import math
import os
import tempfile

import skeleton_attack as sa


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    ds = sa.generate_dataset(class_count=4, samples_per_class=12, frames=16, seed=3)
    check(len(ds) == 48 and ds.class_count == 4, "generate_dataset")
    train_set, val_set, test_set = ds.subset("train"), ds.subset("val"), ds.subset("test")
    check(len(train_set) + len(val_set) + len(test_set) == 48, "splits are exhaustive")

    m = test_set[0]
    check(m.joint_count == sa.JOINT_COUNT and m.frame_count == 16, "motion shape")
    back = sa.Motion.from_json(m.to_json())
    check(back == m, "motion JSON round trip")
    rebuilt = sa.Motion(m.coords(), frame_rate=m.frame_rate, label=m.label)
    check(rebuilt == m, "motion from nested coordinates")
    check(len(m.derivative(2)) == 14, "second derivative has M - 2 frames")

    model = sa.train("linear", train_set, val_set, class_count=4, seed=5, epochs=60)
    acc = model.accuracy(test_set)
    check(acc >= 0.9, f"trained classifier accuracy {acc:.3f}")
    probs = model.forward(m)
    check(abs(sum(probs) - 1.0) < 1e-9 and len(probs) == 4, "forward returns a distribution")

    value, grad = sa.perceptual_loss(m, m)
    check(value == 0.0 and len(grad) == 16 * 25 * 3, "perceptual loss vanishes on identity")
    flat = m.flat()
    flat[10] += 1e-3
    check(sa.perceptual_loss(m, m.with_flat(flat))[0] > 0.0, "perceptual loss detects a nudge")
    abn, _ = sa.abn_loss([0.25] * 4)
    check(math.isclose(abn, -math.log(4)), "abn loss of uniform is -log K")
    check(sa.sa_loss(2, [0.1, 0.2, 0.5, 0.2])[0] == -math.log(0.5), "sa loss")

    correct = [x for x in test_set if model.predict(x) == x.label]
    result = sa.attack(correct[0], model, "ab", max_iterations=80)
    check(result.success, f"AB attack succeeds ({result!r})")
    adv = result.adversarial_motion
    check(model.predict(adv) != result.original_label, "adversarial motion is misclassified")
    check(adv.frame_count == m.frame_count, "attack keeps the frame count")

    results, summary = sa.attack_batch(correct, model, "ab", max_iterations=80)
    check(summary["count"] == len(correct) and summary["success_rate"] >= 0.9, f"batch summary {summary}")
    own = sa.attack(correct[0], model, f"sa:{correct[0].label}")
    check(own.success and own.iterations_used == 0, "SA on the true label succeeds at once")

    wins = [r for r in results if r is not None and r.success]
    originals = [x for x, r in zip(correct, results) if r is not None and r.success]
    report = sa.correlation_report(wins, originals)
    check(len(report["disp_disp"]) == 25, "correlation report")
    stats = sa.deviation_stats(wins)
    check(all(v >= 0 for v in stats["mean"] + stats["std"]), "deviation stats")

    other = sa.train("linear", train_set, val_set, class_count=4, seed=9, epochs=60)
    transfer = sa.transfer_attack(model, [("self", model), ("other", other)], correct, "ab", max_iterations=80)
    check(transfer["targets"][0]["success_rate"] == 1.0, "transfer to the surrogate itself")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        check(sa.Classifier.load(path).forward(m) == probs, "classifier checkpoint round trip")
        ds.save(os.path.join(tmp, "data"))
        check(len(sa.load_dataset(os.path.join(tmp, "data"))) == 48, "dataset directory round trip")

    try:
        sa.attack(m, model, "bogus")
    except sa.SkeletonAttackError as e:
        check("unknown strategy" in str(e), "bad strategy raises SkeletonAttackError")
    else:
        raise AssertionError("bad strategy accepted")
    try:
        sa.Motion.load("/nonexistent/motion.json")
    except OSError:
        check(True, "missing file raises OSError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
