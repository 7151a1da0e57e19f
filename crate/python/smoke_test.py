"""End-to-end check of the Python bindings. Run after `maturin develop`
(or installing the wheel) from crates/python."""

import tempfile

import dmfp

text = dmfp.worked_example()
assert "Private: 1.96, Public: 0 → Private" in text, text

data = dmfp.generate_synthetic(n=900, seed=3)
train, estimate, test = data.split(seed=1)
print(data, len(train), len(estimate), len(test), data.dims)

pipe = dmfp.Pipeline.train(train, estimate, k_v=30, k_p=10, variants=["NoPhi3"], baselines=["majority-vote"])
assert pipe.systems() == ["DMFP", "NoPhi3", "majority-vote"], pipe.systems()

preds = pipe.predict(test)
assert len(preds) == len(test)
assert {p["label"] for p in preds} <= {"private", "public"}
labels = pipe.predict_labels(test, system="majority-vote")

m = dmfp.confusion_metrics(labels, test.labels)
assert 0.0 <= m["accuracy"] <= 100.0

ev = pipe.evaluate(test)
names = [r["meta"]["system"] for r in ev["reports"]]
assert names == ["DMFP", "NoPhi3", "majority-vote"], names
print("DMFP accuracy:", ev["reports"][0]["accuracy"])

with tempfile.TemporaryDirectory() as d:
    pipe.save(d)
    again = dmfp.Pipeline.load(d)
    assert again.predict_labels(test) == pipe.predict_labels(test)
    manifest = test.write(d + "/test")
    assert dmfp.Dataset.load(manifest).ids == test.ids

assert dmfp.majority_vote([0.9, 0.8, 0.1]) == "private"
d = dmfp.fuse([0.9, 0.2, 0.3], [0.8, 0.6, 0.7])
print("fuse:", d)

try:
    dmfp.Pipeline.train(train, estimate, threshold=0.0)
except dmfp.DmfpError as e:
    print("rejected:", e)
else:
    raise AssertionError("threshold 0 must be rejected")

print("smoke test OK")
