"""Joint teacher/student training with KL distillation, then student-only captioning.

Run:  python3 demos/04_train_and_distill.py     (about 10 s)
"""

# %%
from videocap import features, graph, training
from videocap.caption_model import beam_decode, greedy_decode

bundles, records = features.synth_dataset(12, seed=0, T=8)
cfg = training.TrainConfig(epochs=150)
result = training.train(cfg, bundles, records)

# %% the teacher sees C plus the graph, the student only C; the KL pulls them together
kl = result.log.column("kl")
tce = result.log.column("teacher_ce")
for epoch in (1, 10, 50, 150):
    print(f"epoch {epoch:3d}  teacher_ce {tce[epoch - 1]:.4f}  kl {kl[epoch - 1]:.5f}")

# %% inference runs the student alone; the graph counter does not move
before = sum(graph.CALLS.values())
for b, r in list(zip(bundles, records))[:4]:
    print(f"{b.video_id}: {training.infer(result.student, b, result.vocab)!r:40s} ref {r.captions[0]!r}")
print("graph calls during inference:", sum(graph.CALLS.values()) - before)

# %% token accuracy on the training captions
refs = result.data.captions
print("teacher", round(training.token_accuracy(training.teacher_captions(result), refs), 3),
      "student", round(training.token_accuracy(training.student_captions(result), refs), 3))

# %% beam search with beam 1 is greedy; wider beams rank by length-normalised log-prob
C = bundles[0].visual_text_feats
g1 = greedy_decode(C, result.student.decoder)
b1 = beam_decode(C, result.student.decoder, beam_size=1)
b3 = beam_decode(C, result.student.decoder, beam_size=3)
print("greedy == beam1:", g1.tokens == b1.tokens, "| beam3 score", round(b3.score, 4))
