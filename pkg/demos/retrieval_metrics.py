"""Ranking and scoring a handful of hand-made descriptors."""
import numpy as np

from mbanet.evaluation import average_precisions, cmc, cosine_distances, cosine_rank, mean_ap, rank1

# Three gallery identities, two probes. Descriptors are 2-D so the geometry is easy to picture.
gallery = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]])
g_labels = np.array([10, 20, 30])
queries = np.array([[0.9, 0.1], [0.3, 0.7]])
q_labels = np.array([10, 30])

print("cosine distances\n", cosine_distances(queries, gallery).round(3))
ranking = cosine_rank(queries, gallery)
print("ranking", ranking.tolist())

# The second probe's true match sits at rank 3, so its AP is 1/3.
print("per-query AP", [round(a, 3) for a in average_precisions(ranking, q_labels, g_labels)])
print("rank-1", rank1(ranking, q_labels, g_labels), " mAP", round(mean_ap(ranking, q_labels, g_labels), 4))
print("CMC", cmc(ranking, q_labels, g_labels, k=3))

# Cosine distance ignores length: stretching descriptors leaves the ranking alone.
assert np.array_equal(cosine_rank(queries * 5, gallery * [[2.0], [0.1], [9.0]]), ranking)

# Distractors carry label -1 and can only push true matches further down.
rng = np.random.default_rng(0)
noisy = np.vstack([gallery, rng.normal(size=(20, 2))])
noisy_labels = np.concatenate([g_labels, -np.ones(20, dtype=int)])
r2 = cosine_rank(queries, noisy)
print("with 20 distractors: rank-1", rank1(r2, q_labels, noisy_labels),
      " mAP", round(mean_ap(r2, q_labels, noisy_labels), 4))
