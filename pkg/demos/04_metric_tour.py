"""Each evaluation metric on inputs small enough to check by hand."""
import numpy as np

from ldmlab.metrics import (
    GaussianStats,
    RetrievalPool,
    binary_auroc,
    bleu4,
    chexpert_at_10,
    fact_ent,
    fact_entnli,
    fit_gaussian,
    frechet_distance,
    image_text_retrieve,
    label_f1,
    ms_ssim,
    retrieval_precision_at_k,
    rouge_l,
)

rng = np.random.default_rng(0)

print("Frechet distance")
a = GaussianStats(np.array([0.0]), np.array([[1.0]]))
print(f"  N(0,1) vs N(1,1): {frechet_distance(a, GaussianStats(np.array([1.0]), np.array([[1.0]]))):.6f}")
print(f"  N(0,1) vs N(0,4): {frechet_distance(a, GaussianStats(np.array([0.0]), np.array([[4.0]]))):.6f}")
x, y = rng.standard_normal((5000, 4)), rng.standard_normal((5000, 4))
print(f"  one sample against itself: {frechet_distance(fit_gaussian(x), fit_gaussian(x)):.2e}")
print(f"  two independent samples of N(0, I4), n=5000: {frechet_distance(fit_gaussian(x), fit_gaussian(y)):.4f}")

print("\nMS-SSIM")
img = rng.random((176, 176))
noisy = np.clip(img + 0.1 * rng.standard_normal(img.shape), 0, 1)
print(f"  self {ms_ssim(img, img):.6f}, light noise {ms_ssim(img, noisy):.3f}, "
      f"independent noise {ms_ssim(img, rng.random(img.shape)):.3f}")

print("\nAUROC")
print(f"  scores (.1 .4 .35 .8) vs truth (0 0 1 1): {binary_auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])}")

print("\nRetrieval precision@k")
centres = rng.standard_normal((3, 8))
ql, cl = rng.integers(0, 3, 50), rng.integers(0, 3, 200)
pool = RetrievalPool(centres[ql] + rng.standard_normal((50, 8)), ql, centres[cl] + rng.standard_normal((200, 8)), cl)
print(f"  clustered embeddings: {retrieval_precision_at_k(pool, ks=(5, 10, 50))} (chance ~0.33)")
texts = ["No acute cardiopulmonary process.", "Small left effusion.", "Cardiomegaly."]
emb = np.eye(3)
print(f"  nearest impression to the effusion embedding: {image_text_retrieve(emb[1], emb, texts)[0][0]!r}")

print("\nReport-text scores")
gen, ref = "Cardiomegaly. Small left effusion.", "Cardiomegaly. Mild pneumonia."
print(f"  fact_ent {fact_ent(gen, ref):.3f}, label_f1 {label_f1(gen, ref):.3f}, "
      f"ROUGE-L {rouge_l(gen, ref):.3f}, BLEU-4 {bleu4(gen, ref):.3f}")
print(f"  'No edema.' vs 'Mild edema.': fact_ent {fact_ent('No edema.', 'Mild edema.'):.1f}, "
      f"fact_entnli {fact_entnli('No edema.', 'Mild edema.'):.1f}")

print("\nCheXpert@10")
labels = np.repeat(np.eye(3, dtype=bool), 20, axis=0)
print(f"  clustered: {chexpert_at_10(labels + 0.05 * rng.standard_normal(labels.shape), labels)[1]:.1f}")
print(f"  random embeddings: {chexpert_at_10(rng.standard_normal((60, 8)), labels)[1]:.1f} (prevalence 33.3)")
