"""Recompute every average in the published per-fold TSS table.

    python scripts/table_arithmetic.py

Prints the recomputed table and flags cells where the printed average differs
from the rounded mean of its folds.
"""
from artss.pipeline import tss_table_csv
from artss.regress_eval import fold_report, round_half_up

PUBLISHED = [
    ("VGG16", {"MAE": ([3.98, 3.38, 3.20], "3.52"), "RMSE": ([4.5, 4.00, 3.90], "4.13"),
               "Huber Loss": ([3.64, 3.10, 3.01], "3.25")}),
    ("VGG19", {"MAE": ([3.02, 2.96, 2.98], "2.99"), "RMSE": ([3.50, 3.45, 3.40], "3.45"),
               "Huber Loss": ([3.14, 2.93, 2.84], "2.97")}),
    ("EfficientNetB0", {"MAE": ([9.00, 7.95, 8.26], "8.40"), "RMSE": ([9.8, 8.60, 8.91], "9.10"),
                        "Huber Loss": ([8.70, 7.71, 8.11], "8.17")}),
    ("ResNet50", {"MAE": ([7.95, 5.9258, 5.025], "6.30"), "RMSE": ([8.20, 6.5, 7.61], "7.43"),
                  "Huber Loss": ([7.81, 5.83, 5.10], "6.24")}),
    ("DenseNet201", {"MAE": ([7.61, 7.53, 7.65], "7.59"), "RMSE": ([8.13, 8.38, 6.42], "7.64"),
                     "Huber Loss": ([6.43, 6.38, 6.42], "6.41")}),
    ("Vision Transformer", {"MAE": ([0.99, 0.92, 0.94], "0.95"), "RMSE": ([0.89, 0.94, 0.98], "0.93"),
                            "Huber Loss": ([0.85, 0.87, 0.89], "0.87")}),
]


def main():
    rows, notes = [], []
    for model, metrics in PUBLISHED:
        block = fold_report({m: v[0] for m, v in metrics.items()}, model)
        rows += block
        for r in block:
            printed = metrics[r.metric][1]
            got = str(round_half_up(r.average))
            if got != printed:
                notes.append(f"{model} {r.metric}: mean {r.average:.4f} rounds to {got}, printed {printed}")
    print(tss_table_csv(rows), end="")
    print(f"\n{len(notes)} printed averages differ from the rounded fold mean:")
    for n in notes:
        print("  " + n)


if __name__ == "__main__":
    main()
